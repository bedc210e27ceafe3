#pragma once

// Voxel volume container and its little-endian binary file format.
//
// Layout on disk:
//   "CBCTVOL1"            8 bytes
//   nx, ny, nz            uint32 LE each
//   sx, sy, sz            float32 LE each (mm per voxel)
//   payload               nx*ny*nz int16 LE, index = x + nx*(y + ny*z)
//
// Axis convention: x lateral (sagittal index, increasing toward the
// patient's left), y anterior-posterior, z vertical (axial index, z = 0 is
// the most cranial slice).

#include <toothbox/error.hpp>

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

namespace toothbox {

struct Dims {
  std::uint32_t nx = 1;
  std::uint32_t ny = 1;
  std::uint32_t nz = 1;

  [[nodiscard]] std::size_t count() const {
    return std::size_t{nx} * std::size_t{ny} * std::size_t{nz};
  }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct Spacing {
  float sx = 1.0f;
  float sy = 1.0f;
  float sz = 1.0f;

  friend bool operator==(const Spacing&, const Spacing&) = default;
};

class VoxelVolume {
 public:
  VoxelVolume() : VoxelVolume(Dims{}, Spacing{}) {}

  VoxelVolume(Dims dims, Spacing spacing, std::int16_t fill = 0)
      : dims_(dims), spacing_(spacing) {
    validate_header(dims_, spacing_);
    data_.assign(dims_.count(), fill);
  }

  VoxelVolume(Dims dims, Spacing spacing, std::vector<std::int16_t> data)
      : dims_(dims), spacing_(spacing), data_(std::move(data)) {
    validate_header(dims_, spacing_);
    if (data_.size() != dims_.count()) {
      throw ValidationError("voxel data length " + std::to_string(data_.size()) +
                            " does not match dims product " +
                            std::to_string(dims_.count()));
    }
  }

  [[nodiscard]] const Dims& dims() const { return dims_; }
  [[nodiscard]] const Spacing& spacing() const { return spacing_; }
  [[nodiscard]] int nx() const { return static_cast<int>(dims_.nx); }
  [[nodiscard]] int ny() const { return static_cast<int>(dims_.ny); }
  [[nodiscard]] int nz() const { return static_cast<int>(dims_.nz); }

  [[nodiscard]] std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           std::size_t{dims_.nx} *
               (static_cast<std::size_t>(y) + std::size_t{dims_.ny} * static_cast<std::size_t>(z));
  }

  [[nodiscard]] bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < nx() && y < ny() && z < nz();
  }

  [[nodiscard]] std::int16_t at(int x, int y, int z) const { return data_[index(x, y, z)]; }
  std::int16_t& at(int x, int y, int z) { return data_[index(x, y, z)]; }

  [[nodiscard]] const std::vector<std::int16_t>& data() const { return data_; }
  std::vector<std::int16_t>& data() { return data_; }

  friend bool operator==(const VoxelVolume&, const VoxelVolume&) = default;

  static void validate_header(const Dims& d, const Spacing& s) {
    if (d.nx < 1) throw ValidationError("dims.nx must be >= 1");
    if (d.ny < 1) throw ValidationError("dims.ny must be >= 1");
    if (d.nz < 1) throw ValidationError("dims.nz must be >= 1");
    if (!(s.sx > 0.0f)) throw ValidationError("spacing.sx must be > 0");
    if (!(s.sy > 0.0f)) throw ValidationError("spacing.sy must be > 0");
    if (!(s.sz > 0.0f)) throw ValidationError("spacing.sz must be > 0");
  }

 private:
  Dims dims_;
  Spacing spacing_;
  std::vector<std::int16_t> data_;
};

inline constexpr std::string_view kVolumeMagic = "CBCTVOL1";
inline constexpr std::size_t kVolumeHeaderBytes = 8 + 3 * 4 + 3 * 4;

namespace detail {

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

}  // namespace detail

/// Serializes a volume to the CBCTVOL1 byte layout.
inline std::vector<char> encode_volume(const VoxelVolume& vol) {
  std::vector<char> out(kVolumeHeaderBytes + 2 * vol.data().size());
  char* p = out.data();
  p = std::copy(kVolumeMagic.begin(), kVolumeMagic.end(), p);
  auto u32 = [&p](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) *p++ = static_cast<char>((v >> (8 * i)) & 0xFFu);
  };
  u32(vol.dims().nx);
  u32(vol.dims().ny);
  u32(vol.dims().nz);
  u32(std::bit_cast<std::uint32_t>(vol.spacing().sx));
  u32(std::bit_cast<std::uint32_t>(vol.spacing().sy));
  u32(std::bit_cast<std::uint32_t>(vol.spacing().sz));
  for (std::int16_t v : vol.data()) {
    const auto u = static_cast<std::uint16_t>(v);
    *p++ = static_cast<char>(u & 0xFFu);
    *p++ = static_cast<char>(u >> 8);
  }
  return out;
}

inline VoxelVolume decode_volume(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < kVolumeMagic.size() ||
      !std::equal(kVolumeMagic.begin(), kVolumeMagic.end(), bytes.begin())) {
    throw FormatError("bad magic: expected \"CBCTVOL1\"");
  }
  if (bytes.size() < kVolumeHeaderBytes) {
    throw FormatError("truncated header: " + std::to_string(bytes.size()) + " of " +
                      std::to_string(kVolumeHeaderBytes) + " bytes");
  }
  const unsigned char* p = bytes.data() + 8;
  Dims d{detail::get_u32(p), detail::get_u32(p + 4), detail::get_u32(p + 8)};
  Spacing s{std::bit_cast<float>(detail::get_u32(p + 12)),
            std::bit_cast<float>(detail::get_u32(p + 16)),
            std::bit_cast<float>(detail::get_u32(p + 20))};
  try {
    VoxelVolume::validate_header(d, s);
  } catch (const ValidationError& e) {
    throw FormatError(std::string("invalid header field: ") + e.what());
  }
  const std::size_t expected = kVolumeHeaderBytes + 2 * d.count();
  if (bytes.size() < expected) {
    throw FormatError("truncated payload: expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw FormatError("trailing bytes after payload: expected " + std::to_string(expected) +
                      " bytes, got " + std::to_string(bytes.size()));
  }
  std::vector<std::int16_t> data(d.count());
  const unsigned char* q = bytes.data() + kVolumeHeaderBytes;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto u = static_cast<std::uint16_t>(q[2 * i] | (q[2 * i + 1] << 8));
    data[i] = static_cast<std::int16_t>(u);
  }
  return VoxelVolume(d, s, std::move(data));
}

inline void save_volume(const VoxelVolume& vol, const std::filesystem::path& path) {
  detail::write_file_bytes(path, encode_volume(vol));
}

inline VoxelVolume load_volume(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  try {
    return decode_volume(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// Raw int16 LE payload plus a JSON sidecar:
//   {"dims": [nx, ny, nz], "spacing": [sx, sy, sz], "dtype": "int16le"}
inline VoxelVolume load_raw_volume(const std::filesystem::path& raw_path,
                                   const std::filesystem::path& sidecar_path) {
  std::ifstream side(sidecar_path);
  if (!side) throw IoError("cannot open '" + sidecar_path.string() + "' for reading");
  nlohmann::json meta;
  try {
    side >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(sidecar_path.string() + ": " + e.what());
  }
  const std::string dtype = meta.value("dtype", "int16le");
  if (dtype != "int16le") throw FormatError(sidecar_path.string() + ": unsupported dtype " + dtype);
  if (!meta.contains("dims") || !meta.contains("spacing")) {
    throw FormatError(sidecar_path.string() + ": sidecar needs dims and spacing");
  }
  const auto dv = meta.at("dims").get<std::array<std::int64_t, 3>>();
  const auto sv = meta.at("spacing").get<std::array<float, 3>>();
  for (int i = 0; i < 3; ++i) {
    if (dv[i] < 1) throw FormatError(sidecar_path.string() + ": non-positive dims[" + std::to_string(i) + "]");
    if (!(sv[i] > 0.0f)) throw FormatError(sidecar_path.string() + ": non-positive spacing[" + std::to_string(i) + "]");
  }
  Dims d{static_cast<std::uint32_t>(dv[0]), static_cast<std::uint32_t>(dv[1]),
         static_cast<std::uint32_t>(dv[2])};
  auto raw = detail::read_file_bytes(raw_path);
  if (raw.size() != 2 * d.count()) {
    throw FormatError(raw_path.string() + ": raw payload holds " + std::to_string(raw.size()) +
                      " bytes, expected " + std::to_string(2 * d.count()));
  }
  std::vector<std::int16_t> data(d.count());
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(raw[2 * i] | (raw[2 * i + 1] << 8)));
  }
  return VoxelVolume(d, Spacing{sv[0], sv[1], sv[2]}, std::move(data));
}

}  // namespace toothbox
