#include <toothbox/volume.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

namespace fs = std::filesystem;
using namespace toothbox;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("toothbox_volume_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

VoxelVolume random_volume(Dims d, Spacing s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> v(-32768, 32767);
  VoxelVolume vol(d, s);
  for (auto& x : vol.data()) x = static_cast<std::int16_t>(v(rng));
  return vol;
}

}  // namespace

TEST(Volume, ZeroVolumeLoadsAsZeros) {
  VoxelVolume v({2, 2, 2}, {0.5f, 0.5f, 0.5f});
  const auto path = scratch("zeros.vol");
  save_volume(v, path);
  const auto back = load_volume(path);
  EXPECT_EQ(back.dims(), (Dims{2, 2, 2}));
  EXPECT_EQ(back.data(), std::vector<std::int16_t>(8, 0));
}

TEST(Volume, RoundTripSeeded16Cube) {
  const auto v = random_volume({16, 16, 16}, {0.4f, 0.5f, 0.6f}, 7);
  const auto path = scratch("rt16.vol");
  save_volume(v, path);
  EXPECT_EQ(load_volume(path), v);
}

TEST(Volume, RoundTripRandomShapes) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::uint32_t> dim(1, 9);
  std::uniform_real_distribution<float> sp(0.05f, 3.0f);
  for (int i = 0; i < 50; ++i) {
    const auto v = random_volume({dim(rng), dim(rng), dim(rng)}, {sp(rng), sp(rng), sp(rng)}, rng());
    const auto bytes = encode_volume(v);
    const std::vector<unsigned char> u(bytes.begin(), bytes.end());
    EXPECT_EQ(decode_volume(u), v);
  }
}

TEST(Volume, IndexOrderIsXFastest) {
  VoxelVolume v({3, 2, 2}, {1, 1, 1});
  v.at(2, 1, 1) = 5;
  EXPECT_EQ(v.data()[2 + 3 * (1 + 2 * 1)], 5);
}

TEST(Volume, OneVoxelFileIsHeaderPlusPayload) {
  VoxelVolume v({1, 1, 1}, {1, 1, 1}, std::int16_t{100});
  const auto bytes = encode_volume(v);
  // 8 magic + 12 dims + 12 spacing + 2 payload
  ASSERT_EQ(bytes.size(), 34u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "CBCTVOL1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[32]), 100);
  EXPECT_EQ(static_cast<unsigned char>(bytes[33]), 0);
}

TEST(Volume, SavingTwiceGivesIdenticalBytes) {
  const auto v = random_volume({5, 4, 3}, {1, 1, 1}, 3);
  const auto a = scratch("twice_a.vol");
  const auto b = scratch("twice_b.vol");
  save_volume(v, a);
  save_volume(v, b);
  EXPECT_EQ(detail::read_file_bytes(a), detail::read_file_bytes(b));
}

TEST(Volume, TruncatedPayloadIsFormatError) {
  const auto v = random_volume({4, 4, 4}, {1, 1, 1}, 5);
  auto bytes = encode_volume(v);
  bytes.resize(bytes.size() - 7);
  const std::vector<unsigned char> u(bytes.begin(), bytes.end());
  EXPECT_THROW(decode_volume(u), FormatError);
}

TEST(Volume, TruncatedHeaderIsFormatError) {
  const std::vector<unsigned char> u{'C', 'B', 'C', 'T', 'V', 'O', 'L', '1', 0, 0};
  EXPECT_THROW(decode_volume(u), FormatError);
}

TEST(Volume, BadMagicIsFormatError) {
  auto bytes = encode_volume(VoxelVolume({1, 1, 1}, {1, 1, 1}));
  bytes[0] = 'X';
  const std::vector<unsigned char> u(bytes.begin(), bytes.end());
  EXPECT_THROW(decode_volume(u), FormatError);
}

TEST(Volume, TrailingBytesAreFormatError) {
  auto bytes = encode_volume(VoxelVolume({1, 1, 1}, {1, 1, 1}));
  bytes.push_back(0);
  const std::vector<unsigned char> u(bytes.begin(), bytes.end());
  EXPECT_THROW(decode_volume(u), FormatError);
}

TEST(Volume, ZeroDimInHeaderIsFormatError) {
  auto bytes = encode_volume(VoxelVolume({1, 1, 1}, {1, 1, 1}));
  bytes[8] = 0;  // nx = 0
  const std::vector<unsigned char> u(bytes.begin(), bytes.end());
  EXPECT_THROW(decode_volume(u), FormatError);
}

TEST(Volume, MissingFileIsIoErrorNamingPath) {
  try {
    load_volume("/nonexistent/dir/x.vol");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/x.vol"), std::string::npos);
  }
}

TEST(Volume, ReadOnlyDestinationIsIoError) {
  const auto dir = scratch("ro_dir");
  fs::create_directories(dir);
  fs::permissions(dir, fs::perms::owner_read | fs::perms::owner_exec, fs::perm_options::replace);
  const auto target = dir / "x.vol";
  const bool writable = [&] {
    std::ofstream probe(dir / "probe");
    return static_cast<bool>(probe);
  }();
  if (writable) {
    fs::permissions(dir, fs::perms::owner_all, fs::perm_options::replace);
    fs::remove_all(dir);
    GTEST_SKIP() << "running with privileges that ignore directory permissions";
  }
  EXPECT_THROW(save_volume(VoxelVolume({1, 1, 1}, {1, 1, 1}), target), IoError);
  fs::permissions(dir, fs::perms::owner_all, fs::perm_options::replace);
}

TEST(Volume, WriteToDirectoryPathIsIoError) {
  const auto dir = scratch("is_a_dir");
  fs::create_directories(dir);
  EXPECT_THROW(save_volume(VoxelVolume({1, 1, 1}, {1, 1, 1}), dir), IoError);
}

TEST(Volume, ConstructorRejectsBadHeader) {
  EXPECT_THROW(VoxelVolume({0, 1, 1}, {1, 1, 1}), ValidationError);
  EXPECT_THROW(VoxelVolume({1, 1, 1}, {1, 0, 1}), ValidationError);
  EXPECT_THROW(VoxelVolume({2, 1, 1}, {1, 1, 1}, std::vector<std::int16_t>(3)), ValidationError);
}

TEST(Volume, RawWithSidecar) {
  const auto v = random_volume({3, 4, 5}, {0.3f, 0.3f, 0.6f}, 9);
  const auto bytes = encode_volume(v);
  const auto raw = scratch("v.raw");
  const auto side = scratch("v.json");
  {
    std::ofstream out(raw, std::ios::binary);
    out.write(bytes.data() + kVolumeHeaderBytes, static_cast<std::streamsize>(bytes.size() - kVolumeHeaderBytes));
    std::ofstream js(side);
    js << R"({"dims": [3, 4, 5], "spacing": [0.3, 0.3, 0.6], "dtype": "int16le"})";
  }
  EXPECT_EQ(load_raw_volume(raw, side), v);
  {
    std::ofstream js(side);
    js << R"({"dims": [3, 4, 6], "spacing": [0.3, 0.3, 0.6]})";
  }
  EXPECT_THROW(load_raw_volume(raw, side), FormatError);
}
