#pragma once

// Rectangular minimum-cost assignment with forbidden pairs (Hungarian /
// Kuhn-Munkres with row potentials, O(n^3)).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace toothbox {

inline constexpr double kForbidden = std::numeric_limits<double>::infinity();

class CostMatrix {
 public:
  CostMatrix() = default;
  CostMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  [[nodiscard]] std::size_t rows() const { return rows_; }
  [[nodiscard]] std::size_t cols() const { return cols_; }
  [[nodiscard]] bool empty() const { return rows_ == 0 || cols_ == 0; }

  [[nodiscard]] double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  [[nodiscard]] bool forbidden(std::size_t r, std::size_t c) const { return !std::isfinite((*this)(r, c)); }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct Assignment {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const Assignment&, const Assignment&) = default;
};

inline double assignment_cost(const CostMatrix& m, const std::vector<Assignment>& a) {
  double total = 0.0;
  for (const auto& p : a) total += m(p.row, p.col);
  return total;
}

/// Returns pairs sorted by row. Among matchings of maximum cardinality over
/// allowed (finite) entries, the total cost is minimal.
///
/// Forbidden entries are replaced by a penalty exceeding the sum of every
/// finite entry plus one, the matrix is padded square with zero-cost dummies,
/// and pairs landing on a penalty or a dummy are dropped afterwards.
inline std::vector<Assignment> solve_assignment(const CostMatrix& costs) {
  if (costs.empty()) return {};
  const std::size_t rows = costs.rows();
  const std::size_t cols = costs.cols();
  const std::size_t n = std::max(rows, cols);

  double finite_sum = 0.0;
  bool any_allowed = false;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (!costs.forbidden(r, c)) {
        finite_sum += costs(r, c);
        any_allowed = true;
      }
    }
  }
  if (!any_allowed) return {};
  const double penalty = finite_sum + 1.0;

  // 1-based square matrix for the classic potentials formulation.
  std::vector<double> a((n + 1) * (n + 1), 0.0);
  auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * (n + 1) + j]; };
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      at(r + 1, c + 1) = costs.forbidden(r, c) ? penalty : costs(r, c);
    }
  }

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match_col(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match_col[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match_col[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = at(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match_col[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match_col[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match_col[j0] = match_col[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<Assignment> out;
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = match_col[j];
    if (i == 0 || i > rows || j > cols) continue;
    if (costs.forbidden(i - 1, j - 1)) continue;
    out.push_back({i - 1, j - 1});
  }
  std::sort(out.begin(), out.end(), [](const Assignment& x, const Assignment& y) { return x.row < y.row; });
  return out;
}

}  // namespace toothbox
