#include "dolfin/hungarian.hpp"

#include <algorithm>
#include <limits>

#include <fmt/format.h>

#include "dolfin/error.hpp"

namespace dolfin {
namespace {

// Rows are matched into columns; requires n <= m.
std::vector<int> solve_rows(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(a.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

}  // namespace

Assignment hungarian(const Eigen::MatrixXd& cost) {
  if (!cost.allFinite()) throw Error(ErrorKind::domain, "hungarian: cost matrix has non-finite entries");
  Assignment out;
  if (cost.rows() == 0 || cost.cols() == 0) return out;
  if (cost.rows() <= cost.cols()) {
    const std::vector<int> r = solve_rows(cost);
    for (int i = 0; i < static_cast<int>(r.size()); ++i) out.pairs.emplace_back(i, r[static_cast<std::size_t>(i)]);
  } else {
    const Eigen::MatrixXd t = cost.transpose();
    const std::vector<int> r = solve_rows(t);
    for (int j = 0; j < static_cast<int>(r.size()); ++j) out.pairs.emplace_back(r[static_cast<std::size_t>(j)], j);
    std::sort(out.pairs.begin(), out.pairs.end());
  }
  for (const auto& [i, j] : out.pairs) out.cost += cost(i, j);
  return out;
}

Assignment max_weight_matching(const Eigen::MatrixXd& weight) {
  Assignment a = hungarian(-weight);
  a.cost = 0.0;
  for (const auto& [i, j] : a.pairs) a.cost += weight(i, j);
  return a;
}

}  // namespace dolfin
