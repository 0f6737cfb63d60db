#pragma once

#include <utility>
#include <vector>

#include <Eigen/Core>

namespace dolfin {

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (row, col), sorted by row
  double cost = 0.0;                       // summed in row order
};

/// Minimum-cost matching of every row (n <= m) or every column (n > m).
/// Shortest augmenting paths with potentials, O(min(n,m)^2 * max(n,m)).
Assignment hungarian(const Eigen::MatrixXd& cost);

/// Maximum-weight matching; `cost` of the result holds the matched weight.
Assignment max_weight_matching(const Eigen::MatrixXd& weight);

}  // namespace dolfin
