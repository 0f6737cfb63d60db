#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dolfin/model.hpp"
#include "dolfin/rng.hpp"
#include "dolfin/schedule.hpp"

namespace dolfin::testing {

/// Fresh params with every entry redrawn, so zero-initialized blocks carry
/// gradient signal.
template <class S>
DenoiserParams<S> random_params(const ModelConfig& cfg, std::uint64_t seed, double scale = 0.3) {
  DenoiserParams<S> p = init_params<S>(cfg, seed);
  Rng rng(seed + 1000);
  for (auto& v : p.values) v = static_cast<S>(rng.normal() * scale);
  return p;
}

inline Matd random_matrix(int rows, int cols, Rng& rng) { return standard_normal(rows, cols, rng); }

/// |a - b| / max(|a|, |b|, floor). The floor keeps structurally zero
/// gradients (key biases cancel inside softmax) from dividing noise by noise.
inline double relative_error(double a, double b, double floor = 1e-6) {
  const double scale = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / scale;
}

inline ModelConfig tiny_config(bool ar = false, bool variance = false) {
  ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.hidden = 8;
  c.n_max = 3;
  c.ar_mode = ar;
  c.variance_head = variance;
  return c;
}

}  // namespace dolfin::testing
