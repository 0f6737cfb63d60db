#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace dolfin {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay over a flat parameter buffer.
template <class S>
class AdamW {
 public:
  AdamW() = default;
  AdamW(AdamWConfig cfg, std::size_t n) : cfg_(cfg), m_(n, S(0)), v_(n, S(0)) {}

  void step(std::vector<S>& params, const std::vector<S>& grad) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    const S lr = static_cast<S>(cfg_.lr);
    const S decay = static_cast<S>(1.0 - cfg_.lr * cfg_.weight_decay);
    const S inv_bc1 = static_cast<S>(1.0 / bc1);
    const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));
    const S eps = static_cast<S>(cfg_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const S g = grad[i];
      m_[i] = b1 * m_[i] + (S(1) - b1) * g;
      v_[i] = b2 * v_[i] + (S(1) - b2) * g * g;
      const S m_hat = m_[i] * inv_bc1;
      const S denom = std::sqrt(v_[i]) * inv_sqrt_bc2 + eps;
      params[i] = params[i] * decay - lr * m_hat / denom;
    }
  }

  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::int64_t steps() const { return steps_; }
  std::vector<S>& first_moment() { return m_; }
  std::vector<S>& second_moment() { return v_; }
  const std::vector<S>& first_moment() const { return m_; }
  const std::vector<S>& second_moment() const { return v_; }
  void set_steps(std::int64_t s) { steps_ = s; }

 private:
  AdamWConfig cfg_;
  std::vector<S> m_, v_;
  std::int64_t steps_ = 0;
};

/// Scales `grad` in place so its L2 norm is at most `max_norm` (<= 0 disables).
/// Returns the norm before clipping.
template <class S>
double clip_global_norm(std::vector<S>& grad, double max_norm) {
  double sq = 0.0;
  for (S g : grad) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const S scale = static_cast<S>(max_norm / norm);
    for (S& g : grad) g *= scale;
  }
  return norm;
}

}  // namespace dolfin
