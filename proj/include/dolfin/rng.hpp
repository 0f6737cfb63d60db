#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace dolfin {

/// Seeded random source with a serializable state. Every stochastic
/// operation takes one of these explicitly; nothing draws from global state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }

  /// Uniform integer in [0, n).
  std::int64_t below(std::int64_t n) {
    return std::uniform_int_distribution<std::int64_t>(0, n - 1)(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

  std::string state() const;
  void set_state(const std::string& text);

  /// Stream for the i-th independent sample of a run seeded with `seed`.
  static Rng for_sample(std::uint64_t seed, std::uint64_t index) {
    return Rng(seed ^ index);
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace dolfin
