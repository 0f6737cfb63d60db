#pragma once

#include <cstdint>
#include <vector>

#include "dolfin/optimizer.hpp"
#include "dolfin/schedule.hpp"

namespace dolfin {

/// Two-layer perceptron autoencoder, 16 -> latent -> 16, used to run the
/// diffusion in a learned latent space instead of the token space.
class MlpAdapter {
 public:
  MlpAdapter() = default;  // disabled
  MlpAdapter(int token_dim, int latent_dim, std::uint64_t seed);

  /// Identity map; needs latent_dim == token_dim.
  static MlpAdapter identity(int token_dim);
  /// Rebuilds an adapter from stored weights (see values()).
  static MlpAdapter from_values(int token_dim, int latent_dim, std::vector<double> values);

  bool enabled() const { return latent_dim_ > 0; }
  int token_dim() const { return token_dim_; }
  int latent_dim() const { return latent_dim_; }

  Matd encode(const Matd& tokens) const;
  Matd decode(const Matd& latent) const;

  /// Mean reconstruction error over the given token matrices.
  double reconstruction_mse(const std::vector<Matd>& corpus) const;

  struct TrainResult {
    int steps = 0;
    double final_mse = 0.0;
  };

  /// Full-batch AdamW on reconstruction MSE until it drops below `threshold`
  /// or `max_steps` is reached.
  TrainResult train(const std::vector<Matd>& corpus, double threshold, int max_steps, double lr);

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

 private:
  void require_enabled() const;

  int token_dim_ = 0;
  int latent_dim_ = 0;
  // enc_w (latent x token), enc_b (latent), dec_w (token x latent), dec_b (token)
  std::vector<double> values_;
};

}  // namespace dolfin
