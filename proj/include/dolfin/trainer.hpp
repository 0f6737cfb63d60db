#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dolfin/adapter.hpp"
#include "dolfin/layout.hpp"
#include "dolfin/model.hpp"
#include "dolfin/optimizer.hpp"
#include "dolfin/rng.hpp"
#include "dolfin/schedule.hpp"

namespace dolfin {

enum class Variant { nonar, ar };

const char* to_string(Variant v) noexcept;
Variant variant_from_string(const std::string& text);

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 64;
  std::int64_t total_steps = 1000;
  std::uint64_t seed = 0;
  Variant variant = Variant::nonar;
  double ema_decay = 0.0;  // 0 disables the parameter EMA
  std::int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::int64_t log_every = 1;
  double grad_clip = 1.0;  // <= 0 disables clipping
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;

  void validate() const;
  std::map<std::string, std::string> to_kv() const;
  static TrainConfig from_kv(const std::map<std::string, std::string>& kv);
};

std::map<std::string, std::string> dataset_to_kv(const DatasetConfig& cfg);
DatasetConfig dataset_from_kv(const std::map<std::string, std::string>& kv);

/// Everything needed to resume training or to sample: parameters, optimizer
/// moments, schedule, configs, step counter and random state.
struct Checkpoint {
  ModelConfig model;
  DatasetConfig dataset;
  TrainConfig train;
  Schedule schedule;
  DenoiserParams<float> params;
  AdamW<float> optimizer;
  std::vector<float> ema;
  MlpAdapter adapter;
  std::int64_t step = 0;
  Rng rng;

  /// Fresh state. The model's token_dim and n_max are taken from the dataset
  /// (or the adapter's latent width when one is supplied).
  static Checkpoint create(const TrainConfig& train, ModelConfig model, const DatasetConfig& dataset,
                           int diffusion_steps, MlpAdapter adapter = {});

  /// Parameters used for sampling: the EMA copy when enabled.
  DenoiserParams<float> sampling_params() const;
};

/// x_t = q_sample(x0, t, eps) for every sample, with t and eps drawn from
/// `rng` in a fixed order (all t first, then each eps).
struct NoisyBatch {
  std::vector<Matd> x0;
  std::vector<int> t;
  std::vector<Matd> eps;
  std::vector<Matd> xt;
};

NoisyBatch draw_noisy_batch(const std::vector<Matd>& x0, const Schedule& sched, Rng& rng);

struct StepResult {
  double loss = 0.0;
  double mse = 0.0;
  double kl = 0.0;
  std::vector<double> per_token;  // AR: each token's share of the loss
  double grad_norm = 0.0;
};

/// Loss and gradient of a noisy batch without touching the optimizer.
/// `grad` is overwritten.
template <class S>
StepResult loss_and_gradient(const DenoiserParams<S>& params, const Schedule& sched,
                             const NoisyBatch& batch, Variant variant, std::vector<S>& grad);

StepResult train_step_nonar(Checkpoint& state, const std::vector<Matd>& batch);
StepResult train_step_ar(Checkpoint& state, const std::vector<Matd>& batch);

struct LossRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  std::int64_t millis = 0;
};

struct TrainLoopOptions {
  std::string out_dir;      // empty: no files are written
  bool log_wall_time = true;  // false writes 0 in the millis column
  std::function<void(const LossRecord&)> on_log;
};

/// Runs state.train.total_steps - state.step optimizer steps on batches drawn
/// (with replacement) from `corpus`, which must already be in model space.
std::vector<LossRecord> train_loop(Checkpoint& state, const std::vector<Matd>& corpus,
                                   const TrainLoopOptions& options = {});

/// Tokens to model space: adapter latents when an adapter is active.
std::vector<Matd> to_model_space(const Checkpoint& state, const std::vector<Matd>& tokens);

std::string format_loss_record(const LossRecord& r);

}  // namespace dolfin
