#include "dolfin/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <fmt/format.h>

#include "dolfin/checkpoint.hpp"
#include "dolfin/error.hpp"
#include "dolfin/fs_util.hpp"
#include "dolfin/parallel.hpp"

namespace dolfin {
namespace {

template <class T>
T parse_number(const std::map<std::string, std::string>& kv, const std::string& key, T fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    if constexpr (std::is_floating_point_v<T>) {
      return static_cast<T>(std::stod(it->second));
    } else if constexpr (std::is_unsigned_v<T>) {
      return static_cast<T>(std::stoull(it->second));
    } else {
      return static_cast<T>(std::stoll(it->second));
    }
  } catch (const std::exception&) {
    throw Error(ErrorKind::parse, fmt::format("key '{}' has a malformed value '{}'", key, it->second));
  }
}

std::string exact(double v) { return fmt::format("{:.17g}", v); }

template <class S>
Mat<S> cast_rows(const Matd& m) {
  return m.cast<S>();
}

// Accumulates one sample's loss terms and output gradient.
template <class S>
void sample_loss(const DenoiserParams<S>& params, const Schedule& sched, const NoisyBatch& batch,
                 std::size_t b, Variant variant, double norm, std::vector<S>& grad, StepResult& acc) {
  const ModelConfig& cfg = params.config;
  const int d = cfg.token_dim;
  const Mat<S> xt = cast_rows<S>(batch.xt[b]);
  const int t = batch.t[b];
  const SequenceSpec<S> spec = variant == Variant::ar
                                   ? ar_teacher_sequence<S>(cfg, xt, cast_rows<S>(batch.eps[b]), t)
                                   : nonar_sequence<S>(cfg, xt, t);
  ForwardCachePtr<S> cache;
  const Mat<S> out = forward_sequence<S>(params, spec, &cache);
  const Matd eps_hat = out.leftCols(d).template cast<double>();
  const Matd diff = eps_hat - batch.eps[b];
  Matd d_out = Matd::Zero(out.rows(), out.cols());
  d_out.leftCols(d) = (2.0 / norm) * diff;
  for (Eigen::Index i = 0; i < diff.rows(); ++i) {
    const double row_loss = diff.row(i).squaredNorm() / norm;
    acc.mse += row_loss;
    if (!acc.per_token.empty()) acc.per_token[static_cast<std::size_t>(i)] += row_loss;
  }
  if (cfg.variance_head && t > 0) {
    // Variational term trains only the variance: the mean uses a detached eps_hat.
    const Matd v = out.rightCols(d).template cast<double>();
    const PosteriorMoments q = posterior_moments(batch.x0[b], batch.xt[b], t, sched);
    const PosteriorMoments p = predicted_moments(batch.xt[b], eps_hat, nullptr, t, sched);
    const Matd log_var_p = interpolated_log_variance(v, t, sched);
    const double log_var_q = std::log(sched.posterior_variance(t));
    const double dlog_dv = 0.5 * (std::log(sched.beta[t]) - sched.posterior_log_variance_clipped(t));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double lvp = log_var_p.data()[i];
      const double dm = q.mu.data()[i] - p.mu.data()[i];
      const double ratio = std::exp(log_var_q - lvp);
      const double tail = dm * dm * std::exp(-lvp);
      acc.kl += 0.5 * (-1.0 + lvp - log_var_q + ratio + tail) / norm;
      const Eigen::Index r = i / d, c = i % d;
      d_out(r, d + c) = 0.5 * (1.0 - ratio - tail) * dlog_dv / norm;
    }
  }
  backward_sequence<S>(params, spec, *cache, d_out.cast<S>(), grad);
}

}  // namespace

const char* to_string(Variant v) noexcept { return v == Variant::ar ? "ar" : "nonar"; }

Variant variant_from_string(const std::string& text) {
  if (text == "nonar") return Variant::nonar;
  if (text == "ar") return Variant::ar;
  throw Error(ErrorKind::parse, fmt::format("unknown variant '{}' (expected nonar|ar)", text));
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw Error(ErrorKind::config, "lr must be > 0");
  if (batch_size < 1) throw Error(ErrorKind::config, "batch_size must be >= 1");
  if (total_steps < 0) throw Error(ErrorKind::config, "total_steps must be >= 0");
  if (ema_decay < 0.0 || ema_decay >= 1.0) throw Error(ErrorKind::config, "ema_decay must be in [0, 1)");
  if (checkpoint_every < 0) throw Error(ErrorKind::config, "checkpoint_every must be >= 0");
  if (log_every < 1) throw Error(ErrorKind::config, "log_every must be >= 1");
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
  return {{"lr", exact(lr)},
          {"batch_size", std::to_string(batch_size)},
          {"total_steps", std::to_string(total_steps)},
          {"seed", std::to_string(seed)},
          {"variant", to_string(variant)},
          {"ema_decay", exact(ema_decay)},
          {"checkpoint_every", std::to_string(checkpoint_every)},
          {"log_every", std::to_string(log_every)},
          {"grad_clip", exact(grad_clip)},
          {"weight_decay", exact(weight_decay)},
          {"beta1", exact(beta1)},
          {"beta2", exact(beta2)}};
}

TrainConfig TrainConfig::from_kv(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  c.lr = parse_number(kv, "lr", c.lr);
  c.batch_size = parse_number(kv, "batch_size", c.batch_size);
  c.total_steps = parse_number(kv, "total_steps", c.total_steps);
  c.seed = parse_number(kv, "seed", c.seed);
  if (auto it = kv.find("variant"); it != kv.end()) c.variant = variant_from_string(it->second);
  c.ema_decay = parse_number(kv, "ema_decay", c.ema_decay);
  c.checkpoint_every = parse_number(kv, "checkpoint_every", c.checkpoint_every);
  c.log_every = parse_number(kv, "log_every", c.log_every);
  c.grad_clip = parse_number(kv, "grad_clip", c.grad_clip);
  c.weight_decay = parse_number(kv, "weight_decay", c.weight_decay);
  c.beta1 = parse_number(kv, "beta1", c.beta1);
  c.beta2 = parse_number(kv, "beta2", c.beta2);
  c.validate();
  return c;
}

std::map<std::string, std::string> dataset_to_kv(const DatasetConfig& cfg) {
  return {{"n_max", std::to_string(cfg.n_max)},
          {"num_categories", std::to_string(cfg.num_categories)},
          {"mode", to_string(cfg.mode)},
          {"h_max", exact(cfg.h_max)},
          {"w_max", exact(cfg.w_max)}};
}

DatasetConfig dataset_from_kv(const std::map<std::string, std::string>& kv) {
  DatasetConfig c;
  c.n_max = parse_number(kv, "n_max", c.n_max);
  c.num_categories = parse_number(kv, "num_categories", c.num_categories);
  if (auto it = kv.find("mode"); it != kv.end()) c.mode = token_mode_from_string(it->second.c_str());
  c.h_max = parse_number(kv, "h_max", c.h_max);
  c.w_max = parse_number(kv, "w_max", c.w_max);
  c.validate();
  return c;
}

Checkpoint Checkpoint::create(const TrainConfig& train, ModelConfig model, const DatasetConfig& dataset,
                              int diffusion_steps, MlpAdapter adapter) {
  train.validate();
  dataset.validate();
  model.n_max = dataset.n_max;
  model.token_dim = adapter.enabled() ? adapter.latent_dim() : kTokenDim;
  model.ar_mode = train.variant == Variant::ar;
  if (model.ar_mode) model.variance_head = false;
  model.validate();
  Checkpoint ck;
  ck.model = model;
  ck.dataset = dataset;
  ck.train = train;
  ck.schedule = build_schedule(diffusion_steps);
  ck.params = init_params<float>(model, train.seed);
  ck.optimizer = AdamW<float>(AdamWConfig{.lr = train.lr,
                                          .beta1 = train.beta1,
                                          .beta2 = train.beta2,
                                          .eps = 1e-8,
                                          .weight_decay = train.weight_decay},
                              ck.params.values.size());
  if (train.ema_decay > 0.0) ck.ema = ck.params.values;
  ck.adapter = std::move(adapter);
  ck.rng = Rng(train.seed ^ 0x5eedULL);
  return ck;
}

DenoiserParams<float> Checkpoint::sampling_params() const {
  if (ema.empty()) return params;
  DenoiserParams<float> p = params;
  p.values = ema;
  return p;
}

NoisyBatch draw_noisy_batch(const std::vector<Matd>& x0, const Schedule& sched, Rng& rng) {
  NoisyBatch nb;
  nb.x0 = x0;
  for (std::size_t b = 0; b < x0.size(); ++b) nb.t.push_back(static_cast<int>(rng.below(sched.T)));
  for (std::size_t b = 0; b < x0.size(); ++b) {
    nb.eps.push_back(standard_normal(static_cast<int>(x0[b].rows()), static_cast<int>(x0[b].cols()), rng));
    nb.xt.push_back(q_sample(x0[b], nb.t[b], nb.eps[b], sched));
  }
  return nb;
}

template <class S>
StepResult loss_and_gradient(const DenoiserParams<S>& params, const Schedule& sched,
                             const NoisyBatch& batch, Variant variant, std::vector<S>& grad) {
  if (batch.xt.empty()) throw Error(ErrorKind::shape, "empty batch");
  const int n = params.config.n_max;
  const double norm = static_cast<double>(batch.xt.size()) * n * params.config.token_dim;
  grad.assign(params.values.size(), S(0));
  const int threads = worker_threads();
  const int count = static_cast<int>(batch.xt.size());
  const int chunks = std::max(1, std::min(threads, count));
  std::vector<StepResult> partial(static_cast<std::size_t>(chunks));
  std::vector<std::vector<S>> partial_grad(static_cast<std::size_t>(chunks > 1 ? chunks : 0));
  parallel_chunks(count, threads, [&](int chunk, int begin, int end) {
    StepResult& acc = partial[static_cast<std::size_t>(chunk)];
    if (variant == Variant::ar) acc.per_token.assign(static_cast<std::size_t>(n), 0.0);
    std::vector<S>& g = chunks > 1 ? partial_grad[static_cast<std::size_t>(chunk)] : grad;
    if (chunks > 1) g.assign(params.values.size(), S(0));
    for (int b = begin; b < end; ++b) {
      sample_loss<S>(params, sched, batch, static_cast<std::size_t>(b), variant, norm, g, acc);
    }
  });
  StepResult result;
  if (variant == Variant::ar) result.per_token.assign(static_cast<std::size_t>(n), 0.0);
  for (int c = 0; c < chunks; ++c) {
    const StepResult& p = partial[static_cast<std::size_t>(c)];
    result.mse += p.mse;
    result.kl += p.kl;
    for (std::size_t i = 0; i < p.per_token.size(); ++i) result.per_token[i] += p.per_token[i];
    if (chunks > 1) {
      const auto& g = partial_grad[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
    }
  }
  result.loss = result.mse + result.kl;
  return result;
}

template StepResult loss_and_gradient<float>(const DenoiserParams<float>&, const Schedule&,
                                             const NoisyBatch&, Variant, std::vector<float>&);
template StepResult loss_and_gradient<double>(const DenoiserParams<double>&, const Schedule&,
                                              const NoisyBatch&, Variant, std::vector<double>&);

namespace {

StepResult optimizer_step(Checkpoint& state, const std::vector<Matd>& batch, Variant variant) {
  if ((variant == Variant::ar) != state.model.ar_mode) {
    throw Error(ErrorKind::config, fmt::format("train step for variant '{}' on a model with ar_mode={}",
                                               to_string(variant), state.model.ar_mode));
  }
  const NoisyBatch nb = draw_noisy_batch(batch, state.schedule, state.rng);
  std::vector<float> grad;
  StepResult r = loss_and_gradient<float>(state.params, state.schedule, nb, variant, grad);
  r.grad_norm = clip_global_norm(grad, state.train.grad_clip);
  if (!std::isfinite(r.loss) || !std::isfinite(r.grad_norm)) {
    std::string ts;
    for (int t : nb.t) ts += fmt::format("{} ", t);
    throw Error(ErrorKind::numeric,
                fmt::format("non-finite loss at step {}: loss={} mse={} kl={} grad_norm={} t=[{}]",
                            state.step, r.loss, r.mse, r.kl, r.grad_norm, ts));
  }
  state.optimizer.step(state.params.values, grad);
  if (!state.ema.empty()) {
    const float decay = static_cast<float>(state.train.ema_decay);
    for (std::size_t i = 0; i < state.ema.size(); ++i) {
      state.ema[i] = decay * state.ema[i] + (1.0f - decay) * state.params.values[i];
    }
  }
  ++state.step;
  return r;
}

}  // namespace

StepResult train_step_nonar(Checkpoint& state, const std::vector<Matd>& batch) {
  return optimizer_step(state, batch, Variant::nonar);
}

StepResult train_step_ar(Checkpoint& state, const std::vector<Matd>& batch) {
  return optimizer_step(state, batch, Variant::ar);
}

std::vector<Matd> to_model_space(const Checkpoint& state, const std::vector<Matd>& tokens) {
  if (!state.adapter.enabled()) return tokens;
  std::vector<Matd> out;
  out.reserve(tokens.size());
  for (const auto& m : tokens) out.push_back(state.adapter.encode(m));
  return out;
}

std::string format_loss_record(const LossRecord& r) {
  return fmt::format("{}\t{:.9g}\t{}", r.step, r.loss, r.millis);
}

std::vector<LossRecord> train_loop(Checkpoint& state, const std::vector<Matd>& corpus,
                                   const TrainLoopOptions& options) {
  if (corpus.empty()) throw Error(ErrorKind::validation, "training corpus is empty");
  const auto started = std::chrono::steady_clock::now();
  std::vector<LossRecord> records;
  std::ofstream log;
  const bool write = !options.out_dir.empty();
  std::filesystem::path log_path;
  if (write) {
    std::filesystem::create_directories(options.out_dir);
    log_path = std::filesystem::path(options.out_dir) / "loss.tsv";
    // Resumed runs continue the existing log.
    log.open(log_path, state.step > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw Error(ErrorKind::io, fmt::format("cannot open loss log '{}'", log_path.string()));
  }
  const Variant variant = state.model.ar_mode ? Variant::ar : Variant::nonar;
  std::vector<Matd> batch(static_cast<std::size_t>(state.train.batch_size));
  while (state.step < state.train.total_steps) {
    for (auto& m : batch) m = corpus[static_cast<std::size_t>(state.rng.below(static_cast<std::int64_t>(corpus.size())))];
    StepResult r;
    try {
      r = optimizer_step(state, batch, variant);
    } catch (const Error& e) {
      if (write && e.kind() == ErrorKind::numeric) {
        save_checkpoint((std::filesystem::path(options.out_dir) / "diagnostic.ckpt").string(), state);
      }
      throw;
    }
    const bool at_checkpoint = state.train.checkpoint_every > 0 && state.step % state.train.checkpoint_every == 0;
    const bool last = state.step == state.train.total_steps;
    if (state.step % state.train.log_every == 0 || at_checkpoint || last) {
      LossRecord rec{state.step, r.loss, 0};
      if (options.log_wall_time) {
        rec.millis = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count();
      }
      records.push_back(rec);
      if (write) log << format_loss_record(rec) << '\n' << std::flush;
      if (options.on_log) options.on_log(rec);
    }
    if (write && at_checkpoint) {
      save_checkpoint((std::filesystem::path(options.out_dir) / fmt::format("step_{:08d}.ckpt", state.step)).string(),
                      state);
    }
  }
  if (write) save_checkpoint((std::filesystem::path(options.out_dir) / "final.ckpt").string(), state);
  return records;
}

}  // namespace dolfin
