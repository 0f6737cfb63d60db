#include "dolfin/sampler.hpp"

#include <array>
#include <cmath>

#include <fmt/format.h>

#include "dolfin/error.hpp"
#include "dolfin/parallel.hpp"
#include "dolfin/trainer.hpp"

namespace dolfin {

const char* to_string(MaskKind k) noexcept {
  switch (k) {
    case MaskKind::none: return "none";
    case MaskKind::cate: return "cate";
    case MaskKind::cate_size: return "cate_size";
  }
  return "?";
}

MaskKind mask_kind_from_string(const std::string& text) {
  if (text == "none") return MaskKind::none;
  if (text == "cate") return MaskKind::cate;
  if (text == "cate_size") return MaskKind::cate_size;
  throw Error(ErrorKind::parse, fmt::format("unknown mask '{}' (expected none|cate|cate_size)", text));
}

const char* to_string(ReverseKind k) noexcept { return k == ReverseKind::ddim ? "ddim" : "ddpm"; }

ReverseKind reverse_kind_from_string(const std::string& text) {
  if (text == "ddpm") return ReverseKind::ddpm;
  if (text == "ddim") return ReverseKind::ddim;
  throw Error(ErrorKind::parse, fmt::format("unknown reverse process '{}' (expected ddpm|ddim)", text));
}

ReverseKind default_reverse(bool ar_mode) { return ar_mode ? ReverseKind::ddim : ReverseKind::ddpm; }

ConditionMask make_condition(MaskKind kind, const Matd& known_tokens) {
  ConditionMask c{Matd::Zero(known_tokens.rows(), known_tokens.cols()), known_tokens};
  if (kind == MaskKind::none) return c;
  if (known_tokens.cols() != kTokenDim) {
    throw Error(ErrorKind::shape, fmt::format("conditioning needs {}-wide tokens, got {}", kTokenDim, known_tokens.cols()));
  }
  c.mask.rightCols(kCategoryBits).setOnes();
  if (kind == MaskKind::cate_size) {
    for (int col : {token_col::h, token_col::w, token_col::scene_h, token_col::scene_w}) c.mask.col(col).setOnes();
  }
  return c;
}

ConditionMask full_condition(const Matd& known_tokens) {
  return {Matd::Ones(known_tokens.rows(), known_tokens.cols()), known_tokens};
}

Matd apply_condition(const Matd& xt, const ConditionMask& cond, int t, const Schedule& sched, Rng& rng) {
  if (cond.empty()) return xt;
  if (cond.mask.rows() != xt.rows() || cond.mask.cols() != xt.cols() || cond.known.rows() != xt.rows() ||
      cond.known.cols() != xt.cols()) {
    throw Error(ErrorKind::shape, "condition mask and state shapes differ");
  }
  const Matd noised = t < 0 ? cond.known
                            : q_sample(cond.known, t, standard_normal(static_cast<int>(xt.rows()),
                                                                       static_cast<int>(xt.cols()), rng),
                                       sched);
  Matd out = xt;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (cond.mask.data()[i] != 0.0) out.data()[i] = noised.data()[i];
  }
  return out;
}

std::vector<int> reverse_timesteps(const Schedule& sched, const ReverseOptions& options) {
  const int steps = options.steps == 0 ? sched.T : options.steps;
  if (steps < 1 || steps > sched.T) {
    throw Error(ErrorKind::config, fmt::format("steps must be in [1, {}], got {}", sched.T, steps));
  }
  if (options.kind == ReverseKind::ddpm && steps != sched.T) {
    throw Error(ErrorKind::config, "DDPM sampling runs the full schedule; use DDIM for fewer steps");
  }
  std::vector<int> ts;
  ts.reserve(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    // Evenly spaced from T-1 down to 0.
    const int t = steps == 1 ? sched.T - 1
                             : static_cast<int>(std::llround(static_cast<double>(sched.T - 1) * (steps - 1 - k) / (steps - 1)));
    ts.push_back(t);
  }
  return ts;
}

Matd run_reverse(const EpsPredictor& predictor, const Schedule& sched, const Matd& x_init,
                 const ConditionMask* cond, Rng& rng, const ReverseOptions& options, Trajectory* trajectory) {
  if (options.capture_stride < 0) throw Error(ErrorKind::range, "capture stride must be >= 0");
  const std::vector<int> ts = reverse_timesteps(sched, options);
  const bool conditioned = cond && !cond->empty();
  Matd x = x_init;
  const bool capture = trajectory && options.capture_stride > 0;
  if (capture) {
    trajectory->clear();
    trajectory->push_back({ts.front(), 0, x});
  }
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    const int t_prev = k + 1 < ts.size() ? ts[k + 1] : -1;
    const EpsPrediction p = predictor(x, t);
    if (p.eps.rows() != x.rows() || p.eps.cols() != x.cols()) {
      throw Error(ErrorKind::shape, "predictor output does not match the state shape");
    }
    if (options.kind == ReverseKind::ddim) {
      x = ddim_step(x, p.eps, t, t_prev, options.eta, sched, &rng, options.clip_x0);
    } else {
      x = ddpm_step(x, p.eps, p.var ? &*p.var : nullptr, t, sched, rng, options.clip_x0);
    }
    if (!x.allFinite()) throw Error(ErrorKind::numeric, fmt::format("non-finite sampler state at t={}", t));
    if (conditioned) x = apply_condition(x, *cond, t_prev, sched, rng);
    const int done = static_cast<int>(k) + 1;
    if (capture && (done % options.capture_stride == 0 || done == static_cast<int>(ts.size()))) {
      trajectory->push_back({t_prev, done, x});
    }
  }
  return x;
}

Matd sample_chain(const EpsPredictor& predictor, const Schedule& sched, int rows, int cols,
                  const ConditionMask* cond, Rng& rng, const ReverseOptions& options, Trajectory* trajectory) {
  Matd x = standard_normal(rows, cols, rng);
  if (cond && !cond->empty()) {
    const std::vector<int> ts = reverse_timesteps(sched, options);
    x = apply_condition(x, *cond, ts.front(), sched, rng);
  }
  return run_reverse(predictor, sched, x, cond, rng, options, trajectory);
}

template <class S>
EpsPredictor nonar_predictor(const DenoiserParams<S>& params) {
  if (params.config.ar_mode) throw Error(ErrorKind::config, "non-AR sampling needs a non-AR model");
  return [&params](const Matd& xt, int t) {
    const std::vector<Mat<S>> tokens{xt.cast<S>()};
    const std::array<int, 1> ts{t};
    VariancePrediction<S> out = forward_nonar<S>(params, tokens, ts);
    EpsPrediction p{out.eps_hat.front().template cast<double>(), std::nullopt};
    if (!out.var_hat.empty()) p.var = out.var_hat.front().template cast<double>();
    return p;
  };
}

template <class S>
EpsPredictor ar_predictor(const DenoiserParams<S>& params) {
  if (!params.config.ar_mode) throw Error(ErrorKind::config, "AR sampling needs an AR-mode model");
  return [&params](const Matd& xt, int t) {
    ArSession<S> session(params);
    session.begin(xt.cast<S>(), t);
    Matd eps(xt.rows(), xt.cols());
    for (Eigen::Index i = 0; i < xt.rows(); ++i) {
      const Mat<S> row = session.prediction();
      eps.row(i) = row.template cast<double>();
      if (i + 1 < xt.rows()) session.append(row);
    }
    return EpsPrediction{std::move(eps), std::nullopt};
  };
}

template EpsPredictor nonar_predictor<float>(const DenoiserParams<float>&);
template EpsPredictor nonar_predictor<double>(const DenoiserParams<double>&);
template EpsPredictor ar_predictor<float>(const DenoiserParams<float>&);
template EpsPredictor ar_predictor<double>(const DenoiserParams<double>&);

SampleOutput sample_checkpoint(const Checkpoint& ck, const SampleRequest& request) {
  if (request.n_samples < 1) throw Error(ErrorKind::range, "n_samples must be >= 1");
  if (ck.schedule.T < 1) throw Error(ErrorKind::config, "checkpoint has no schedule");
  const DenoiserParams<float> params = ck.sampling_params();
  if (params.values.size() != params.table.total()) {
    throw Error(ErrorKind::shape, "checkpoint parameters do not match the model config");
  }
  if (request.mask != MaskKind::none) {
    if (ck.adapter.enabled()) throw Error(ErrorKind::unsupported, "conditioning is not available with the MLP adapter");
    if (request.condition_tokens.empty()) throw Error(ErrorKind::config, "conditioning needs condition layouts");
  }
  const EpsPredictor predictor = ck.model.ar_mode ? ar_predictor<float>(params) : nonar_predictor<float>(params);
  const int rows = ck.model.n_max;
  const int cols = ck.model.token_dim;
  SampleOutput out;
  out.tokens.resize(static_cast<std::size_t>(request.n_samples));
  if (request.reverse.capture_stride > 0) out.trajectories.resize(out.tokens.size());
  auto to_tokens = [&](const Matd& m) { return ck.adapter.enabled() ? ck.adapter.decode(m) : m; };
  parallel_chunks(request.n_samples, worker_threads(), [&](int, int begin, int end) {
    for (int i = begin; i < end; ++i) {
      Rng rng = Rng::for_sample(request.seed, static_cast<std::uint64_t>(i));
      ConditionMask cond;
      if (request.mask != MaskKind::none) {
        const Matd& known = request.condition_tokens[static_cast<std::size_t>(i) % request.condition_tokens.size()];
        if (known.rows() != rows || known.cols() != cols) {
          throw Error(ErrorKind::shape, "condition layout does not match the model's token shape");
        }
        cond = make_condition(request.mask, known);
      }
      Trajectory traj;
      const auto idx = static_cast<std::size_t>(i);
      out.tokens[idx] = to_tokens(sample_chain(predictor, ck.schedule, rows, cols, &cond, rng, request.reverse,
                                               request.reverse.capture_stride > 0 ? &traj : nullptr));
      if (request.reverse.capture_stride > 0) {
        for (auto& s : traj) s.x = to_tokens(s.x);
        out.trajectories[idx] = std::move(traj);
      }
    }
  });
  return out;
}

}  // namespace dolfin
