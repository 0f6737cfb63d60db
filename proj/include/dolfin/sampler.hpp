#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dolfin/layout.hpp"
#include "dolfin/model.hpp"
#include "dolfin/rng.hpp"
#include "dolfin/schedule.hpp"

namespace dolfin {

struct Checkpoint;

enum class MaskKind { none, cate, cate_size };
enum class ReverseKind { ddpm, ddim };

const char* to_string(MaskKind k) noexcept;
MaskKind mask_kind_from_string(const std::string& text);
const char* to_string(ReverseKind k) noexcept;
ReverseKind reverse_kind_from_string(const std::string& text);

/// Entries marked 1 in `mask` are given; `known` holds their clean values.
struct ConditionMask {
  Matd mask;
  Matd known;

  bool empty() const { return mask.size() == 0 || mask.isZero(); }
};

/// Category bits of every token; cate_size adds h, w and the scene dims,
/// which the decoder needs to turn h and w back into scene units.
ConditionMask make_condition(MaskKind kind, const Matd& known_tokens);
ConditionMask full_condition(const Matd& known_tokens);

/// Replaces masked entries by q_sample(known, t, fresh eps); t = -1 writes the
/// clean known values.
Matd apply_condition(const Matd& xt, const ConditionMask& cond, int t, const Schedule& sched, Rng& rng);

struct EpsPrediction {
  Matd eps;
  std::optional<Matd> var;  // interpolation coefficients from a variance head
};

using EpsPredictor = std::function<EpsPrediction(const Matd& xt, int t)>;

struct Snapshot {
  int t = 0;               // timestep the state sits at; -1 is the clean output
  int steps_completed = 0;
  Matd x;
};

using Trajectory = std::vector<Snapshot>;

struct ReverseOptions {
  ReverseKind kind = ReverseKind::ddpm;
  double eta = 0.0;
  bool clip_x0 = false;
  int steps = 0;           // 0: the full schedule; DDIM may use fewer
  int capture_stride = 0;  // 0: no trajectory
};

/// Timesteps visited, from T-1 down to 0.
std::vector<int> reverse_timesteps(const Schedule& sched, const ReverseOptions& options);

/// Runs the reverse chain from x_init. Noise is drawn from `rng` in a fixed
/// order: each step's update noise, then the conditioning noise.
Matd run_reverse(const EpsPredictor& predictor, const Schedule& sched, const Matd& x_init,
                 const ConditionMask* cond, Rng& rng, const ReverseOptions& options,
                 Trajectory* trajectory = nullptr);

/// Starts from standard normal noise, conditions it, and runs the chain.
Matd sample_chain(const EpsPredictor& predictor, const Schedule& sched, int rows, int cols,
                  const ConditionMask* cond, Rng& rng, const ReverseOptions& options,
                  Trajectory* trajectory = nullptr);

/// One joint pass per step. The predictor keeps a reference to `params`.
template <class S>
EpsPredictor nonar_predictor(const DenoiserParams<S>& params);

/// Token noises one at a time per step, each conditioned on the earlier ones.
/// Keeps a reference to `params`.
template <class S>
EpsPredictor ar_predictor(const DenoiserParams<S>& params);

struct SampleRequest {
  int n_samples = 1;
  std::uint64_t seed = 0;
  ReverseOptions reverse;
  MaskKind mask = MaskKind::none;
  std::vector<Matd> condition_tokens;  // sample i uses entry i % size
};

struct SampleOutput {
  std::vector<Matd> tokens;  // decoded back to token space
  std::vector<Trajectory> trajectories;
};

/// Samples from a checkpoint. Sample i draws from Rng::for_sample(seed, i),
/// so results do not depend on the worker count.
SampleOutput sample_checkpoint(const Checkpoint& ck, const SampleRequest& request);

/// Default reverse process per variant: DDPM for non-AR, DDIM for AR.
ReverseKind default_reverse(bool ar_mode);

}  // namespace dolfin
