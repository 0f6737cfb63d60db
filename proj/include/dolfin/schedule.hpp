#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dolfin/layout.hpp"
#include "dolfin/rng.hpp"

namespace dolfin {

using Matd = TokenRows;

enum class ScheduleKind { linear };

/// Noise schedule over timesteps 0..T-1. Index -1 is the clean boundary,
/// where alpha_bar is defined as 1.
struct Schedule {
  int T = 0;
  ScheduleKind kind = ScheduleKind::linear;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  double alpha_bar_at(int t) const { return t < 0 ? 1.0 : alpha_bar.at(static_cast<std::size_t>(t)); }

  /// Variance of q(x_{t-1} | x_t, x_0).
  double posterior_variance(int t) const;

  /// log of posterior_variance, with t = 0 clipped to t = 1 so it stays finite.
  double posterior_log_variance_clipped(int t) const;

  void validate() const;

  /// Rebuilds alpha and alpha_bar from beta.
  static Schedule from_betas(std::vector<double> betas, ScheduleKind kind = ScheduleKind::linear);
};

Schedule build_schedule(int T, ScheduleKind kind = ScheduleKind::linear);

/// sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps
Matd q_sample(const Matd& x0, int t, const Matd& eps, const Schedule& sched);

/// Clean-sample estimate implied by a noise prediction.
Matd predict_x0(const Matd& xt, const Matd& eps_hat, int t, const Schedule& sched);

/// DDIM update from t to t_prev (t_prev = -1 emits the clean estimate).
/// `rng` is only consulted when eta > 0.
Matd ddim_step(const Matd& xt, const Matd& eps_hat, int t, int t_prev, double eta,
               const Schedule& sched, Rng* rng = nullptr, bool clip_x0 = false);

struct PosteriorMoments {
  Matd mu;
  Matd sigma;
};

/// Moments of the true posterior q(x_{t-1} | x_t, x_0).
PosteriorMoments posterior_moments(const Matd& x0, const Matd& xt, int t, const Schedule& sched);

/// Model interpolation coefficients in [-1, 1] mapping to a log variance between
/// log(beta_t) (at +1) and the clipped log posterior variance (at -1).
Matd interpolated_log_variance(const Matd& var_pred, int t, const Schedule& sched);

/// Moments of p(x_{t-1} | x_t) implied by a noise prediction and an optional
/// variance prediction. Without one, sigma is the posterior std.
PosteriorMoments predicted_moments(const Matd& xt, const Matd& eps_hat, const Matd* var_pred,
                                   int t, const Schedule& sched, bool clip_x0 = false);

/// Ancestral DDPM step from t to t-1. No noise is added at t = 0.
Matd ddpm_step(const Matd& xt, const Matd& eps_hat, const Matd* var_pred, int t,
               const Schedule& sched, Rng& rng, bool clip_x0 = false);

/// Mean squared error over every entry.
double mse_loss(const Matd& eps_true, const Matd& eps_pred);

/// Mean over entries of KL(N(true) || N(pred)) for diagonal Gaussians.
double kl_loss(const PosteriorMoments& true_moments, const PosteriorMoments& pred_moments);

/// KL between scalar Gaussians.
double gaussian_kl(double mu1, double sigma1, double mu2, double sigma2);

Matd standard_normal(int rows, int cols, Rng& rng);

}  // namespace dolfin
