#include "dolfin/schedule.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "dolfin/error.hpp"

namespace dolfin {
namespace {

void require_same_shape(const Matd& a, const Matd& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::shape, fmt::format("{}: shape mismatch ({}x{} vs {}x{})", what, a.rows(),
                                              a.cols(), b.rows(), b.cols()));
  }
}

void require_timestep(int t, const Schedule& sched) {
  if (t < 0 || t >= sched.T) {
    throw Error(ErrorKind::range, fmt::format("timestep {} outside [0, {})", t, sched.T));
  }
}

}  // namespace

double Schedule::posterior_variance(int t) const {
  const double abar = alpha_bar_at(t);
  const double abar_prev = alpha_bar_at(t - 1);
  return beta.at(static_cast<std::size_t>(t)) * (1.0 - abar_prev) / (1.0 - abar);
}

double Schedule::posterior_log_variance_clipped(int t) const {
  if (t == 0) return T > 1 ? std::log(posterior_variance(1)) : std::log(beta[0]);
  return std::log(posterior_variance(t));
}

void Schedule::validate() const {
  if (T < 1 || beta.size() != static_cast<std::size_t>(T) || alpha.size() != beta.size() ||
      alpha_bar.size() != beta.size()) {
    throw Error(ErrorKind::config, "schedule arrays do not match T");
  }
  for (int t = 0; t < T; ++t) {
    if (!(beta[t] > 0.0 && beta[t] < 1.0)) {
      throw Error(ErrorKind::config, fmt::format("beta[{}] = {} outside (0, 1)", t, beta[t]));
    }
    if (t > 0 && !(alpha_bar[t] < alpha_bar[t - 1])) {
      throw Error(ErrorKind::config, "alpha_bar is not strictly decreasing");
    }
  }
}

Schedule Schedule::from_betas(std::vector<double> betas, ScheduleKind kind) {
  Schedule s;
  s.T = static_cast<int>(betas.size());
  s.kind = kind;
  s.beta = std::move(betas);
  s.alpha.resize(s.beta.size());
  s.alpha_bar.resize(s.beta.size());
  double running = 1.0;
  for (std::size_t t = 0; t < s.beta.size(); ++t) {
    s.alpha[t] = 1.0 - s.beta[t];
    running *= s.alpha[t];
    s.alpha_bar[t] = running;
  }
  s.validate();
  return s;
}

Schedule build_schedule(int T, ScheduleKind kind) {
  if (T <= 0) throw Error(ErrorKind::config, fmt::format("diffusion steps must be >= 1, got {}", T));
  // Linear DDPM betas, rescaled so the total noise matches the 1000-step original.
  const double scale = 1000.0 / T;
  const double start = 1e-4 * scale;
  const double end = 0.02 * scale;
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t) / (T - 1);
    betas[t] = std::clamp(start + (end - start) * frac, 1e-12, 0.999);
  }
  return Schedule::from_betas(std::move(betas), kind);
}

Matd q_sample(const Matd& x0, int t, const Matd& eps, const Schedule& sched) {
  require_same_shape(x0, eps, "q_sample");
  require_timestep(t, sched);
  const double abar = sched.alpha_bar_at(t);
  return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * eps;
}

Matd predict_x0(const Matd& xt, const Matd& eps_hat, int t, const Schedule& sched) {
  require_same_shape(xt, eps_hat, "predict_x0");
  require_timestep(t, sched);
  const double abar = sched.alpha_bar_at(t);
  return (xt - std::sqrt(1.0 - abar) * eps_hat) / std::sqrt(abar);
}

Matd ddim_step(const Matd& xt, const Matd& eps_hat, int t, int t_prev, double eta,
               const Schedule& sched, Rng* rng, bool clip_x0) {
  if (t_prev >= t) {
    throw Error(ErrorKind::ordering, fmt::format("ddim_step needs t_prev < t (got {} >= {})", t_prev, t));
  }
  if (t_prev < -1) throw Error(ErrorKind::range, "t_prev must be >= -1");
  if (eta < 0.0 || eta > 1.0) throw Error(ErrorKind::range, "eta must be in [0, 1]");
  Matd x0 = predict_x0(xt, eps_hat, t, sched);
  Matd eps = eps_hat;
  const double abar = sched.alpha_bar_at(t);
  const double abar_prev = sched.alpha_bar_at(t_prev);
  if (clip_x0) {
    x0 = x0.cwiseMax(-1.0).cwiseMin(1.0);
    eps = (xt - std::sqrt(abar) * x0) / std::sqrt(1.0 - abar);
  }
  if (t_prev == -1) return x0;
  const double sigma = eta * std::sqrt((1.0 - abar_prev) / (1.0 - abar)) *
                       std::sqrt(1.0 - abar / abar_prev);
  Matd out = std::sqrt(abar_prev) * x0 +
             std::sqrt(std::max(1.0 - abar_prev - sigma * sigma, 0.0)) * eps;
  if (sigma > 0.0) {
    if (!rng) throw Error(ErrorKind::config, "stochastic ddim_step requires a random source");
    out += sigma * standard_normal(static_cast<int>(xt.rows()), static_cast<int>(xt.cols()), *rng);
  }
  return out;
}

PosteriorMoments posterior_moments(const Matd& x0, const Matd& xt, int t, const Schedule& sched) {
  require_same_shape(x0, xt, "posterior_moments");
  require_timestep(t, sched);
  const double abar = sched.alpha_bar_at(t);
  const double abar_prev = sched.alpha_bar_at(t - 1);
  const double coef_x0 = sched.beta[t] * std::sqrt(abar_prev) / (1.0 - abar);
  const double coef_xt = (1.0 - abar_prev) * std::sqrt(sched.alpha[t]) / (1.0 - abar);
  PosteriorMoments m;
  m.mu = coef_x0 * x0 + coef_xt * xt;
  m.sigma = Matd::Constant(xt.rows(), xt.cols(), std::sqrt(sched.posterior_variance(t)));
  return m;
}

Matd interpolated_log_variance(const Matd& var_pred, int t, const Schedule& sched) {
  require_timestep(t, sched);
  const double max_log = std::log(sched.beta[t]);
  const double min_log = sched.posterior_log_variance_clipped(t);
  const Matd frac = (var_pred.array() + 1.0) / 2.0;
  return (frac.array() * max_log + (1.0 - frac.array()) * min_log).matrix();
}

PosteriorMoments predicted_moments(const Matd& xt, const Matd& eps_hat, const Matd* var_pred,
                                   int t, const Schedule& sched, bool clip_x0) {
  Matd x0 = predict_x0(xt, eps_hat, t, sched);
  if (clip_x0) x0 = x0.cwiseMax(-1.0).cwiseMin(1.0);
  PosteriorMoments m = posterior_moments(x0, xt, t, sched);
  if (var_pred) {
    require_same_shape(xt, *var_pred, "predicted_moments");
    m.sigma = (0.5 * interpolated_log_variance(*var_pred, t, sched).array()).exp().matrix();
  }
  return m;
}

Matd ddpm_step(const Matd& xt, const Matd& eps_hat, const Matd* var_pred, int t,
               const Schedule& sched, Rng& rng, bool clip_x0) {
  PosteriorMoments m = predicted_moments(xt, eps_hat, var_pred, t, sched, clip_x0);
  if (t == 0) return m.mu;
  const Matd z = standard_normal(static_cast<int>(xt.rows()), static_cast<int>(xt.cols()), rng);
  return m.mu + m.sigma.cwiseProduct(z);
}

double mse_loss(const Matd& eps_true, const Matd& eps_pred) {
  require_same_shape(eps_true, eps_pred, "mse_loss");
  if (eps_true.size() == 0) return 0.0;
  return (eps_true - eps_pred).squaredNorm() / static_cast<double>(eps_true.size());
}

double gaussian_kl(double mu1, double sigma1, double mu2, double sigma2) {
  if (!(sigma1 > 0.0) || !(sigma2 > 0.0)) {
    throw Error(ErrorKind::domain, "kl_loss requires strictly positive sigmas");
  }
  const double d = mu1 - mu2;
  return std::log(sigma2 / sigma1) + (sigma1 * sigma1 + d * d) / (2.0 * sigma2 * sigma2) - 0.5;
}

double kl_loss(const PosteriorMoments& true_moments, const PosteriorMoments& pred_moments) {
  require_same_shape(true_moments.mu, pred_moments.mu, "kl_loss");
  require_same_shape(true_moments.mu, true_moments.sigma, "kl_loss");
  require_same_shape(pred_moments.mu, pred_moments.sigma, "kl_loss");
  const Eigen::Index n = true_moments.mu.size();
  if (n == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    total += gaussian_kl(true_moments.mu.data()[i], true_moments.sigma.data()[i],
                         pred_moments.mu.data()[i], pred_moments.sigma.data()[i]);
  }
  return total / static_cast<double>(n);
}

Matd standard_normal(int rows, int cols, Rng& rng) {
  Matd z(rows, cols);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  return z;
}

}  // namespace dolfin
