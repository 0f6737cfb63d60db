#include <doctest.h>

#include <cmath>

#include "dolfin/error.hpp"
#include "dolfin/schedule.hpp"

using namespace dolfin;

namespace {

Matd filled(int r, int c, double v) { return Matd::Constant(r, c, v); }

}  // namespace

TEST_CASE("linear schedule invariants") {
  for (int T : {1, 10, 100, 1000}) {
    const Schedule s = build_schedule(T);
    CHECK(s.T == T);
    for (int t = 0; t < T; ++t) {
      CHECK(s.beta[t] > 0.0);
      CHECK(s.beta[t] < 1.0);
      CHECK(s.alpha_bar[t] > 0.0);
      CHECK(s.alpha_bar[t] < 1.0);
      if (t > 0) {
        CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
        // Short schedules clip the top of the ramp at 0.999.
        if (s.beta[t] < 0.999) CHECK(s.beta[t] > s.beta[t - 1]);
        CHECK(s.beta[t] >= s.beta[t - 1]);
      }
    }
  }
  CHECK(build_schedule(1).alpha_bar[0] == 1.0 - build_schedule(1).beta[0]);
  CHECK(build_schedule(100).beta[0] == doctest::Approx(1e-3));
  CHECK(build_schedule(100).beta[99] == doctest::Approx(0.2));
  CHECK_THROWS_AS(build_schedule(0), Error);
}

TEST_CASE("alpha_bar equals the sequential product") {
  const Schedule s = build_schedule(10);
  double prod = 1.0;
  for (int t = 0; t < 10; ++t) prod *= 1.0 - s.beta[t];
  CHECK(s.alpha_bar[9] == doctest::Approx(prod).epsilon(1e-15));
  CHECK(s.alpha_bar_at(-1) == 1.0);
}

TEST_CASE("q_sample evaluates the closed form") {
  const Schedule s = Schedule::from_betas({0.75});  // alpha_bar = 0.25
  const Matd xt = q_sample(filled(1, 1, 1.0), 0, filled(1, 1, 2.0), s);
  CHECK(xt(0, 0) == doctest::Approx(2.2320508).epsilon(1e-7));
  const Schedule t100 = build_schedule(100);
  const Matd x0 = filled(2, 3, 0.4);
  CHECK(q_sample(x0, 30, Matd::Zero(2, 3), t100) == std::sqrt(t100.alpha_bar[30]) * x0);
  CHECK_THROWS_AS(q_sample(x0, 0, Matd::Zero(3, 3), t100), Error);
  CHECK_THROWS_AS(q_sample(x0, 100, Matd::Zero(2, 3), t100), Error);
}

TEST_CASE("ddim inverts the forward process with the true noise") {
  const Schedule s = build_schedule(100);
  Rng rng(3);
  const Matd x0 = standard_normal(4, 16, rng);
  const Matd eps = standard_normal(4, 16, rng);
  const Matd xt = q_sample(x0, 60, eps, s);
  CHECK((predict_x0(xt, eps, 60, s) - x0).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(ddim_step(xt, eps, 60, -1, 0.0, s, nullptr, false) == predict_x0(xt, eps, 60, s));
  CHECK_THROWS_AS(ddim_step(xt, eps, 10, 10, 0.0, s, nullptr, false), Error);
  CHECK_THROWS_AS(ddim_step(xt, eps, 10, 5, 1.5, s, &rng, false), Error);
}

TEST_CASE("ddpm step moments") {
  const Schedule s = build_schedule(100);
  Rng rng(5);
  const Matd x0 = standard_normal(3, 16, rng);
  const Matd eps = standard_normal(3, 16, rng);
  const int t = 40;
  const Matd xt = q_sample(x0, t, eps, s);
  const PosteriorMoments pred = predicted_moments(xt, eps, nullptr, t, s);
  // Closed-form posterior mean of q(x_{t-1} | x_t, x_0).
  const double ab = s.alpha_bar[t], ab_prev = s.alpha_bar[t - 1];
  const Matd mu = (s.beta[t] * std::sqrt(ab_prev) / (1 - ab)) * x0 +
                  ((1 - ab_prev) * std::sqrt(s.alpha[t]) / (1 - ab)) * xt;
  CHECK((pred.mu - mu).cwiseAbs().maxCoeff() < 1e-12);
  const double var = s.beta[t] * (1 - ab_prev) / (1 - ab);
  CHECK(pred.sigma(0, 0) == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
  // t = 0 adds no noise.
  const Matd x1 = q_sample(x0, 0, eps, s);
  Rng a(1), b(2);
  CHECK(ddpm_step(x1, eps, nullptr, 0, s, a) == ddpm_step(x1, eps, nullptr, 0, s, b));
  CHECK(ddpm_step(x1, eps, nullptr, 0, s, a) == predicted_moments(x1, eps, nullptr, 0, s).mu);
}

TEST_CASE("learned variance interpolates between the two bounds") {
  const Schedule s = build_schedule(100);
  const Matd hi = interpolated_log_variance(filled(1, 2, 1.0), 50, s);
  const Matd lo = interpolated_log_variance(filled(1, 2, -1.0), 50, s);
  CHECK(hi(0, 0) == doctest::Approx(std::log(s.beta[50])));
  CHECK(lo(0, 0) == doctest::Approx(s.posterior_log_variance_clipped(50)));
}

TEST_CASE("losses") {
  Rng rng(9);
  const Matd a = standard_normal(5, 16, rng);
  const Matd b = standard_normal(5, 16, rng);
  CHECK(mse_loss(a, a) == 0.0);
  CHECK(mse_loss(Matd::Zero(2, 2), filled(2, 2, 3.0)) == 9.0);
  double loop = 0.0;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 16; ++j) loop += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
  }
  CHECK(mse_loss(a, b) == doctest::Approx(loop / 80).epsilon(1e-14));
  CHECK_THROWS_AS(mse_loss(a, Matd::Zero(1, 1)), Error);

  CHECK(gaussian_kl(0.3, 0.7, 0.3, 0.7) == 0.0);
  CHECK(gaussian_kl(0.0, 2.0, 1.5, 2.0) == doctest::Approx(1.5 * 1.5 / (2 * 4.0)));
  const double closed = std::log(2.0 / 1.0) + (1.0 + 1.0) / (2 * 4.0) - 0.5;
  CHECK(gaussian_kl(0.0, 1.0, 1.0, 2.0) == doctest::Approx(closed).epsilon(1e-14));
  CHECK_THROWS_AS(gaussian_kl(0.0, 0.0, 0.0, 1.0), Error);
  const PosteriorMoments m{filled(2, 2, 0.5), filled(2, 2, 0.3)};
  CHECK(kl_loss(m, m) == 0.0);
}

TEST_CASE("forward statistics match the marginal") {
  const Schedule s = build_schedule(100);
  Rng rng(17);
  const int draws = 20000;
  for (int t : {0, 50, 99}) {
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < draws; ++i) {
      const double v = q_sample(filled(1, 1, 0.7), t, standard_normal(1, 1, rng), s)(0, 0);
      sum += v;
      sq += v * v;
    }
    const double mean = sum / draws;
    const double var = sq / draws - mean * mean;
    const double expected_var = 1.0 - s.alpha_bar[t];
    CHECK(std::abs(mean - std::sqrt(s.alpha_bar[t]) * 0.7) < 4.0 * std::sqrt(expected_var / draws));
    CHECK(std::abs(var / expected_var - 1.0) < 0.05);
  }
}
