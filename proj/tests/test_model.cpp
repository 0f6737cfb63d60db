#include <doctest.h>

#include <array>
#include <cmath>

#include "dolfin/error.hpp"
#include "dolfin/model.hpp"
#include "dolfin/trainer.hpp"
#include "test_util.hpp"

using namespace dolfin;
using dolfin::testing::random_params;
using dolfin::testing::relative_error;
using dolfin::testing::tiny_config;

namespace {

// Independent count: walk the architecture by hand.
std::size_t hand_count(const ModelConfig& c) {
  const std::size_t h = c.hidden, d = c.token_dim, f = c.freq_dim();
  std::size_t n = d * h + h;                    // input projection
  n += static_cast<std::size_t>(c.positions()) * h;
  if (c.ar_mode) n += 3 * h + h;                // segment types, START
  n += f * h + h + h * h + h;                   // time MLP
  const std::size_t m = c.mlp_ratio * h;
  const std::size_t block = (h * 6 * h + 6 * h) + (h * 3 * h + 3 * h) + (h * h + h) + (h * m + m) + (m * h + h);
  n += c.layers * block;
  n += h * 2 * h + 2 * h;                       // final modulation
  const std::size_t out = c.variance_head ? 2 * d : d;
  n += h * out + out;
  return n;
}

}  // namespace

TEST_CASE("default config matches the published backbone and counts parameters") {
  ModelConfig c;
  CHECK(c.layers == 4);
  CHECK(c.heads == 8);
  CHECK(c.hidden == 512);
  CHECK(c.parameter_count() == hand_count(c));
  CHECK(denoiser_layout(c).first.total() == hand_count(c));
  ModelConfig ar = c;
  ar.ar_mode = true;
  CHECK(ar.parameter_count() == hand_count(ar));
  ModelConfig var = c;
  var.variance_head = true;
  CHECK(var.parameter_count() == hand_count(var));
}

TEST_CASE("invalid configs are rejected") {
  ModelConfig c = tiny_config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_config();
  c.layers = 0;
  CHECK_THROWS_AS(init_params<double>(c, 1), Error);
  c = tiny_config(true, true);
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("init is deterministic and a fresh model predicts zero") {
  const ModelConfig c = tiny_config();
  const auto a = init_params<float>(c, 5);
  const auto b = init_params<float>(c, 5);
  CHECK(a.values == b.values);
  CHECK(init_params<float>(c, 6).values != a.values);
  Rng rng(1);
  const std::vector<Mat<float>> x{dolfin::testing::random_matrix(3, 16, rng).cast<float>()};
  const std::array<int, 1> t{4};
  const auto out = forward_nonar<float>(a, x, t);
  CHECK(out.eps_hat[0].rows() == 3);
  CHECK(out.eps_hat[0].cols() == 16);
  CHECK(out.eps_hat[0].isZero(0.0));
}

TEST_CASE("batch samples are independent") {
  const ModelConfig c = tiny_config();
  const auto p = random_params<double>(c, 2);
  Rng rng(3);
  const Mat<double> x0 = dolfin::testing::random_matrix(3, 16, rng);
  const Mat<double> x1 = dolfin::testing::random_matrix(3, 16, rng);
  const std::array<int, 1> t1{7};
  const std::array<int, 3> t3{7, 2, 7};
  const auto single = forward_nonar<double>(p, {x0}, t1);
  const auto batch = forward_nonar<double>(p, {x0, x1, x0}, t3);
  CHECK(batch.eps_hat[0] == single.eps_hat[0]);
  CHECK(batch.eps_hat[2] == single.eps_hat[0]);
}

TEST_CASE("timestep embeddings differ across t") {
  const auto p = random_params<double>(tiny_config(), 4);
  const Vec<double> a = embed_timestep(p, 0);
  const Vec<double> b = embed_timestep(p, 99);
  CHECK(a == embed_timestep(p, 0));
  CHECK(a.dot(b) / (a.norm() * b.norm()) < 1.0 - 1e-9);
}

TEST_CASE("shape errors are reported") {
  const auto p = init_params<double>(tiny_config(), 1);
  const std::array<int, 1> t{0};
  CHECK_THROWS_AS(forward_nonar<double>(p, {Mat<double>::Zero(2, 16)}, t), Error);
  const auto ar = init_params<double>(tiny_config(true), 1);
  CHECK_THROWS_AS(forward_ar<double>(ar, Mat<double>::Zero(3, 16), Mat<double>::Zero(3, 16), 0), Error);
}

namespace {

// Gradient of sum(weight .* out) against central differences for every
// parameter in `indices`.
template <class SpecFn>
double max_gradient_error(DenoiserParams<double>& p, SpecFn make_spec, const Mat<double>& weight,
                          const std::vector<std::size_t>& indices) {
  const SequenceSpec<double> spec = make_spec();
  ForwardCachePtr<double> cache;
  forward_sequence<double>(p, spec, &cache);
  std::vector<double> grad(p.values.size(), 0.0);
  backward_sequence<double>(p, spec, *cache, weight, grad);
  auto loss = [&] { return forward_sequence<double>(p, spec, nullptr).cwiseProduct(weight).sum(); };
  double worst = 0.0;
  for (std::size_t i : indices) {
    const double keep = p.values[i];
    // Fourth-order central stencil keeps the oracle accurate for tiny gradients.
    const double h = 1e-4;
    auto at = [&](double delta) {
      p.values[i] = keep + delta;
      return loss();
    };
    const double fd = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
    p.values[i] = keep;
    worst = std::max(worst, relative_error(grad[i], fd));
  }
  return worst;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

TEST_CASE("analytic gradients match finite differences in every parameter group") {
  Rng rng(11);
  for (const auto& cfg : {tiny_config(false, false), tiny_config(false, true), tiny_config(true, false)}) {
    auto p = random_params<double>(cfg, 9);
    const Mat<double> x = dolfin::testing::random_matrix(3, 16, rng);
    const Mat<double> noise = dolfin::testing::random_matrix(3, 16, rng);
    auto make = [&] {
      return cfg.ar_mode ? ar_teacher_sequence<double>(cfg, x, noise, 17) : nonar_sequence<double>(cfg, x, 17);
    };
    const Mat<double> w = dolfin::testing::random_matrix(3, cfg.out_dim(), rng);
    CHECK(max_gradient_error(p, make, w, all_indices(p.values.size())) < 1e-4);
  }
}

TEST_CASE("AR predictions depend only on the noise prefix") {
  const ModelConfig cfg = [] {
    auto c = tiny_config(true);
    c.n_max = 4;
    return c;
  }();
  const auto p = random_params<double>(cfg, 21);
  Rng rng(5);
  const Mat<double> x = dolfin::testing::random_matrix(4, 16, rng);
  Mat<double> noise = dolfin::testing::random_matrix(4, 16, rng);
  const Mat<double> base = forward_ar_teacher_forced<double>(p, x, noise, 3);
  for (int j = 0; j < 4; ++j) {
    Mat<double> perturbed = noise;
    perturbed.row(j).array() += 1.0;
    const Mat<double> out = forward_ar_teacher_forced<double>(p, x, perturbed, 3);
    for (int i = 0; i <= j; ++i) CHECK(out.row(i) == base.row(i));
    for (int i = j + 1; i < 4; ++i) CHECK(out.row(i) != base.row(i));
  }
  // The cached incremental path agrees with the single masked pass.
  for (int i = 0; i < 4; ++i) {
    const Mat<double> step = forward_ar<double>(p, x, noise.topRows(i), 3);
    CHECK((step - base.row(i)).cwiseAbs().maxCoeff() < 1e-12);
  }
}
