#include "dolfin/adapter.hpp"

#include <random>

#include <fmt/format.h>

#include "dolfin/error.hpp"

namespace dolfin {
namespace {

using RowMat = Matd;

struct AdapterViews {
  Eigen::Map<const RowMat> enc_w, enc_b, dec_w, dec_b;
};

AdapterViews views(const std::vector<double>& v, int d, int k) {
  const double* p = v.data();
  return {Eigen::Map<const RowMat>(p, k, d), Eigen::Map<const RowMat>(p + k * d, 1, k),
          Eigen::Map<const RowMat>(p + k * d + k, d, k),
          Eigen::Map<const RowMat>(p + 2 * k * d + k, 1, d)};
}

RowMat stack_rows(const std::vector<Matd>& corpus) {
  Eigen::Index rows = 0;
  for (const auto& m : corpus) rows += m.rows();
  RowMat x(rows, corpus.empty() ? 0 : corpus.front().cols());
  Eigen::Index at = 0;
  for (const auto& m : corpus) {
    x.middleRows(at, m.rows()) = m;
    at += m.rows();
  }
  return x;
}

}  // namespace

MlpAdapter::MlpAdapter(int token_dim, int latent_dim, std::uint64_t seed)
    : token_dim_(token_dim), latent_dim_(latent_dim) {
  if (token_dim < 1 || latent_dim < 1) throw Error(ErrorKind::config, "adapter dimensions must be >= 1");
  const int d = token_dim, k = latent_dim;
  values_.assign(static_cast<std::size_t>(2 * d * k + d + k), 0.0);
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  const double bound = std::sqrt(6.0 / (d + k));
  for (int i = 0; i < k * d; ++i) values_[static_cast<std::size_t>(i)] = bound * dist(eng);
  for (int i = 0; i < d * k; ++i) values_[static_cast<std::size_t>(k * d + k + i)] = bound * dist(eng);
}

MlpAdapter MlpAdapter::from_values(int token_dim, int latent_dim, std::vector<double> values) {
  if (token_dim < 1 || latent_dim < 1) throw Error(ErrorKind::config, "adapter dimensions must be >= 1");
  const auto expected = static_cast<std::size_t>(2 * token_dim * latent_dim + token_dim + latent_dim);
  if (values.size() != expected) {
    throw Error(ErrorKind::shape,
                fmt::format("adapter expects {} values, got {}", expected, values.size()));
  }
  MlpAdapter a;
  a.token_dim_ = token_dim;
  a.latent_dim_ = latent_dim;
  a.values_ = std::move(values);
  return a;
}

MlpAdapter MlpAdapter::identity(int token_dim) {
  MlpAdapter a;
  a.token_dim_ = token_dim;
  a.latent_dim_ = token_dim;
  const int d = token_dim;
  a.values_.assign(static_cast<std::size_t>(2 * d * d + 2 * d), 0.0);
  for (int i = 0; i < d; ++i) {
    a.values_[static_cast<std::size_t>(i * d + i)] = 1.0;
    a.values_[static_cast<std::size_t>(d * d + d + i * d + i)] = 1.0;
  }
  return a;
}

void MlpAdapter::require_enabled() const {
  if (!enabled()) throw Error(ErrorKind::unsupported, "the MLP adapter is disabled in this configuration");
}

Matd MlpAdapter::encode(const Matd& tokens) const {
  require_enabled();
  if (tokens.cols() != token_dim_) throw Error(ErrorKind::shape, "adapter encode: wrong token width");
  const auto v = views(values_, token_dim_, latent_dim_);
  Matd z = tokens * v.enc_w.transpose();
  z.rowwise() += v.enc_b.row(0);
  return z;
}

Matd MlpAdapter::decode(const Matd& latent) const {
  require_enabled();
  if (latent.cols() != latent_dim_) throw Error(ErrorKind::shape, "adapter decode: wrong latent width");
  const auto v = views(values_, token_dim_, latent_dim_);
  Matd x = latent * v.dec_w.transpose();
  x.rowwise() += v.dec_b.row(0);
  return x;
}

double MlpAdapter::reconstruction_mse(const std::vector<Matd>& corpus) const {
  require_enabled();
  const RowMat x = stack_rows(corpus);
  if (x.size() == 0) return 0.0;
  return (decode(encode(x)) - x).squaredNorm() / static_cast<double>(x.size());
}

MlpAdapter::TrainResult MlpAdapter::train(const std::vector<Matd>& corpus, double threshold,
                                          int max_steps, double lr) {
  require_enabled();
  const RowMat x = stack_rows(corpus);
  TrainResult result;
  if (x.size() == 0) return result;
  const int d = token_dim_, k = latent_dim_;
  AdamW<double> opt(AdamWConfig{.lr = lr, .weight_decay = 0.0}, values_.size());
  std::vector<double> grad(values_.size());
  const double norm = 2.0 / static_cast<double>(x.size());
  for (int step = 0; step <= max_steps; ++step) {
    const auto v = views(values_, d, k);
    RowMat z = x * v.enc_w.transpose();
    z.rowwise() += v.enc_b.row(0);
    RowMat y = z * v.dec_w.transpose();
    y.rowwise() += v.dec_b.row(0);
    const RowMat diff = y - x;
    result.final_mse = diff.squaredNorm() / static_cast<double>(x.size());
    result.steps = step;
    if (result.final_mse < threshold || step == max_steps) break;
    const RowMat dy = norm * diff;
    const RowMat dz = dy * v.dec_w;
    Eigen::Map<RowMat>(grad.data(), k, d) = dz.transpose() * x;
    Eigen::Map<RowMat>(grad.data() + k * d, 1, k) = dz.colwise().sum();
    Eigen::Map<RowMat>(grad.data() + k * d + k, d, k) = dy.transpose() * z;
    Eigen::Map<RowMat>(grad.data() + 2 * k * d + k, 1, d) = dy.colwise().sum();
    opt.step(values_, grad);
  }
  return result;
}

}  // namespace dolfin
