#include "dolfin/features.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "dolfin/error.hpp"
#include "dolfin/palette.hpp"
#include "dolfin/rng.hpp"

namespace dolfin {
namespace {

constexpr float kFillAlpha = 0.5f;

Image blank(int size) {
  if (size < 1) throw Error(ErrorKind::range, "raster size must be >= 1");
  Image img;
  img.size = size;
  img.rgb.assign(static_cast<std::size_t>(size) * size * 3, 1.0f);
  return img;
}

void blend(Image& img, int row, int col, const std::array<std::uint8_t, 3>& color, float alpha) {
  for (int ch = 0; ch < 3; ++ch) {
    float& px = img.at(row, col, ch);
    px = (1.0f - alpha) * px + alpha * (static_cast<float>(color[static_cast<std::size_t>(ch)]) / 255.0f);
  }
}

// Pixel index range covering [lo, hi) of a unit interval.
std::pair<int, int> pixel_span(double lo, double hi, int size) {
  const int a = std::clamp(static_cast<int>(std::lround(lo * size)), 0, size);
  const int b = std::clamp(static_cast<int>(std::lround(hi * size)), 0, size);
  return {a, b};
}

}  // namespace

Image rasterize_layout(const Layout& layout, int size) {
  Image img = blank(size);
  for (const auto& box : layout.boxes) {
    const auto [c0, c1] = pixel_span(box.x / layout.W, (box.x + box.w) / layout.W, size);
    // Rows run top-down; the layout origin is bottom-left.
    const auto [r0, r1] = pixel_span(1.0 - (box.y + box.h) / layout.H, 1.0 - box.y / layout.H, size);
    const auto color = category_color(box.c);
    for (int r = r0; r < r1; ++r) {
      for (int c = c0; c < c1; ++c) blend(img, r, c, color, kFillAlpha);
    }
  }
  return img;
}

Image rasterize_segments(const SegmentSet& segments, int size) {
  Image img = blank(size);
  const std::array<std::uint8_t, 3> ink{0, 0, 0};
  for (const auto& s : segments) {
    const double len = std::hypot(s.x2 - s.x1, s.y2 - s.y1) * size;
    const int n = std::max(2, static_cast<int>(std::ceil(len * 2)) + 1);
    for (int k = 0; k < n; ++k) {
      const double f = static_cast<double>(k) / (n - 1);
      const int c = std::clamp(static_cast<int>((s.x1 + f * (s.x2 - s.x1)) * size), 0, size - 1);
      const int r = std::clamp(static_cast<int>((1.0 - (s.y1 + f * (s.y2 - s.y1))) * size), 0, size - 1);
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = ink[static_cast<std::size_t>(ch)];
    }
  }
  return img;
}

RandomProjectionExtractor::RandomProjectionExtractor(int dim, std::uint64_t seed, int pooled) : pooled_(pooled) {
  if (dim < 1 || pooled < 1) throw Error(ErrorKind::config, "extractor dimensions must be >= 1");
  const int in = pooled * pooled * 3;
  Rng rng(seed);
  projection_.resize(dim, in);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < in; ++j) projection_(i, j) = rng.normal() * scale;
  }
}

Eigen::VectorXd RandomProjectionExtractor::operator()(const Image& image) const {
  if (image.size % pooled_ != 0) {
    throw Error(ErrorKind::shape, fmt::format("image size {} is not a multiple of {}", image.size, pooled_));
  }
  const int cell = image.size / pooled_;
  Eigen::VectorXd pooled = Eigen::VectorXd::Zero(projection_.cols());
  for (int r = 0; r < image.size; ++r) {
    for (int c = 0; c < image.size; ++c) {
      const int idx = ((r / cell) * pooled_ + c / cell) * 3;
      for (int ch = 0; ch < 3; ++ch) pooled(idx + ch) += image.at(r, c, ch);
    }
  }
  pooled /= static_cast<double>(cell * cell);
  return projection_ * pooled;
}

Eigen::MatrixXd extract_features(const std::vector<Image>& images, const FeatureExtractor& extractor) {
  Eigen::MatrixXd out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Eigen::VectorXd f = extractor(images[i]);
    if (i == 0) out.resize(static_cast<Eigen::Index>(images.size()), f.size());
    if (f.size() != out.cols()) throw Error(ErrorKind::shape, "extractor returned features of varying width");
    out.row(static_cast<Eigen::Index>(i)) = f.transpose();
  }
  return out;
}

double frechet_from_moments(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& mu2,
                            const Eigen::MatrixXd& s2) {
  // tr((S1 S2)^(1/2)) = sum of sqrt eigenvalues of S1^(1/2) S2 S1^(1/2), which is symmetric PSD.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e1(s1);
  const Eigen::VectorXd ev1 = e1.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd root1 = e1.eigenvectors() * ev1.asDiagonal() * e1.eigenvectors().transpose();
  const Eigen::MatrixXd inner = root1 * s2 * root1;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e2((inner + inner.transpose()) / 2.0, Eigen::EigenvaluesOnly);
  const double tr_sqrt = e2.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
  return std::max(d, 0.0);
}

double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() < 2 || b.rows() < 2) throw Error(ErrorKind::validation, "feature distance needs at least 2 samples per side");
  if (a.cols() != b.cols()) throw Error(ErrorKind::shape, "feature widths differ");
  auto moments = [](const Eigen::MatrixXd& x) {
    const Eigen::VectorXd mu = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
    return std::pair{mu, cov};
  };
  const auto [mu1, s1] = moments(a);
  const auto [mu2, s2] = moments(b);
  return frechet_from_moments(mu1, s1, mu2, s2);
}

double feature_distance(const std::vector<Image>& generated, const std::vector<Image>& reference,
                        const FeatureExtractor& extractor) {
  if (generated.size() < 2 || reference.size() < 2) {
    throw Error(ErrorKind::validation, "feature distance needs at least 2 samples per side");
  }
  return frechet_distance(extract_features(generated, extractor), extract_features(reference, extractor));
}

}  // namespace dolfin
