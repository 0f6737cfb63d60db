#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "dolfin/layout.hpp"

namespace dolfin {

/// Row-major RGB image with channels in [0, 1].
struct Image {
  int size = 0;
  std::vector<float> rgb;

  float& at(int row, int col, int ch) { return rgb[(static_cast<std::size_t>(row) * size + col) * 3 + ch]; }
  float at(int row, int col, int ch) const { return rgb[(static_cast<std::size_t>(row) * size + col) * 3 + ch]; }
};

inline constexpr int kRasterSize = 256;

/// Category-colored boxes alpha-blended in input order over white; the scene
/// is stretched to the square canvas.
Image rasterize_layout(const Layout& layout, int size = kRasterSize);
Image rasterize_segments(const SegmentSet& segments, int size = kRasterSize);

using FeatureExtractor = std::function<Eigen::VectorXd(const Image&)>;

/// Average-pools to 32x32x3 and applies a fixed-seed Gaussian projection.
class RandomProjectionExtractor {
 public:
  explicit RandomProjectionExtractor(int dim = 64, std::uint64_t seed = 20240607, int pooled = 32);

  Eigen::VectorXd operator()(const Image& image) const;

 private:
  int pooled_;
  Eigen::MatrixXd projection_;
};

Eigen::MatrixXd extract_features(const std::vector<Image>& images, const FeatureExtractor& extractor);

/// ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)) between Gaussian fits of
/// the rows of each matrix (unbiased covariance).
double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
double frechet_from_moments(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& mu2,
                            const Eigen::MatrixXd& s2);

double feature_distance(const std::vector<Image>& generated, const std::vector<Image>& reference,
                        const FeatureExtractor& extractor);

}  // namespace dolfin
