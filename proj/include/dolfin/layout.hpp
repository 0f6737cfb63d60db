#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace dolfin {

inline constexpr int kTokenDim = 16;
inline constexpr int kCategoryBits = 8;
inline constexpr int kMaxCategory = 255;
inline constexpr int kPadCategory = 0;

using CategoryCode = std::array<double, kCategoryBits>;
using BoxVector = std::array<double, 4>;

enum class TokenMode { layout, segment };

const char* to_string(TokenMode mode) noexcept;
TokenMode token_mode_from_string(const char* text);

/// Axis-aligned box with a bottom-left origin, in scene units.
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double h = 0.0;
  double w = 0.0;
  int c = 1;

  bool operator==(const BoundingBox&) const = default;
};

struct Layout {
  double H = 1.0;
  double W = 1.0;
  std::vector<BoundingBox> boxes;

  bool operator==(const Layout&) const = default;
};

/// Normalized endpoints ((x1, y1), (x2, y2)), each coordinate in [0, 1].
struct Segment {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  bool operator==(const Segment&) const = default;
};

using SegmentSet = std::vector<Segment>;

struct DatasetConfig {
  int n_max = 16;
  int num_categories = 5;
  TokenMode mode = TokenMode::layout;
  double h_max = 1.0;
  double w_max = 1.0;

  void validate() const;

  /// Grid spacing that codec inputs are snapped to. A power of two, so every
  /// grid point is an exact double and decoding can snap back without loss.
  double coordinate_quantum() const;

  static DatasetConfig publaynet_like();
  static DatasetConfig rico_like();
};

using TokenRows = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// The diffusion state for one sample: n_max rows of 16 entries.
struct TokenMatrix {
  TokenRows rows;
  TokenMode mode = TokenMode::layout;

  TokenMatrix() = default;
  TokenMatrix(int n_rows, TokenMode m) : rows(TokenRows::Zero(n_rows, kTokenDim)), mode(m) {}

  int n_rows() const { return static_cast<int>(rows.rows()); }
};

// Column offsets inside a layout token.
namespace token_col {
inline constexpr int x = 0;
inline constexpr int y = 1;
inline constexpr int h = 2;
inline constexpr int w = 3;
inline constexpr int scene_h = 4;
inline constexpr int scene_w = 5;
inline constexpr int filler0 = 6;
inline constexpr int filler1 = 7;
inline constexpr int category = 8;
inline constexpr int segment_pad_flag = 4;
}  // namespace token_col

void validate_box(const BoundingBox& box, const Layout& layout);
void validate_layout(const Layout& layout, const DatasetConfig& cfg);
void validate_segment(const Segment& s);

BoxVector normalize_box(const BoundingBox& box, const Layout& layout);

CategoryCode encode_category(int c);
int decode_category(const double* values);
int decode_category(const CategoryCode& values);

/// Snaps every coordinate onto the codec grid of `cfg`.
Layout quantize(const Layout& layout, const DatasetConfig& cfg);
SegmentSet quantize(const SegmentSet& segments, const DatasetConfig& cfg);

TokenMatrix tokenize_layout(const Layout& layout, const DatasetConfig& cfg);

struct DecodeStats {
  std::size_t clamped_entries = 0;
};

Layout detokenize_layout(const TokenMatrix& m, const DatasetConfig& cfg,
                         DecodeStats* stats = nullptr);

TokenMatrix tokenize_segments(const SegmentSet& segments, const DatasetConfig& cfg);
SegmentSet detokenize_segments(const TokenMatrix& m, const DatasetConfig& cfg,
                               DecodeStats* stats = nullptr);

}  // namespace dolfin
