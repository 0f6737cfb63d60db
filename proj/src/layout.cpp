#include "dolfin/layout.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include <fmt/format.h>

#include "dolfin/error.hpp"

namespace dolfin {
namespace {

double snap(double v, double quantum) { return std::nearbyint(v / quantum) * quantum; }

double clamp_unit(double v, DecodeStats* stats) {
  if (v < -1.0 || v > 1.0 || std::isnan(v)) {
    if (stats) ++stats->clamped_entries;
    if (std::isnan(v)) return -1.0;
    return std::clamp(v, -1.0, 1.0);
  }
  return v;
}

// Maps a value in [0, extent] onto [-1, 1] and back.
double to_signed(double v, double extent) { return 2.0 * v / extent - 1.0; }
double from_signed(double v, double extent) { return (v + 1.0) / 2.0 * extent; }

void require_finite(double v, const char* field) {
  if (!std::isfinite(v)) {
    throw Error(ErrorKind::validation, fmt::format("field '{}' is not finite", field));
  }
}

}  // namespace

const char* to_string(TokenMode mode) noexcept {
  return mode == TokenMode::layout ? "layout" : "segment";
}

TokenMode token_mode_from_string(const char* text) {
  if (std::strcmp(text, "layout") == 0) return TokenMode::layout;
  if (std::strcmp(text, "segment") == 0) return TokenMode::segment;
  throw Error(ErrorKind::parse, fmt::format("unknown token mode '{}'", text));
}

void DatasetConfig::validate() const {
  if (n_max < 1) throw Error(ErrorKind::config, fmt::format("n_max must be >= 1, got {}", n_max));
  if (num_categories < 0 || num_categories > kMaxCategory) {
    throw Error(ErrorKind::config,
                fmt::format("num_categories must be in [0, 255], got {}", num_categories));
  }
  if (!(h_max > 0.0) || !(w_max > 0.0) || !std::isfinite(h_max) || !std::isfinite(w_max)) {
    throw Error(ErrorKind::config, "h_max and w_max must be positive and finite");
  }
}

double DatasetConfig::coordinate_quantum() const {
  if (mode == TokenMode::segment) return std::ldexp(1.0, -24);
  const int exponent = std::ilogb(std::max(h_max, w_max));
  return std::ldexp(1.0, exponent - 24);
}

DatasetConfig DatasetConfig::publaynet_like() {
  return DatasetConfig{.n_max = 16, .num_categories = 5, .mode = TokenMode::layout,
                       .h_max = 1.0, .w_max = 1.0};
}

DatasetConfig DatasetConfig::rico_like() {
  return DatasetConfig{.n_max = 25, .num_categories = 25, .mode = TokenMode::layout,
                       .h_max = 1.0, .w_max = 1.0};
}

void validate_box(const BoundingBox& box, const Layout& layout) {
  require_finite(box.x, "x");
  require_finite(box.y, "y");
  require_finite(box.h, "h");
  require_finite(box.w, "w");
  if (box.h < 0.0) throw Error(ErrorKind::validation, fmt::format("field 'h' is negative ({})", box.h));
  if (box.w < 0.0) throw Error(ErrorKind::validation, fmt::format("field 'w' is negative ({})", box.w));
  if (box.c < 1 || box.c > kMaxCategory) {
    throw Error(ErrorKind::validation, fmt::format("field 'c' must be in [1, 255], got {}", box.c));
  }
  if (box.x < 0.0 || box.x + box.w > layout.W) {
    throw Error(ErrorKind::validation,
                fmt::format("field 'x' places the box outside [0, W={}] (x={}, w={})", layout.W,
                            box.x, box.w));
  }
  if (box.y < 0.0 || box.y + box.h > layout.H) {
    throw Error(ErrorKind::validation,
                fmt::format("field 'y' places the box outside [0, H={}] (y={}, h={})", layout.H,
                            box.y, box.h));
  }
}

void validate_layout(const Layout& layout, const DatasetConfig& cfg) {
  require_finite(layout.H, "H");
  require_finite(layout.W, "W");
  if (!(layout.H > 0.0)) throw Error(ErrorKind::validation, "field 'H' must be positive");
  if (!(layout.W > 0.0)) throw Error(ErrorKind::validation, "field 'W' must be positive");
  if (layout.H > cfg.h_max) {
    throw Error(ErrorKind::validation,
                fmt::format("field 'H' exceeds the dataset maximum ({} > {})", layout.H, cfg.h_max));
  }
  if (layout.W > cfg.w_max) {
    throw Error(ErrorKind::validation,
                fmt::format("field 'W' exceeds the dataset maximum ({} > {})", layout.W, cfg.w_max));
  }
  if (static_cast<int>(layout.boxes.size()) > cfg.n_max) {
    throw Error(ErrorKind::capacity, fmt::format("layout has {} boxes but n_max is {}",
                                                 layout.boxes.size(), cfg.n_max));
  }
  for (const auto& box : layout.boxes) validate_box(box, layout);
}

void validate_segment(const Segment& s) {
  const std::pair<double, const char*> coords[] = {
      {s.x1, "x1"}, {s.y1, "y1"}, {s.x2, "x2"}, {s.y2, "y2"}};
  for (auto [v, name] : coords) {
    require_finite(v, name);
    if (v < 0.0 || v > 1.0) {
      throw Error(ErrorKind::validation, fmt::format("field '{}' must be in [0, 1], got {}", name, v));
    }
  }
}

BoxVector normalize_box(const BoundingBox& box, const Layout& layout) {
  validate_box(box, layout);
  return {to_signed(box.x, layout.W), to_signed(box.y, layout.H), to_signed(box.h, layout.H),
          to_signed(box.w, layout.W)};
}

CategoryCode encode_category(int c) {
  if (c < 0 || c > kMaxCategory) {
    throw Error(ErrorKind::range, fmt::format("category {} outside [0, 255]", c));
  }
  CategoryCode code{};
  for (int k = 0; k < kCategoryBits; ++k) code[k] = ((c >> k) & 1) ? 1.0 : -1.0;
  return code;
}

int decode_category(const double* values) {
  int c = 0;
  for (int k = 0; k < kCategoryBits; ++k) {
    if (values[k] > 0.0) c |= 1 << k;
  }
  return c;
}

int decode_category(const CategoryCode& values) { return decode_category(values.data()); }

Layout quantize(const Layout& layout, const DatasetConfig& cfg) {
  const double q = cfg.coordinate_quantum();
  Layout out = layout;
  out.H = snap(layout.H, q);
  out.W = snap(layout.W, q);
  if (out.H > cfg.h_max) out.H = std::floor(cfg.h_max / q) * q;
  if (out.W > cfg.w_max) out.W = std::floor(cfg.w_max / q) * q;
  for (auto& b : out.boxes) {
    b.x = snap(b.x, q);
    b.y = snap(b.y, q);
    b.h = snap(b.h, q);
    b.w = snap(b.w, q);
    // Snapping may push an edge one quantum past the scene border.
    if (b.x + b.w > out.W) b.w = out.W - b.x;
    if (b.y + b.h > out.H) b.h = out.H - b.y;
  }
  return out;
}

SegmentSet quantize(const SegmentSet& segments, const DatasetConfig& cfg) {
  const double q = cfg.coordinate_quantum();
  SegmentSet out = segments;
  for (auto& s : out) {
    s.x1 = snap(s.x1, q);
    s.y1 = snap(s.y1, q);
    s.x2 = snap(s.x2, q);
    s.y2 = snap(s.y2, q);
  }
  return out;
}

TokenMatrix tokenize_layout(const Layout& layout, const DatasetConfig& cfg) {
  if (cfg.mode != TokenMode::layout) {
    throw Error(ErrorKind::config, "tokenize_layout requires a layout-mode dataset config");
  }
  validate_layout(layout, cfg);
  TokenMatrix m(cfg.n_max, TokenMode::layout);
  const double scene_h = to_signed(layout.H, cfg.h_max);
  const double scene_w = to_signed(layout.W, cfg.w_max);
  const CategoryCode pad_code = encode_category(kPadCategory);
  for (int i = 0; i < cfg.n_max; ++i) {
    auto row = m.rows.row(i);
    const bool is_box = i < static_cast<int>(layout.boxes.size());
    if (is_box) {
      const BoxVector v = normalize_box(layout.boxes[i], layout);
      for (int k = 0; k < 4; ++k) row(k) = v[k];
    } else {
      row.head(4).setConstant(-1.0);
    }
    row(token_col::scene_h) = scene_h;
    row(token_col::scene_w) = scene_w;
    row(token_col::filler0) = -1.0;
    row(token_col::filler1) = -1.0;
    const CategoryCode code = is_box ? encode_category(layout.boxes[i].c) : pad_code;
    for (int k = 0; k < kCategoryBits; ++k) row(token_col::category + k) = code[k];
  }
  return m;
}

Layout detokenize_layout(const TokenMatrix& m, const DatasetConfig& cfg, DecodeStats* stats) {
  const double q = cfg.coordinate_quantum();
  Layout out;
  const int n = m.n_rows();
  if (n == 0 || m.rows.cols() != kTokenDim) {
    throw Error(ErrorKind::shape, "token matrix must have 16 columns and at least one row");
  }
  double sum_h = 0.0;
  double sum_w = 0.0;
  for (int i = 0; i < n; ++i) {
    sum_h += clamp_unit(m.rows(i, token_col::scene_h), stats);
    sum_w += clamp_unit(m.rows(i, token_col::scene_w), stats);
  }
  out.H = std::max(snap(from_signed(sum_h / n, cfg.h_max), q), q);
  out.W = std::max(snap(from_signed(sum_w / n, cfg.w_max), q), q);
  for (int i = 0; i < n; ++i) {
    const double* row = m.rows.row(i).data();
    const int c = decode_category(row + token_col::category);
    if (c == kPadCategory) continue;
    if (cfg.num_categories > 0 && c > cfg.num_categories) continue;
    BoundingBox b;
    b.c = c;
    b.x = snap(from_signed(clamp_unit(row[token_col::x], stats), out.W), q);
    b.y = snap(from_signed(clamp_unit(row[token_col::y], stats), out.H), q);
    b.h = snap(from_signed(clamp_unit(row[token_col::h], stats), out.H), q);
    b.w = snap(from_signed(clamp_unit(row[token_col::w], stats), out.W), q);
    // Overhanging boxes move inward so their size survives decoding.
    b.x = std::min(b.x, out.W - b.w);
    b.y = std::min(b.y, out.H - b.h);
    out.boxes.push_back(b);
  }
  return out;
}

TokenMatrix tokenize_segments(const SegmentSet& segments, const DatasetConfig& cfg) {
  if (cfg.mode != TokenMode::segment) {
    throw Error(ErrorKind::config, "tokenize_segments requires a segment-mode dataset config");
  }
  if (static_cast<int>(segments.size()) > cfg.n_max) {
    throw Error(ErrorKind::capacity, fmt::format("segment set has {} segments but n_max is {}",
                                                 segments.size(), cfg.n_max));
  }
  TokenMatrix m(cfg.n_max, TokenMode::segment);
  m.rows.setConstant(-1.0);
  for (int i = 0; i < cfg.n_max; ++i) {
    if (i < static_cast<int>(segments.size())) {
      const Segment& s = segments[i];
      validate_segment(s);
      m.rows(i, 0) = 2.0 * s.x1 - 1.0;
      m.rows(i, 1) = 2.0 * s.y1 - 1.0;
      m.rows(i, 2) = 2.0 * s.x2 - 1.0;
      m.rows(i, 3) = 2.0 * s.y2 - 1.0;
    } else {
      m.rows(i, token_col::segment_pad_flag) = 1.0;
    }
  }
  return m;
}

SegmentSet detokenize_segments(const TokenMatrix& m, const DatasetConfig& cfg, DecodeStats* stats) {
  if (m.rows.cols() != kTokenDim) throw Error(ErrorKind::shape, "token matrix must have 16 columns");
  const double q = cfg.coordinate_quantum();
  SegmentSet out;
  for (int i = 0; i < m.n_rows(); ++i) {
    if (m.rows(i, token_col::segment_pad_flag) > 0.0) continue;
    auto coord = [&](int k) { return snap((clamp_unit(m.rows(i, k), stats) + 1.0) / 2.0, q); };
    out.push_back(Segment{coord(0), coord(1), coord(2), coord(3)});
  }
  return out;
}

}  // namespace dolfin
