#include "dolfin/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "dolfin/error.hpp"
#include "dolfin/hungarian.hpp"

namespace dolfin {
namespace {

std::vector<NormBox> normalized_boxes(const Layout& layout) {
  std::vector<NormBox> out;
  out.reserve(layout.boxes.size());
  for (const auto& b : layout.boxes) out.push_back(normalized(b, layout));
  return out;
}

double corpus_mean(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

std::vector<int> category_multiset(const Layout& l) {
  std::vector<int> cs;
  for (const auto& b : l.boxes) cs.push_back(b.c);
  std::sort(cs.begin(), cs.end());
  return cs;
}

void require_nonempty(const std::vector<Layout>& generated, const std::vector<Layout>& reference, const char* what) {
  if (generated.empty() || reference.empty()) {
    throw Error(ErrorKind::validation, fmt::format("{} needs nonempty generated and reference corpora", what));
  }
}

}  // namespace

NormBox normalized(const BoundingBox& b, const Layout& layout) {
  return {b.x / layout.W, b.y / layout.H, (b.x + b.w) / layout.W, (b.y + b.h) / layout.H, b.c};
}

double intersection_area(const NormBox& a, const NormBox& b) {
  const double w = std::min(a.right, b.right) - std::max(a.left, b.left);
  const double h = std::min(a.top, b.top) - std::max(a.bottom, b.bottom);
  return w > 0.0 && h > 0.0 ? w * h : 0.0;
}

double iou(const NormBox& a, const NormBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  return iou(NormBox{a.x, a.y, a.x + a.w, a.y + a.h, a.c}, NormBox{b.x, b.y, b.x + b.w, b.y + b.h, b.c});
}

double layout_alignment(const Layout& layout) {
  const std::vector<NormBox> boxes = normalized_boxes(layout);
  const std::size_t n = boxes.size();
  if (n < 2) return 0.0;
  auto anchors = [](const NormBox& b) {
    return std::array<double, 6>{b.left, (b.left + b.right) / 2, b.right, b.top, (b.bottom + b.top) / 2, b.bottom};
  };
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto ai = anchors(boxes[i]);
    double g = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const auto aj = anchors(boxes[j]);
      for (std::size_t k = 0; k < 6; ++k) g = std::min(g, std::abs(ai[k] - aj[k]));
    }
    sum += -std::log(1.0 - g);
  }
  return 100.0 * sum / static_cast<double>(n);
}

double layout_overlap(const Layout& layout) {
  const std::vector<NormBox> boxes = normalized_boxes(layout);
  double total_area = 0.0;
  double inter = 0.0;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    total_area += boxes[i].area();
    for (std::size_t j = i + 1; j < boxes.size(); ++j) inter += intersection_area(boxes[i], boxes[j]);
  }
  return total_area > 0.0 ? 100.0 * inter / total_area : 0.0;
}

double alignment_score(const std::vector<Layout>& layouts, std::vector<double>* per_layout) {
  std::vector<double> v;
  for (const auto& l : layouts) v.push_back(layout_alignment(l));
  if (per_layout) *per_layout = v;
  return corpus_mean(v);
}

double overlap_score(const std::vector<Layout>& layouts, std::vector<double>* per_layout) {
  std::vector<double> v;
  for (const auto& l : layouts) v.push_back(layout_overlap(l));
  if (per_layout) *per_layout = v;
  return corpus_mean(v);
}

double layout_max_iou(const Layout& a, const Layout& b) {
  const std::size_t denom = std::max(a.boxes.size(), b.boxes.size());
  if (denom == 0) return 1.0;
  if (a.boxes.empty() || b.boxes.empty()) return 0.0;
  const auto na = normalized_boxes(a);
  const auto nb = normalized_boxes(b);
  Eigen::MatrixXd w(static_cast<Eigen::Index>(na.size()), static_cast<Eigen::Index>(nb.size()));
  for (std::size_t i = 0; i < na.size(); ++i) {
    for (std::size_t j = 0; j < nb.size(); ++j) {
      w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = na[i].c == nb[j].c ? iou(na[i], nb[j]) : 0.0;
    }
  }
  return max_weight_matching(w).cost / static_cast<double>(denom);
}

double max_iou(const std::vector<Layout>& generated, const std::vector<Layout>& reference,
               std::vector<double>* per_layout) {
  require_nonempty(generated, reference, "max_iou");
  std::vector<std::vector<int>> ref_sets;
  for (const auto& r : reference) ref_sets.push_back(category_multiset(r));
  std::vector<double> v;
  for (const auto& g : generated) {
    const std::vector<int> key = category_multiset(g);
    std::vector<std::size_t> candidates;
    for (std::size_t r = 0; r < reference.size(); ++r) {
      if (ref_sets[r] == key) candidates.push_back(r);
    }
    if (candidates.empty()) {
      for (std::size_t r = 0; r < reference.size(); ++r) candidates.push_back(r);
    }
    double best = 0.0;
    for (std::size_t r : candidates) best = std::max(best, layout_max_iou(g, reference[r]));
    v.push_back(best);
  }
  if (per_layout) *per_layout = v;
  return corpus_mean(v);
}

double docsim_weight(const NormBox& a, const NormBox& b) {
  const double min_area = std::min(a.area(), b.area());
  if (!(min_area > 0.0)) return 0.0;
  const double dx = (a.left + a.right) / 2 - (b.left + b.right) / 2;
  const double dy = (a.bottom + a.top) / 2 - (b.bottom + b.top) / 2;
  const double dc = std::sqrt(dx * dx + dy * dy);
  const double ds = std::abs(a.width() - b.width()) + std::abs(a.height() - b.height());
  return std::sqrt(min_area) * std::pow(2.0, -dc - 2.0 * ds);
}

double layout_docsim(const Layout& a, const Layout& b) {
  const std::size_t denom = std::max(a.boxes.size(), b.boxes.size());
  if (a.boxes.empty() || b.boxes.empty()) return 0.0;
  const auto na = normalized_boxes(a);
  const auto nb = normalized_boxes(b);
  Eigen::MatrixXd w(static_cast<Eigen::Index>(na.size()), static_cast<Eigen::Index>(nb.size()));
  for (std::size_t i = 0; i < na.size(); ++i) {
    for (std::size_t j = 0; j < nb.size(); ++j) {
      w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = docsim_weight(na[i], nb[j]);
    }
  }
  return max_weight_matching(w).cost / static_cast<double>(denom);
}

double docsim(const std::vector<Layout>& generated, const std::vector<Layout>& reference,
              std::vector<double>* per_layout) {
  require_nonempty(generated, reference, "docsim");
  std::vector<double> v;
  for (const auto& g : generated) {
    double best = 0.0;
    for (const auto& r : reference) best = std::max(best, layout_docsim(g, r));
    v.push_back(best);
  }
  if (per_layout) *per_layout = v;
  return corpus_mean(v);
}

double line_distance(const Segment& a, const Segment& b) {
  return std::abs(a.x1 - b.x1) + std::abs(a.y1 - b.y1) + std::abs(a.x2 - b.x2) + std::abs(a.y2 - b.y2);
}

double image_distance(const SegmentSet& a, const SegmentSet& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::validation, fmt::format("segment counts differ ({} vs {})", a.size(), b.size()));
  }
  if (a.empty()) return 0.0;
  const auto n = static_cast<Eigen::Index>(a.size());
  Eigen::MatrixXd c(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      c(i, j) = line_distance(a[static_cast<std::size_t>(i)], b[static_cast<std::size_t>(j)]);
    }
  }
  return hungarian(c).cost;
}

double difference_score(const std::vector<SegmentSet>& a, const std::vector<SegmentSet>& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::validation, fmt::format("difference_score needs equal set sizes ({} vs {})", a.size(), b.size()));
  }
  if (a.empty()) return 0.0;
  const std::size_t k = a.front().size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != k) {
      throw Error(ErrorKind::validation, fmt::format("image {} of the first set has {} segments, expected {}", i, a[i].size(), k));
    }
    if (b[i].size() != k) {
      throw Error(ErrorKind::validation, fmt::format("image {} of the second set has {} segments, expected {}", i, b[i].size(), k));
    }
  }
  const auto n = static_cast<Eigen::Index>(a.size());
  Eigen::MatrixXd c(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      c(i, j) = image_distance(a[static_cast<std::size_t>(i)], b[static_cast<std::size_t>(j)]);
    }
  }
  return hungarian(c).cost / static_cast<double>(n);
}

}  // namespace dolfin
