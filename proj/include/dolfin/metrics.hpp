#pragma once

#include <map>
#include <string>
#include <vector>

#include "dolfin/layout.hpp"

namespace dolfin {

/// Box edges in per-layout normalized [0, 1] coordinates (bottom-left origin).
struct NormBox {
  double left = 0.0, bottom = 0.0, right = 0.0, top = 0.0;
  int c = 0;

  double width() const { return right - left; }
  double height() const { return top - bottom; }
  double area() const { return width() * height(); }
};

NormBox normalized(const BoundingBox& b, const Layout& layout);

double intersection_area(const NormBox& a, const NormBox& b);
double iou(const NormBox& a, const NormBox& b);
/// IoU of two boxes in the same scene.
double iou(const BoundingBox& a, const BoundingBox& b);

double layout_alignment(const Layout& layout);
double layout_overlap(const Layout& layout);
/// Corpus means; `per_layout`, when given, receives each layout's value.
double alignment_score(const std::vector<Layout>& layouts, std::vector<double>* per_layout = nullptr);
double overlap_score(const std::vector<Layout>& layouts, std::vector<double>* per_layout = nullptr);

/// Same-category max-IoU matching normalized by the larger box count.
double layout_max_iou(const Layout& a, const Layout& b);
double max_iou(const std::vector<Layout>& generated, const std::vector<Layout>& reference,
               std::vector<double>* per_layout = nullptr);

/// sqrt(min area) * 2^(-center distance - 2 * size difference).
double docsim_weight(const NormBox& a, const NormBox& b);
double layout_docsim(const Layout& a, const Layout& b);
double docsim(const std::vector<Layout>& generated, const std::vector<Layout>& reference,
              std::vector<double>* per_layout = nullptr);

double line_distance(const Segment& a, const Segment& b);
/// Min-cost segment matching between two images with equal segment counts.
double image_distance(const SegmentSet& a, const SegmentSet& b);
double difference_score(const std::vector<SegmentSet>& a, const std::vector<SegmentSet>& b);

struct MetricReport {
  std::map<std::string, double> scalars;
  std::map<std::string, std::vector<double>> per_sample;
  std::map<std::string, std::string> metadata;
};

}  // namespace dolfin
