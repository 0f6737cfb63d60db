#pragma once

#include <string>
#include <vector>

#include "dolfin/layout.hpp"
#include "dolfin/sampler.hpp"

namespace dolfin {

struct RenderStyle {
  int canvas = 512;  // longer side in pixels
  double stroke_width = 1.0;
  double opacity = 0.5;
};

std::string render_svg(const Layout& layout, const RenderStyle& style = {});
std::string render_svg(const SegmentSet& segments, const RenderStyle& style = {});

/// Frame file name for a snapshot; zero padded so names sort in step order.
std::string frame_name(int steps_completed);

/// Writes one SVG per snapshot into `out_dir`, decoding each frame with the
/// clamping decoder. Returns the written paths in order.
std::vector<std::string> render_trajectory(const Trajectory& trajectory, const DatasetConfig& cfg,
                                           const std::string& out_dir, const RenderStyle& style = {});

/// Decodes a token matrix in the dataset's mode and renders it.
std::string render_tokens(const Matd& tokens, const DatasetConfig& cfg, const RenderStyle& style = {});

}  // namespace dolfin
