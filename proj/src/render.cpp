#include "dolfin/render.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <fmt/format.h>

#include "dolfin/error.hpp"
#include "dolfin/fs_util.hpp"
#include "dolfin/palette.hpp"

namespace dolfin {
namespace {

std::string num(double v) {
  std::string s = fmt::format("{:.3f}", v);
  if (s == "-0.000") s = "0.000";
  return s;
}

std::string open_svg(double width, double height) {
  return fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{0}\" height=\"{1}\" "
      "viewBox=\"0 0 {0} {1}\">\n"
      "<rect x=\"0\" y=\"0\" width=\"{0}\" height=\"{1}\" fill=\"#ffffff\"/>\n",
      num(width), num(height));
}

void check_style(const RenderStyle& style) {
  if (style.canvas < 1) throw Error(ErrorKind::range, "canvas size must be >= 1");
  if (style.opacity < 0.0 || style.opacity > 1.0) throw Error(ErrorKind::range, "opacity must be in [0, 1]");
}

}  // namespace

std::string render_svg(const Layout& layout, const RenderStyle& style) {
  check_style(style);
  const double scale = style.canvas / std::max(layout.H, layout.W);
  const double width = layout.W * scale;
  const double height = layout.H * scale;
  std::string out = open_svg(width, height);
  for (const auto& b : layout.boxes) {
    const auto c = category_color(b.c);
    // SVG y grows downward; layouts use a bottom-left origin.
    out += fmt::format(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#{:02x}{:02x}{:02x}\" fill-opacity=\"{}\" "
        "stroke=\"#{:02x}{:02x}{:02x}\" stroke-width=\"{}\" data-category=\"{}\"/>\n",
        num(b.x * scale), num((layout.H - b.y - b.h) * scale), num(b.w * scale), num(b.h * scale), c[0], c[1], c[2],
        num(style.opacity), c[0], c[1], c[2], num(style.stroke_width), b.c);
  }
  return out + "</svg>\n";
}

std::string render_svg(const SegmentSet& segments, const RenderStyle& style) {
  check_style(style);
  const double s = style.canvas;
  std::string out = open_svg(s, s);
  for (const auto& seg : segments) {
    out += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000000\" stroke-width=\"{}\"/>\n",
                       num(seg.x1 * s), num((1.0 - seg.y1) * s), num(seg.x2 * s), num((1.0 - seg.y2) * s),
                       num(style.stroke_width));
  }
  return out + "</svg>\n";
}

std::string frame_name(int steps_completed) { return fmt::format("frame_{:06d}.svg", steps_completed); }

std::string render_tokens(const Matd& tokens, const DatasetConfig& cfg, const RenderStyle& style) {
  TokenMatrix m(static_cast<int>(tokens.rows()), cfg.mode);
  m.rows = tokens;
  if (cfg.mode == TokenMode::layout) return render_svg(detokenize_layout(m, cfg), style);
  return render_svg(detokenize_segments(m, cfg), style);
}

std::vector<std::string> render_trajectory(const Trajectory& trajectory, const DatasetConfig& cfg,
                                           const std::string& out_dir, const RenderStyle& style) {
  if (trajectory.empty()) throw Error(ErrorKind::validation, "cannot render an empty trajectory");
  std::vector<std::string> paths;
  for (const auto& snap : trajectory) {
    const std::string path = (std::filesystem::path(out_dir) / frame_name(snap.steps_completed)).string();
    atomic_write(path, render_tokens(snap.x, cfg, style));
    paths.push_back(path);
  }
  return paths;
}

}  // namespace dolfin
