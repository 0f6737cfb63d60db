#include "dolfin/data_io.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "dolfin/error.hpp"
#include "dolfin/fs_util.hpp"
#include "dolfin/rng.hpp"

namespace dolfin {
namespace {

using ojson = nlohmann::ordered_json;

constexpr int kFormatVersion = 1;

ojson header_json(const DatasetConfig& cfg) {
  ojson h;
  h["version"] = kFormatVersion;
  h["mode"] = to_string(cfg.mode);
  h["n_max"] = cfg.n_max;
  h["num_categories"] = cfg.num_categories;
  h["h_max"] = cfg.h_max;
  h["w_max"] = cfg.w_max;
  return h;
}

template <class T>
T field(const nlohmann::json& obj, const char* key) {
  if (!obj.contains(key)) throw Error(ErrorKind::parse, fmt::format("missing field '{}'", key));
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::parse, fmt::format("field '{}' has the wrong type", key));
  }
}

double number(const nlohmann::json& v, const char* what) {
  if (!v.is_number()) throw Error(ErrorKind::parse, fmt::format("{} must be a number", what));
  return v.get<double>();
}

Layout parse_layout(const nlohmann::json& rec) {
  Layout l;
  l.H = field<double>(rec, "H");
  l.W = field<double>(rec, "W");
  const auto& boxes = rec.contains("boxes") ? rec.at("boxes") : throw Error(ErrorKind::parse, "missing field 'boxes'");
  if (!boxes.is_array()) throw Error(ErrorKind::parse, "field 'boxes' must be an array");
  for (const auto& b : boxes) {
    if (!b.is_array() || b.size() != 5) throw Error(ErrorKind::parse, "each box must be [x, y, h, w, c]");
    const double c = number(b[4], "category");
    if (c != static_cast<double>(static_cast<int>(c))) throw Error(ErrorKind::parse, "category must be an integer");
    l.boxes.push_back({number(b[0], "x"), number(b[1], "y"), number(b[2], "h"), number(b[3], "w"), static_cast<int>(c)});
  }
  return l;
}

SegmentSet parse_segments(const nlohmann::json& rec) {
  SegmentSet s;
  const auto& segs = rec.contains("segments") ? rec.at("segments") : throw Error(ErrorKind::parse, "missing field 'segments'");
  if (!segs.is_array()) throw Error(ErrorKind::parse, "field 'segments' must be an array");
  for (const auto& v : segs) {
    if (!v.is_array() || v.size() != 4) throw Error(ErrorKind::parse, "each segment must be [x1, y1, x2, y2]");
    s.push_back({number(v[0], "x1"), number(v[1], "y1"), number(v[2], "x2"), number(v[3], "y2")});
  }
  return s;
}

}  // namespace

void validate_record(const Layout& layout, const DatasetConfig& cfg) {
  validate_layout(layout, cfg);
  for (std::size_t i = 0; i < layout.boxes.size(); ++i) {
    if (layout.boxes[i].c > cfg.num_categories) {
      throw Error(ErrorKind::validation, fmt::format("box {} has category {} but num_categories is {}", i,
                                                     layout.boxes[i].c, cfg.num_categories));
    }
  }
}

void validate_record(const SegmentSet& segments, const DatasetConfig& cfg) {
  if (static_cast<int>(segments.size()) > cfg.n_max) {
    throw Error(ErrorKind::capacity, fmt::format("record has {} segments but n_max is {}", segments.size(), cfg.n_max));
  }
  for (const auto& s : segments) validate_segment(s);
}

std::string serialize_canonical(const Corpus& corpus) {
  corpus.config.validate();
  std::string out = header_json(corpus.config).dump() + "\n";
  const std::size_t n = corpus.size();
  for (std::size_t i = 0; i < n; ++i) {
    ojson rec;
    if (corpus.config.mode == TokenMode::layout) {
      const Layout& l = corpus.layouts[i];
      validate_record(l, corpus.config);
      rec["H"] = l.H;
      rec["W"] = l.W;
      rec["boxes"] = ojson::array();
      for (const auto& b : l.boxes) rec["boxes"].push_back(ojson::array({b.x, b.y, b.h, b.w, b.c}));
    } else {
      const SegmentSet& s = corpus.segments[i];
      validate_record(s, corpus.config);
      rec["segments"] = ojson::array();
      for (const auto& seg : s) rec["segments"].push_back(ojson::array({seg.x1, seg.y1, seg.x2, seg.y2}));
    }
    if (i < corpus.splits.size() && !corpus.splits[i].empty()) rec["split"] = corpus.splits[i];
    out += rec.dump() + "\n";
  }
  return out;
}

Corpus parse_canonical(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  Corpus corpus;
  bool have_header = false;
  bool any_split = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::parse, fmt::format("malformed JSON ({})", e.what()));
      }
      if (!j.is_object()) throw Error(ErrorKind::parse, "expected a JSON object");
      if (!have_header) {
        const int version = field<int>(j, "version");
        if (version != kFormatVersion) {
          throw Error(ErrorKind::parse, fmt::format("unsupported format version {} (expected {})", version, kFormatVersion));
        }
        DatasetConfig cfg;
        cfg.mode = token_mode_from_string(field<std::string>(j, "mode").c_str());
        cfg.n_max = field<int>(j, "n_max");
        cfg.num_categories = field<int>(j, "num_categories");
        cfg.h_max = field<double>(j, "h_max");
        cfg.w_max = field<double>(j, "w_max");
        cfg.validate();
        corpus.config = cfg;
        have_header = true;
        continue;
      }
      std::string split;
      if (j.contains("split")) {
        split = field<std::string>(j, "split");
        if (split != "train" && split != "val" && split != "test") {
          throw Error(ErrorKind::parse, fmt::format("unknown split '{}'", split));
        }
        any_split = true;
      }
      if (corpus.config.mode == TokenMode::layout) {
        Layout l = parse_layout(j);
        validate_record(l, corpus.config);
        corpus.layouts.push_back(std::move(l));
      } else {
        SegmentSet s = parse_segments(j);
        validate_record(s, corpus.config);
        corpus.segments.push_back(std::move(s));
      }
      corpus.splits.push_back(split);
    } catch (const Error& e) {
      throw Error(e.kind(), fmt::format("line {}: {}", line_no, e.what()));
    }
  }
  if (!have_header) throw Error(ErrorKind::parse, "missing header line");
  if (!any_split) corpus.splits.clear();
  return corpus;
}

Corpus load_canonical(const std::string& path) {
  try {
    return parse_canonical(read_file(path));
  } catch (const Error& e) {
    throw Error(e.kind(), fmt::format("{}: {}", path, e.what()));
  }
}

void save_canonical(const std::string& path, const Corpus& corpus) { atomic_write(path, serialize_canonical(corpus)); }

TokenRows tokenize_record(const Corpus& corpus, std::size_t index) {
  if (corpus.config.mode == TokenMode::layout) {
    return tokenize_layout(quantize(corpus.layouts.at(index), corpus.config), corpus.config).rows;
  }
  return tokenize_segments(quantize(corpus.segments.at(index), corpus.config), corpus.config).rows;
}

std::vector<TokenRows> tokenize_corpus(const Corpus& corpus) {
  std::vector<TokenRows> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) out.push_back(tokenize_record(corpus, i));
  return out;
}

SourceStyle source_style_from_string(const std::string& text) {
  if (text == "publaynet") return SourceStyle::publaynet;
  if (text == "rico") return SourceStyle::rico;
  throw Error(ErrorKind::parse, fmt::format("unknown source style '{}' (expected publaynet|rico)", text));
}

Corpus convert_detection_annotations(const std::string& json_text, SourceStyle style, ConvertStats* stats) {
  nlohmann::json src;
  try {
    src = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::parse, fmt::format("annotation file is not valid JSON ({})", e.what()));
  }
  for (const char* key : {"images", "annotations", "categories"}) {
    if (!src.contains(key) || !src.at(key).is_array()) {
      throw Error(ErrorKind::parse, fmt::format("annotation file needs a '{}' array", key));
    }
  }
  DatasetConfig cfg = style == SourceStyle::publaynet ? DatasetConfig::publaynet_like() : DatasetConfig::rico_like();

  // Source category ids map, in ascending order, onto 1..K.
  std::set<std::int64_t> source_ids;
  for (const auto& c : src["categories"]) source_ids.insert(field<std::int64_t>(c, "id"));
  if (static_cast<int>(source_ids.size()) > cfg.num_categories) {
    throw Error(ErrorKind::validation, fmt::format("source lists {} categories but the {} style allows {}",
                                                   source_ids.size(), style == SourceStyle::publaynet ? "publaynet" : "rico",
                                                   cfg.num_categories));
  }
  std::map<std::int64_t, int> category_map;
  for (std::int64_t id : source_ids) category_map[id] = static_cast<int>(category_map.size()) + 1;

  struct ImageInfo {
    double width = 0.0, height = 0.0;
    std::vector<BoundingBox> boxes;
  };
  std::map<std::int64_t, ImageInfo> images;
  for (const auto& img : src["images"]) {
    ImageInfo info{field<double>(img, "width"), field<double>(img, "height"), {}};
    if (!(info.width > 0.0) || !(info.height > 0.0)) {
      throw Error(ErrorKind::validation, fmt::format("image {} has a non-positive size", img.value("id", -1)));
    }
    images[field<std::int64_t>(img, "id")] = info;
  }
  ConvertStats local;
  std::set<std::int64_t> unknown;
  for (const auto& a : src["annotations"]) {
    const auto cat = field<std::int64_t>(a, "category_id");
    auto cm = category_map.find(cat);
    if (cm == category_map.end()) {
      unknown.insert(cat);
      continue;
    }
    const auto image_id = field<std::int64_t>(a, "image_id");
    auto it = images.find(image_id);
    if (it == images.end()) throw Error(ErrorKind::validation, fmt::format("annotation refers to unknown image {}", image_id));
    const auto bbox = field<std::vector<double>>(a, "bbox");
    if (bbox.size() != 4) throw Error(ErrorKind::parse, "bbox must be [x, y, width, height]");
    ImageInfo& info = it->second;
    // Clip to the image, then flip from a top-left to a bottom-left origin.
    const double x0 = std::clamp(bbox[0], 0.0, info.width);
    const double x1 = std::clamp(bbox[0] + bbox[2], 0.0, info.width);
    const double top = std::clamp(bbox[1], 0.0, info.height);
    const double bottom = std::clamp(bbox[1] + bbox[3], 0.0, info.height);
    if (x0 != bbox[0] || x1 != bbox[0] + bbox[2] || top != bbox[1] || bottom != bbox[1] + bbox[3]) ++local.clipped_boxes;
    if (!(x1 > x0) || !(bottom > top)) {
      ++local.dropped_degenerate_boxes;
      continue;
    }
    info.boxes.push_back({x0, info.height - bottom, bottom - top, x1 - x0, cm->second});
  }
  if (!unknown.empty()) {
    std::string ids;
    for (auto id : unknown) ids += fmt::format("{}{}", ids.empty() ? "" : ", ", id);
    throw Error(ErrorKind::validation, fmt::format("unknown category ids: {}", ids));
  }
  cfg.h_max = 0.0;
  cfg.w_max = 0.0;
  for (const auto& [id, info] : images) {
    cfg.h_max = std::max(cfg.h_max, info.height);
    cfg.w_max = std::max(cfg.w_max, info.width);
  }
  if (images.empty()) cfg.h_max = cfg.w_max = 1.0;

  Corpus corpus;
  corpus.config = cfg;
  local.images = images.size();
  for (auto& [id, info] : images) {
    if (info.boxes.empty()) {
      ++local.dropped_empty;
      continue;
    }
    if (static_cast<int>(info.boxes.size()) > cfg.n_max) {
      ++local.dropped_over_capacity;
      continue;
    }
    Layout l{info.height, info.width, std::move(info.boxes)};
    validate_record(l, cfg);
    corpus.layouts.push_back(std::move(l));
  }
  local.emitted = corpus.layouts.size();
  if (style == SourceStyle::rico) {
    const std::size_t n = corpus.layouts.size();
    const std::size_t n_train = n * 85 / 100;
    const std::size_t n_val = n * 90 / 100;
    for (std::size_t i = 0; i < n; ++i) corpus.splits.push_back(i < n_train ? "train" : i < n_val ? "val" : "test");
  }
  if (stats) *stats = local;
  return corpus;
}

SynthStyle synth_style_from_string(const std::string& text) {
  if (text == "grid") return SynthStyle::grid;
  if (text == "columns") return SynthStyle::columns;
  throw Error(ErrorKind::parse, fmt::format("unknown synth style '{}' (expected grid|columns)", text));
}

namespace {

// Synthetic coordinates live on a 1/32 lattice of the unit scene.
constexpr double kUnit = 1.0 / 32.0;
constexpr int kUnits = 32;
constexpr int kMargin = 2;

int uniform_int(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(hi - lo + 1)); }

Layout synth_columns(Rng& rng, const DatasetConfig& cfg) {
  const int max_boxes = std::min(cfg.n_max, 12);
  const int columns = max_boxes >= 4 ? uniform_int(rng, 1, 2) : 1;
  const int usable = kUnits - 2 * kMargin;
  const int gutter = 2;
  const int col_width = columns == 1 ? usable : (usable - gutter) / 2;
  Layout l;
  for (int c = 0; c < columns; ++c) {
    const int left = kMargin + c * (col_width + gutter);
    const int budget = max_boxes / columns;
    const int want = uniform_int(rng, columns == 1 ? 2 : 1, std::max(columns == 1 ? 2 : 1, budget));
    int top = kUnits - kMargin;
    for (int k = 0; k < want; ++k) {
      const int h = uniform_int(rng, 2, 6);
      if (top - h < kMargin) break;
      // Every box starts at its column's left edge; widths vary.
      const int w = rng.below(3) == 0 ? col_width * 3 / 4 : col_width;
      l.boxes.push_back({left * kUnit, (top - h) * kUnit, h * kUnit, w * kUnit,
                         uniform_int(rng, 1, cfg.num_categories)});
      top -= h + 1;
    }
  }
  return l;
}

Layout synth_grid(Rng& rng, const DatasetConfig& cfg) {
  int rows = 1, cols = 1;
  do {
    rows = uniform_int(rng, 1, 3);
    cols = uniform_int(rng, 1, 3);
  } while (rows * cols < 2 || rows * cols > cfg.n_max);
  const int usable = kUnits - 2 * kMargin;
  const int cw = uniform_int(rng, 3, (usable - (cols - 1)) / cols);
  const int ch = uniform_int(rng, 3, (usable - (rows - 1)) / rows);
  Layout l;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int left = kMargin + c * (cw + 1);
      const int bottom = kUnits - kMargin - (r + 1) * ch - r;
      l.boxes.push_back({left * kUnit, bottom * kUnit, ch * kUnit, cw * kUnit, uniform_int(rng, 1, cfg.num_categories)});
    }
  }
  return l;
}

}  // namespace

Corpus synth_layout_corpus(std::uint64_t seed, int n, SynthStyle style, const DatasetConfig& cfg) {
  if (n < 1) throw Error(ErrorKind::range, "synth corpus size must be >= 1");
  cfg.validate();
  if (cfg.mode != TokenMode::layout) throw Error(ErrorKind::config, "layout synthesis needs a layout-mode config");
  if (cfg.n_max < 2) throw Error(ErrorKind::config, "layout synthesis needs n_max >= 2");
  if (cfg.h_max < 1.0 || cfg.w_max < 1.0) throw Error(ErrorKind::config, "layout synthesis uses a unit scene; h_max and w_max must be >= 1");
  Corpus corpus;
  corpus.config = cfg;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    Layout l = style == SynthStyle::columns ? synth_columns(rng, cfg) : synth_grid(rng, cfg);
    validate_record(l, cfg);
    corpus.layouts.push_back(std::move(l));
  }
  return corpus;
}

Corpus synth_segment_corpus(std::uint64_t seed, int n, int k_segments, const DatasetConfig& cfg) {
  if (n < 1) throw Error(ErrorKind::range, "synth corpus size must be >= 1");
  cfg.validate();
  if (cfg.mode != TokenMode::segment) throw Error(ErrorKind::config, "segment synthesis needs a segment-mode config");
  if (k_segments < 1 || k_segments > cfg.n_max) {
    throw Error(ErrorKind::range, fmt::format("k_segments must be in [1, n_max={}]", cfg.n_max));
  }
  Corpus corpus;
  corpus.config = cfg;
  Rng rng(seed);
  auto at = [](int u) { return u * kUnit; };
  for (int i = 0; i < n; ++i) {
    // Back wall of a room, the four perspective edges to the image corners,
    // then interior rectilinear lines (doors, shelves).
    const int x0 = uniform_int(rng, 6, 12), x1 = uniform_int(rng, 20, 26);
    const int y0 = uniform_int(rng, 6, 12), y1 = uniform_int(rng, 20, 26);
    SegmentSet s{
        {at(x0), at(y0), at(x1), at(y0)}, {at(x1), at(y0), at(x1), at(y1)},
        {at(x1), at(y1), at(x0), at(y1)}, {at(x0), at(y1), at(x0), at(y0)},
        {at(x0), at(y0), 0.0, 0.0},       {at(x1), at(y0), 1.0, 0.0},
        {at(x1), at(y1), 1.0, 1.0},       {at(x0), at(y1), 0.0, 1.0},
    };
    while (static_cast<int>(s.size()) < k_segments) {
      if (rng.below(2) == 0) {
        const int x = uniform_int(rng, x0 + 1, x1 - 1);
        s.push_back({at(x), at(y0), at(x), at(uniform_int(rng, y0 + 2, y1))});
      } else {
        const int y = uniform_int(rng, y0 + 1, y1 - 1);
        s.push_back({at(x0), at(y), at(uniform_int(rng, x0 + 2, x1)), at(y)});
      }
    }
    s.resize(static_cast<std::size_t>(k_segments));
    validate_record(s, cfg);
    corpus.segments.push_back(std::move(s));
  }
  return corpus;
}

}  // namespace dolfin
