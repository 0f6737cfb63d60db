#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dolfin/layout.hpp"

namespace dolfin {

/// A canonical dataset: header config plus layout or segment records, each
/// with an optional split tag ("" when absent).
struct Corpus {
  DatasetConfig config;
  std::vector<Layout> layouts;      // mode == layout
  std::vector<SegmentSet> segments;  // mode == segment
  std::vector<std::string> splits;

  std::size_t size() const { return config.mode == TokenMode::layout ? layouts.size() : segments.size(); }
};

/// Record invariants on top of the codec's: categories within num_categories.
void validate_record(const Layout& layout, const DatasetConfig& cfg);
void validate_record(const SegmentSet& segments, const DatasetConfig& cfg);

std::string serialize_canonical(const Corpus& corpus);
Corpus parse_canonical(const std::string& text);
Corpus load_canonical(const std::string& path);
void save_canonical(const std::string& path, const Corpus& corpus);

/// Tokenizes every record (quantized onto the codec grid first).
std::vector<TokenRows> tokenize_corpus(const Corpus& corpus);
TokenRows tokenize_record(const Corpus& corpus, std::size_t index);

enum class SourceStyle { publaynet, rico };

SourceStyle source_style_from_string(const std::string& text);

struct ConvertStats {
  std::size_t images = 0;
  std::size_t emitted = 0;
  std::size_t dropped_over_capacity = 0;
  std::size_t dropped_empty = 0;
  std::size_t clipped_boxes = 0;
  std::size_t dropped_degenerate_boxes = 0;
};

/// Detection-style annotations ({images, annotations, categories}) to the
/// canonical format: y flipped to a bottom-left origin, boxes clipped to the
/// image, layouts over n_max dropped. RICO-style corpora get an 85/5/10 split
/// by image id order.
Corpus convert_detection_annotations(const std::string& json_text, SourceStyle style, ConvertStats* stats = nullptr);

enum class SynthStyle { grid, columns };

SynthStyle synth_style_from_string(const std::string& text);

/// Aligned, non-overlapping layouts on the unit scene.
Corpus synth_layout_corpus(std::uint64_t seed, int n, SynthStyle style, const DatasetConfig& cfg);
/// Room-like rectilinear outlines plus diagonals, k segments per image.
Corpus synth_segment_corpus(std::uint64_t seed, int n, int k_segments, const DatasetConfig& cfg);

}  // namespace dolfin
