#pragma once

#include <array>
#include <cstdint>

namespace dolfin {

/// Deterministic category color: a fixed table for small ids, golden-ratio
/// hue steps beyond it.
std::array<std::uint8_t, 3> category_color(int category);

}  // namespace dolfin
