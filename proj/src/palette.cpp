#include "dolfin/palette.hpp"

#include <cmath>

namespace dolfin {

std::array<std::uint8_t, 3> category_color(int category) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 10> kTable{{
      {31, 119, 180},
      {255, 127, 14},
      {44, 160, 44},
      {214, 39, 40},
      {148, 103, 189},
      {140, 86, 75},
      {227, 119, 194},
      {127, 127, 127},
      {188, 189, 34},
      {23, 190, 207},
  }};
  if (category >= 1 && category <= static_cast<int>(kTable.size())) {
    return kTable[static_cast<std::size_t>(category - 1)];
  }
  const double hue = std::fmod(0.618033988749895 * category, 1.0) * 6.0;
  const double s = 0.65, v = 0.85;
  const int sector = static_cast<int>(hue) % 6;
  const double f = hue - std::floor(hue);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = v, g = t, b = p;
  switch (sector) {
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    case 5: r = v; g = p; b = q; break;
    default: break;
  }
  auto byte = [](double x) { return static_cast<std::uint8_t>(std::lround(x * 255.0)); };
  return {byte(r), byte(g), byte(b)};
}

}  // namespace dolfin
