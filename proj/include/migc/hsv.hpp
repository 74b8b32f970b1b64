#pragma once

#include <array>
#include <string>
#include <vector>

#include "migc/tensor.hpp"

namespace migc {

struct Hsv {
  double h = 0;  // degrees in [0, 360)
  double s = 0;  // [0, 1]
  double v = 0;  // [0, 1]
};

// Standard hexcone conversion; inputs in [0,1]. Achromatic pixels get h = 0.
Hsv rgb_to_hsv(double r, double g, double b);

// One color's acceptance region: any listed hue interval [lo, hi) plus
// saturation/value bounds (lower inclusive, upper exclusive). An empty hue
// list accepts every hue (white / black are defined by s and v alone).
struct ColorRange {
  std::vector<std::pair<double, double>> hue;
  double s_lo = 0.0, s_hi = 1.01;
  double v_lo = 0.0, v_hi = 1.01;
  bool contains(const Hsv& p) const;
};

struct ColorRangeTable {
  std::vector<std::pair<std::string, ColorRange>> entries;
  static ColorRangeTable standard();
  const ColorRange& range(const std::string& color) const;  // ConfigError if unknown
  bool matches(const std::string& color, const Hsv& p) const;
};

// Render palette: one representative RGB per color name, chosen to sit
// inside its own range with margin.
struct Palette {
  std::vector<std::pair<std::string, std::array<double, 3>>> colors;
  static Palette standard();
  const std::array<double, 3>& rgb(const std::string& color) const;
};

}  // namespace migc
