#include "migc/hsv.hpp"

#include <algorithm>
#include <cmath>

namespace migc {

Hsv rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  Hsv out;
  out.v = mx;
  out.s = mx > 0 ? d / mx : 0.0;
  if (d > 0) {
    double h;
    if (mx == r)
      h = std::fmod((g - b) / d, 6.0);
    else if (mx == g)
      h = (b - r) / d + 2.0;
    else
      h = (r - g) / d + 4.0;
    h *= 60.0;
    if (h < 0) h += 360.0;
    out.h = h >= 360.0 ? 0.0 : h;
  }
  return out;
}

bool ColorRange::contains(const Hsv& p) const {
  if (p.s < s_lo || p.s >= s_hi || p.v < v_lo || p.v >= v_hi) return false;
  if (hue.empty()) return true;
  for (const auto& [lo, hi] : hue)
    if (p.h >= lo && p.h < hi) return true;
  return false;
}

ColorRangeTable ColorRangeTable::standard() {
  ColorRangeTable t;
  auto chroma = [](std::vector<std::pair<double, double>> hue) {
    ColorRange r;
    r.hue = std::move(hue);
    r.s_lo = 0.4;
    r.v_lo = 0.3;
    return r;
  };
  t.entries.emplace_back("red", chroma({{0, 15}, {345, 360}}));
  t.entries.emplace_back("yellow", chroma({{45, 70}}));
  t.entries.emplace_back("green", chroma({{90, 150}}));
  t.entries.emplace_back("blue", chroma({{200, 260}}));
  ColorRange brown;
  brown.hue = {{10, 40}};
  brown.s_lo = 0.3;
  brown.v_lo = 0.2;
  brown.v_hi = 0.7;
  t.entries.emplace_back("brown", brown);
  ColorRange white;
  white.s_hi = 0.2;
  white.v_lo = 0.85;
  t.entries.emplace_back("white", white);
  ColorRange black;
  black.v_hi = 0.15;
  t.entries.emplace_back("black", black);
  return t;
}

const ColorRange& ColorRangeTable::range(const std::string& color) const {
  for (const auto& [name, r] : entries)
    if (name == color) return r;
  throw ConfigError("no HSV range for color '" + color + "'");
}

bool ColorRangeTable::matches(const std::string& color, const Hsv& p) const {
  return range(color).contains(p);
}

Palette Palette::standard() {
  Palette p;
  p.colors = {
      {"red", {1.0, 0.05, 0.05}},  {"yellow", {1.0, 0.95, 0.05}}, {"green", {0.05, 0.9, 0.1}},
      {"blue", {0.1, 0.2, 0.95}},  {"white", {0.98, 0.98, 0.98}}, {"black", {0.03, 0.03, 0.03}},
      {"brown", {0.55, 0.27, 0.08}},
  };
  return p;
}

const std::array<double, 3>& Palette::rgb(const std::string& color) const {
  for (const auto& [name, c] : colors)
    if (name == color) return c;
  throw ConfigError("no palette entry for color '" + color + "'");
}

}  // namespace migc
