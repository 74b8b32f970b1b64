#include "migc/fourier.hpp"

#include <cmath>

namespace migc {

Tensor fourier_embed(const Box& b, int bands) {
  const double pi = 3.14159265358979323846;
  const double coords[4] = {b.x1, b.y1, b.x2, b.y2};
  Tensor out({8 * bands});
  int k = 0;
  for (double c : coords) {
    double f = 1.0;
    for (int j = 0; j < bands; ++j, f *= 2.0) {
      out(k++) = std::sin(f * pi * c);
      out(k++) = std::cos(f * pi * c);
    }
  }
  return out;
}

}  // namespace migc
