#pragma once

#include "migc/geometry.hpp"
#include "migc/tensor.hpp"

namespace migc {

// Sinusoidal position code for a box: for each coordinate c in
// (x1, y1, x2, y2) and each band j < bands, append sin(2^j * pi * c) and
// cos(2^j * pi * c). Length 8 * bands (64 at the default 8 bands).
Tensor fourier_embed(const Box& b, int bands = 8);

}  // namespace migc
