#pragma once

#include <string>

#include "migc/tensor.hpp"

namespace migc {

// Writes a [3,H,W] tensor with values in [0,1] as an 8-bit RGB PNG.
// Quantization is round-half-up to the nearest of 256 levels, so identical
// tensors produce byte-identical files.
void write_png(const std::string& path, const Tensor& img);

// Reads an 8-bit RGB(A) PNG back into a [3,H,W] tensor in [0,1]; the alpha
// channel, if present, is dropped. Throws ConfigError on unreadable files.
Tensor read_png(const std::string& path);

}  // namespace migc
