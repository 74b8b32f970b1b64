#pragma once

#include <vector>

#include "migc/tensor.hpp"

namespace migc {

// Axis-aligned box in normalized image coordinates, with half-open extent
// [x1,x2) x [y1,y2). The all-zero box is the padding sentinel.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  bool is_sentinel() const { return x1 == 0 && y1 == 0 && x2 == 0 && y2 == 0; }
  double w() const { return x2 - x1; }
  double h() const { return y2 - y1; }
  double area() const { return w() > 0 && h() > 0 ? w() * h() : 0.0; }
};

// Throws ConfigError unless 0 <= x1 < x2 <= 1 (same for y) and both sides are
// at least min_side. Sentinel boxes are accepted only when allow_sentinel.
void validate_box(const Box& b, double min_side, bool allow_sentinel = false);

// Binary {0,1} coverage mask of shape [H,W]: cell (r,c) is inside iff its
// center ((c+0.5)/W, (r+0.5)/H) falls in the half-open box. Sentinel -> zeros.
Tensor rasterize_mask(const Box& b, int H, int W);

// 1 - max over instance masks, per pixel; all ones when the list is empty.
Tensor background_mask(const std::vector<Tensor>& inst_masks, int H, int W);

// Additive self-attention mask of shape [H*W, H*W]: entry (p,q) is 0 when
// some mask in {bg, instances...} covers both pixels, else -inf.
Tensor layout_attention_mask(const std::vector<Tensor>& inst_masks, const Tensor& bg_mask);

// Exact interval-arithmetic IoU; degenerate boxes give 0.
double iou(const Box& a, const Box& b);

}  // namespace migc
