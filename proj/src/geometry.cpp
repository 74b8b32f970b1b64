#include "migc/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace migc {

void validate_box(const Box& b, double min_side, bool allow_sentinel) {
  if (b.is_sentinel()) {
    if (allow_sentinel) return;
    throw ConfigError("box: sentinel not allowed here");
  }
  if (!(b.x1 >= 0 && b.x1 < b.x2 && b.x2 <= 1 && b.y1 >= 0 && b.y1 < b.y2 && b.y2 <= 1))
    throw ConfigError("box: coordinates must satisfy 0 <= lo < hi <= 1");
  if (b.w() < min_side || b.h() < min_side)
    throw ConfigError("box: side below minimum " + std::to_string(min_side));
}

Tensor rasterize_mask(const Box& b, int H, int W) {
  Tensor m({H, W});
  if (b.is_sentinel()) return m;
  for (int r = 0; r < H; ++r) {
    const double cy = (r + 0.5) / H;
    if (cy < b.y1 || cy >= b.y2) continue;
    for (int c = 0; c < W; ++c) {
      const double cx = (c + 0.5) / W;
      if (cx >= b.x1 && cx < b.x2) m(r, c) = 1.0;
    }
  }
  return m;
}

Tensor background_mask(const std::vector<Tensor>& inst_masks, int H, int W) {
  Tensor bg = Tensor::full({H, W}, 1.0);
  for (const Tensor& m : inst_masks) {
    if (m.shape != bg.shape) throw NumericError("background_mask: mask shape mismatch");
    for (size_t i = 0; i < bg.data.size(); ++i) bg.data[i] = std::min(bg.data[i], 1.0 - m.data[i]);
  }
  return bg;
}

Tensor layout_attention_mask(const std::vector<Tensor>& inst_masks, const Tensor& bg_mask) {
  const int HW = static_cast<int>(bg_mask.numel());
  Tensor A = Tensor::full({HW, HW}, kNegInf);
  auto stamp = [&](const Tensor& m) {
    // collect covered pixels once, then allow all pairs among them
    std::vector<int> px;
    for (int p = 0; p < HW; ++p)
      if (m.data[static_cast<size_t>(p)] > 0.0) px.push_back(p);
    for (int p : px) {
      double* row = &A.data[static_cast<size_t>(p) * HW];
      for (int q : px) row[q] = 0.0;
    }
  };
  stamp(bg_mask);
  for (const Tensor& m : inst_masks) {
    if (m.numel() != HW) throw NumericError("layout_attention_mask: mask size mismatch");
    stamp(m);
  }
  return A;
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace migc
