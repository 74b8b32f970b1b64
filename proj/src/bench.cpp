#include "migc/bench.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace migc {

void BenchmarkSpec::validate() const {
  if (level_lo < 1 || level_hi < level_lo) throw ConfigError("benchmark levels out of order");
  if (layouts_per_level < 1 || seeds_per_layout < 1)
    throw ConfigError("benchmark needs at least one layout and one seed per level");
  if (grid < 8) throw ConfigError("benchmark grid too coarse");
  if (min_side_frac <= 0 || min_side_frac > 0.5) throw ConfigError("min_side_frac out of range");
  if (max_side_units<static_cast<int>(std::ceil(min_side_frac* grid)) || max_side_units> grid)
    throw ConfigError("max_side_units out of range");
  if (max_pair_iou < 0 || max_pair_iou >= 1) throw ConfigError("max_pair_iou out of range");
}

std::vector<Box> sample_layout(const BenchmarkSpec& spec, int level, Rng& rng) {
  spec.validate();
  if (level < 1 || level > spec.grid) throw ConfigError("layout level out of range");
  const int min_units = static_cast<int>(std::ceil(spec.min_side_frac * spec.grid));
  std::vector<Box> boxes;
  // a greedy prefix can paint the sampler into a corner; periodically restart
  // from scratch so tight constraints stay reachable within the budget
  const int restart_every = std::max(64, spec.max_attempts / 100);
  int attempts = 0;
  while (static_cast<int>(boxes.size()) < level) {
    if (++attempts > spec.max_attempts)
      throw ConfigError("could not place " + std::to_string(level) +
                        " boxes within the rejection budget");
    if (attempts % restart_every == 0) boxes.clear();
    const int w = rng.range_int(min_units, spec.max_side_units);
    const int h = rng.range_int(min_units, spec.max_side_units);
    const int x = rng.range_int(0, spec.grid - w);
    const int y = rng.range_int(0, spec.grid - h);
    Box b{static_cast<double>(x) / spec.grid, static_cast<double>(y) / spec.grid,
          static_cast<double>(x + w) / spec.grid, static_cast<double>(y + h) / spec.grid};
    bool ok = true;
    for (const Box& o : boxes)
      if (iou(b, o) > spec.max_pair_iou) {
        ok = false;
        break;
      }
    if (ok) boxes.push_back(b);
  }
  return boxes;
}

Scene assign_attributes(const std::vector<Box>& boxes, const Vocab& vocab,
                        const Palette& palette, Rng& rng) {
  const std::vector<std::string>& shapes = vocab.shapes();
  if (shapes.empty() || palette.colors.empty())
    throw ConfigError("attribute assignment needs shapes and a nonempty palette");
  Scene s;
  s.boxes = boxes;
  for (size_t i = 0; i < boxes.size(); ++i) {
    const auto& color = palette.colors[rng.below(palette.colors.size())].first;
    const auto& shape = shapes[rng.below(shapes.size())];
    s.phrases.push_back({color, shape});
  }
  return s;
}

bool shape_covers_pixel(const std::string& shape, const Box& box, int px, int py, int res) {
  const double x = (px + 0.5) / res, y = (py + 0.5) / res;
  if (x < box.x1 || x >= box.x2 || y < box.y1 || y >= box.y2) return false;
  const double w = box.w(), h = box.h();
  if (shape == "square") return true;
  if (shape == "circle") {
    const double cx = (box.x1 + box.x2) / 2, cy = (box.y1 + box.y2) / 2;
    const double dx = (x - cx) / (w / 2), dy = (y - cy) / (h / 2);
    return dx * dx + dy * dy <= 1.0;
  }
  if (shape == "triangle") {
    // apex top-center, full-width base at the bottom
    const double cx = (box.x1 + box.x2) / 2;
    const double half_width = (y - box.y1) / h * (w / 2);
    return std::fabs(x - cx) <= half_width;
  }
  if (shape == "cross") {
    // axis-aligned bars of exactly floor(side_px/4) pixels (min 1), centered
    // on the integer grid; integer arithmetic keeps the width parity exact
    const int x1p = static_cast<int>(std::lround(box.x1 * res));
    const int y1p = static_cast<int>(std::lround(box.y1 * res));
    const int wp = std::max(1, static_cast<int>(std::lround(w * res)));
    const int hp = std::max(1, static_cast<int>(std::lround(h * res)));
    const int bw = std::max(1, wp / 4), bh = std::max(1, hp / 4);
    const int c0 = x1p + (wp - bw) / 2, r0 = y1p + (hp - bh) / 2;
    return (px >= c0 && px < c0 + bw) || (py >= r0 && py < r0 + bh);
  }
  throw ConfigError("unknown shape '" + shape + "'");
}

GroundTruth render_ground_truth(const Scene& scene, int res, const Palette& palette) {
  GroundTruth gt;
  gt.image = Tensor::full({3, res, res}, 0.5);
  std::vector<int> owner(static_cast<size_t>(res) * res, -1);
  for (int i = 0; i < scene.n(); ++i) {
    const auto& rgb = palette.rgb(scene.phrases[static_cast<size_t>(i)].attr);
    const auto& shape = scene.phrases[static_cast<size_t>(i)].obj;
    for (int py = 0; py < res; ++py)
      for (int px = 0; px < res; ++px)
        if (shape_covers_pixel(shape, scene.boxes[static_cast<size_t>(i)], px, py, res)) {
          owner[static_cast<size_t>(py) * res + px] = i;
          for (int c = 0; c < 3; ++c) gt.image(c, py, px) = rgb[static_cast<size_t>(c)];
        }
  }
  gt.masks.assign(static_cast<size_t>(scene.n()), Tensor::zeros({res, res}));
  gt.tight_boxes.assign(static_cast<size_t>(scene.n()), Box{});
  std::vector<int> x_lo(static_cast<size_t>(scene.n()), res),
      x_hi(static_cast<size_t>(scene.n()), -1), y_lo(static_cast<size_t>(scene.n()), res),
      y_hi(static_cast<size_t>(scene.n()), -1);
  for (int py = 0; py < res; ++py)
    for (int px = 0; px < res; ++px) {
      const int i = owner[static_cast<size_t>(py) * res + px];
      if (i < 0) continue;
      gt.masks[static_cast<size_t>(i)](py, px) = 1.0;
      x_lo[i] = std::min(x_lo[i], px);
      x_hi[i] = std::max(x_hi[i], px);
      y_lo[i] = std::min(y_lo[i], py);
      y_hi[i] = std::max(y_hi[i], py);
    }
  for (int i = 0; i < scene.n(); ++i)
    if (x_hi[i] >= 0)
      gt.tight_boxes[static_cast<size_t>(i)] =
          Box{static_cast<double>(x_lo[i]) / res, static_cast<double>(y_lo[i]) / res,
              static_cast<double>(x_hi[i] + 1) / res, static_cast<double>(y_hi[i] + 1) / res};
  return gt;
}

std::vector<BenchCase> build_benchmark(const BenchmarkSpec& spec, const Vocab& vocab,
                                       const Palette& palette, uint64_t seed,
                                       const std::function<bool(const Scene&)>& filter,
                                       int* rejected) {
  spec.validate();
  Rng root(seed);
  std::vector<BenchCase> cases;
  int rej = 0;
  for (int level = spec.level_lo; level <= spec.level_hi; ++level) {
    for (int li = 0; li < spec.layouts_per_level; ++li) {
      Rng rng = root.fork("bench-layout", static_cast<uint64_t>(level) * 100000 + li);
      Scene scene;
      bool accepted = false;
      for (int tries = 0; tries < 200 && !accepted; ++tries) {
        scene = assign_attributes(sample_layout(spec, level, rng), vocab, palette, rng);
        accepted = !filter || filter(scene);
        if (!accepted) ++rej;
      }
      if (!accepted)
        throw ConfigError("benchmark filter rejected every candidate for level " +
                          std::to_string(level) + " layout " + std::to_string(li));
      BenchCase bc;
      bc.level = level;
      bc.layout_index = li;
      bc.scene = scene;
      bc.prompt = build_prompt(scene.phrases);
      cases.push_back(std::move(bc));
    }
  }
  if (rejected) *rejected = rej;
  return cases;
}

}  // namespace migc
