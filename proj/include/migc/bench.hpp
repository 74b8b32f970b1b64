#pragma once

#include <functional>
#include <string>
#include <vector>

#include "migc/geometry.hpp"
#include "migc/hsv.hpp"
#include "migc/rng.hpp"
#include "migc/vocab.hpp"

namespace migc {

// One fully specified test scene: boxes paired with "<color> <shape>"
// descriptions. Box coordinates are multiples of 1/grid so ground-truth
// rasterization is exact.
struct Scene {
  std::vector<Box> boxes;
  std::vector<Phrase> phrases;
  int n() const { return static_cast<int>(boxes.size()); }
};

struct BenchmarkSpec {
  int level_lo = 2, level_hi = 4;      // instance counts per level, inclusive
  int layouts_per_level = 50;
  int seeds_per_layout = 4;
  int grid = 32;                       // coordinate quantization
  double min_side_frac = 1.0 / 8.0;    // per-side lower bound
  int max_side_units = 16;             // upper bound in grid units
  double max_pair_iou = 0.3;           // pairwise overlap cap
  int max_attempts = 20000;            // rejection budget per layout
  void validate() const;
};

// Boxes only: `level` rectangles on the unit square, sides in
// [min_side_frac, max_side_units/grid], pairwise IoU <= max_pair_iou,
// coordinates on the 1/grid lattice. Throws ConfigError when the rejection
// budget runs out.
std::vector<Box> sample_layout(const BenchmarkSpec& spec, int level, Rng& rng);

// Uniform color/shape assignment from the palette and the vocab's shapes.
Scene assign_attributes(const std::vector<Box>& boxes, const Vocab& vocab,
                        const Palette& palette, Rng& rng);

struct GroundTruth {
  Tensor image;                      // [3,res,res] in [0,1]
  std::vector<Tensor> masks;         // visible region per instance, [res,res]
  std::vector<Box> tight_boxes;      // bbox of each visible region (zeros if empty)
};

// Deterministic rasterization over a neutral gray background; instances are
// stamped in order, later ones occluding earlier ones. Masks are the
// finally-visible regions (the segmenter oracle's answer).
GroundTruth render_ground_truth(const Scene& scene, int res, const Palette& palette);

// Shape membership test used by the renderer and by tests: does the pixel
// centered at (px+0.5, py+0.5) in a res-sized frame fall inside `shape`
// drawn in `box`?
bool shape_covers_pixel(const std::string& shape, const Box& box, int px, int py, int res);

// One benchmark case: a scene plus its global prompt.
struct BenchCase {
  int level = 0;
  int layout_index = 0;
  Scene scene;
  std::string prompt;
};

// Samples the full benchmark. `filter`, when set, re-samples any layout the
// predicate rejects (used to keep only layouts whose ground-truth render
// survives the evaluation oracle); rejected counts are reported through
// `rejected` when non-null.
std::vector<BenchCase> build_benchmark(const BenchmarkSpec& spec, const Vocab& vocab,
                                       const Palette& palette, uint64_t seed,
                                       const std::function<bool(const Scene&)>& filter = {},
                                       int* rejected = nullptr);

}  // namespace migc
