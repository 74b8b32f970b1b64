#pragma once

#include <string>
#include <vector>

#include "migc/bench.hpp"
#include "migc/geometry.hpp"
#include "migc/hsv.hpp"

namespace migc {

// Fill-ratio classification bands, [lo, hi) over component_area / bbox_area.
// Defaults separate the four rendered shapes exactly at every legal size.
struct ShapeBands {
  double cross_hi = 0.46;     // rendered crosses top out at 0.4375, triangles start at 0.4857
  double triangle_hi = 0.725; // triangles top out at 0.70, circles start at 0.75
  double circle_hi = 0.94;    // circles top out at 0.8889, squares are exactly 1

  std::string classify(double fill) const;
  void validate() const;  // bands must be ordered
};

// When several detections compete for one instance: score the one with the
// highest IoU against the target box, or the one whose center sits closest
// to the target's center.
enum class TieRule { kMaxIou, kClosest };

struct EvalConfig {
  ColorRangeTable colors = ColorRangeTable::standard();
  ShapeBands bands;
  double iou_threshold = 0.5;       // position test t
  double color_threshold = 0.2;     // attribute test S
  double a_min_frac = 0.25 / 64.0;  // detector min area as a fraction of H*W
  TieRule tie_rule = TieRule::kMaxIou;
  void validate() const;
};

struct Detection {
  Box box;           // tight bbox in unit coordinates
  Tensor mask;       // [res,res] binary region
  int area = 0;
  double fill = 0;   // area / bbox pixel area
  std::string shape; // band classification
};

// Color segmentation + 4-connected components + fill-ratio shape filter.
// Returns every component of the target color whose area passes a_min and
// whose band matches `shape`; boxes are tight over the component.
std::vector<Detection> detect_instances(const Tensor& img, const std::string& color,
                                        const std::string& shape, const EvalConfig& cfg);

struct InstanceVerdict {
  double best_iou = 0;        // max IoU over matching detections
  bool position_correct = false;
  double color_fraction = 0;  // on the best detection's region
  bool fully_correct = false;
  double miou_contribution = 0;  // best_iou, zeroed when the color test fails
};

InstanceVerdict eval_instance(const Tensor& img, const Box& gt_box, const Phrase& phrase,
                              const EvalConfig& cfg);

struct ImageRecord {
  int level = 0;
  std::vector<InstanceVerdict> instances;
  bool all_position_correct() const;
};

struct Metrics {
  double instance_success_rate = 0;
  double miou = 0;
  double image_success_rate = 0;  // R
  int n_instances = 0;
  int n_images = 0;
};

// Aggregates records; order-independent. Empty input is an error.
Metrics compute_metrics(const std::vector<ImageRecord>& records);

// Full verdict for one generated (or ground-truth) image against its scene.
ImageRecord eval_image(const Tensor& img, const Scene& scene, int level, const EvalConfig& cfg);

// CSV with the fixed header level,n_images,instance_success_rate,miou,R:
// one row per level present plus an "all" aggregate row.
std::string metrics_csv(const std::vector<ImageRecord>& records);

}  // namespace migc
