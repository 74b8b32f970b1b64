#include "migc/evalpipe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace migc {

std::string ShapeBands::classify(double fill) const {
  if (fill < cross_hi) return "cross";
  if (fill < triangle_hi) return "triangle";
  if (fill < circle_hi) return "circle";
  return "square";
}

void ShapeBands::validate() const {
  if (!(0 < cross_hi && cross_hi < triangle_hi && triangle_hi < circle_hi && circle_hi <= 1.0))
    throw ConfigError("shape bands must satisfy 0 < cross < triangle < circle <= 1");
}

void EvalConfig::validate() const {
  bands.validate();
  if (iou_threshold <= 0 || iou_threshold >= 1) throw ConfigError("iou threshold out of (0,1)");
  if (color_threshold <= 0 || color_threshold > 1)
    throw ConfigError("color threshold out of (0,1]");
  if (a_min_frac < 0 || a_min_frac > 1) throw ConfigError("a_min_frac out of [0,1]");
}

std::vector<Detection> detect_instances(const Tensor& img, const std::string& color,
                                        const std::string& shape, const EvalConfig& cfg) {
  cfg.validate();
  if (img.shape.size() != 3 || img.shape[0] != 3 || img.shape[1] != img.shape[2])
    throw ConfigError("detector expects a square [3,res,res] image");
  const int res = img.shape[1];
  const int a_min = std::max(1, static_cast<int>(std::ceil(cfg.a_min_frac * res * res)));
  const ColorRange& range = cfg.colors.range(color);

  std::vector<char> in_color(static_cast<size_t>(res) * res, 0);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x)
      if (range.contains(rgb_to_hsv(img(0, y, x), img(1, y, x), img(2, y, x))))
        in_color[static_cast<size_t>(y) * res + x] = 1;

  // 4-connected components by scanline flood fill
  std::vector<int> label(static_cast<size_t>(res) * res, -1);
  std::vector<Detection> out;
  std::vector<int> stack;
  for (int start = 0; start < res * res; ++start) {
    if (!in_color[static_cast<size_t>(start)] || label[static_cast<size_t>(start)] >= 0)
      continue;
    const int id = static_cast<int>(out.size());
    stack.assign(1, start);
    label[static_cast<size_t>(start)] = id;
    std::vector<int> pixels;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      pixels.push_back(p);
      const int y = p / res, x = p % res;
      const int nb[4] = {x > 0 ? p - 1 : -1, x + 1 < res ? p + 1 : -1, y > 0 ? p - res : -1,
                         y + 1 < res ? p + res : -1};
      for (int q : nb)
        if (q >= 0 && in_color[static_cast<size_t>(q)] && label[static_cast<size_t>(q)] < 0) {
          label[static_cast<size_t>(q)] = id;
          stack.push_back(q);
        }
    }
    Detection d;
    d.area = static_cast<int>(pixels.size());
    int x_lo = res, x_hi = -1, y_lo = res, y_hi = -1;
    d.mask = Tensor::zeros({res, res});
    for (int p : pixels) {
      const int y = p / res, x = p % res;
      d.mask(y, x) = 1.0;
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x);
      y_lo = std::min(y_lo, y);
      y_hi = std::max(y_hi, y);
    }
    d.box = Box{static_cast<double>(x_lo) / res, static_cast<double>(y_lo) / res,
                static_cast<double>(x_hi + 1) / res, static_cast<double>(y_hi + 1) / res};
    const double bbox_px = static_cast<double>(x_hi - x_lo + 1) * (y_hi - y_lo + 1);
    d.fill = d.area / bbox_px;
    d.shape = cfg.bands.classify(d.fill);
    out.push_back(std::move(d));
  }

  std::vector<Detection> kept;
  for (auto& d : out)
    if (d.area >= a_min && d.shape == shape) kept.push_back(std::move(d));
  return kept;
}

InstanceVerdict eval_instance(const Tensor& img, const Box& gt_box, const Phrase& phrase,
                              const EvalConfig& cfg) {
  InstanceVerdict v;
  auto dets = detect_instances(img, phrase.attr, phrase.obj, cfg);
  const Detection* best = nullptr;
  if (cfg.tie_rule == TieRule::kMaxIou) {
    for (const auto& d : dets) {
      const double i = iou(d.box, gt_box);
      if (i > v.best_iou) {
        v.best_iou = i;
        best = &d;
      }
    }
  } else {
    const double gx = (gt_box.x1 + gt_box.x2) / 2, gy = (gt_box.y1 + gt_box.y2) / 2;
    double d_best = 0;
    for (const auto& d : dets) {
      const double dx = (d.box.x1 + d.box.x2) / 2 - gx, dy = (d.box.y1 + d.box.y2) / 2 - gy;
      const double dist = dx * dx + dy * dy;
      if (!best || dist < d_best) {
        d_best = dist;
        best = &d;
      }
    }
    if (best) v.best_iou = iou(best->box, gt_box);
  }
  v.position_correct = v.best_iou >= cfg.iou_threshold;
  if (best) {
    // target-color fraction over the detected region
    const int res = img.shape[1];
    const ColorRange& range = cfg.colors.range(phrase.attr);
    int hits = 0, total = 0;
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x)
        if (best->mask(y, x) == 1.0) {
          ++total;
          if (range.contains(rgb_to_hsv(img(0, y, x), img(1, y, x), img(2, y, x)))) ++hits;
        }
    v.color_fraction = total > 0 ? static_cast<double>(hits) / total : 0.0;
  }
  const bool color_ok = v.color_fraction >= cfg.color_threshold;
  v.fully_correct = v.position_correct && color_ok;
  v.miou_contribution = color_ok ? v.best_iou : 0.0;
  return v;
}

bool ImageRecord::all_position_correct() const {
  for (const auto& v : instances)
    if (!v.position_correct) return false;
  return true;
}

ImageRecord eval_image(const Tensor& img, const Scene& scene, int level, const EvalConfig& cfg) {
  ImageRecord rec;
  rec.level = level;
  for (int i = 0; i < scene.n(); ++i)
    rec.instances.push_back(eval_instance(img, scene.boxes[static_cast<size_t>(i)],
                                          scene.phrases[static_cast<size_t>(i)], cfg));
  return rec;
}

Metrics compute_metrics(const std::vector<ImageRecord>& records) {
  if (records.empty()) throw ConfigError("metrics need at least one record");
  Metrics m;
  double isr = 0, miou = 0, r = 0;
  for (const auto& rec : records) {
    m.n_images += 1;
    r += rec.all_position_correct() ? 1.0 : 0.0;
    for (const auto& v : rec.instances) {
      m.n_instances += 1;
      isr += v.fully_correct ? 1.0 : 0.0;
      miou += v.miou_contribution;
    }
  }
  if (m.n_instances == 0) throw ConfigError("metrics need at least one instance verdict");
  m.instance_success_rate = isr / m.n_instances;
  m.miou = miou / m.n_instances;
  m.image_success_rate = r / m.n_images;
  return m;
}

std::string metrics_csv(const std::vector<ImageRecord>& records) {
  std::map<int, std::vector<ImageRecord>> by_level;
  for (const auto& r : records) by_level[r.level].push_back(r);
  std::ostringstream os;
  os << "level,n_images,instance_success_rate,miou,R\n";
  os.setf(std::ios::fixed);
  os.precision(6);
  for (const auto& [level, recs] : by_level) {
    const Metrics m = compute_metrics(recs);
    os << level << ',' << m.n_images << ',' << m.instance_success_rate << ',' << m.miou << ','
       << m.image_success_rate << '\n';
  }
  const Metrics all = compute_metrics(records);
  os << "all," << all.n_images << ',' << all.instance_success_rate << ',' << all.miou << ','
     << all.image_success_rate << '\n';
  return os.str();
}

}  // namespace migc
