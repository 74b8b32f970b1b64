#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "migc/bench.hpp"
#include "migc/evalpipe.hpp"
#include "migc/hsv.hpp"
#include "migc/vocab.hpp"

using namespace migc;

namespace {

bool on_lattice(double v, int grid) {
  const double u = v * grid;
  return std::fabs(u - std::round(u)) < 1e-9;
}

Tensor gray_canvas(int res) { return Tensor::full({3, res, res}, 0.5); }

void paint(Tensor& img, int px, int py, const std::array<double, 3>& rgb) {
  for (int c = 0; c < 3; ++c) img(c, py, px) = rgb[c];
}

}  // namespace

// ---------------------------------------------------------------------------
// color space
// ---------------------------------------------------------------------------

TEST_CASE("hsv conversion hits the textbook anchor points") {
  auto close = [](const Hsv& p, double h, double s, double v) {
    CHECK(p.h == doctest::Approx(h).epsilon(1e-9));
    CHECK(p.s == doctest::Approx(s).epsilon(1e-9));
    CHECK(p.v == doctest::Approx(v).epsilon(1e-9));
  };
  close(rgb_to_hsv(1, 0, 0), 0, 1, 1);
  close(rgb_to_hsv(0, 1, 0), 120, 1, 1);
  close(rgb_to_hsv(0, 0, 1), 240, 1, 1);
  close(rgb_to_hsv(1, 1, 0), 60, 1, 1);
  close(rgb_to_hsv(0, 1, 1), 180, 1, 1);
  close(rgb_to_hsv(1, 0, 1), 300, 1, 1);
  close(rgb_to_hsv(0.5, 0.5, 0.5), 0, 0, 0.5);  // achromatic: h pinned to 0
  close(rgb_to_hsv(0, 0, 0), 0, 0, 0);
  close(rgb_to_hsv(1, 1, 1), 0, 0, 1);
  // hue stays in [0, 360)
  for (double r = 0; r <= 1.0; r += 0.25)
    for (double g = 0; g <= 1.0; g += 0.25)
      for (double b = 0; b <= 1.0; b += 0.25) {
        Hsv p = rgb_to_hsv(r, g, b);
        CHECK(p.h >= 0.0);
        CHECK(p.h < 360.0);
      }
}

TEST_CASE("color ranges: interval edges, wraparound, achromatic classes") {
  ColorRangeTable t = ColorRangeTable::standard();
  const ColorRange& red = t.range("red");
  CHECK(red.contains({0, 1, 1}));
  CHECK(red.contains({14.999, 0.5, 0.5}));
  CHECK_FALSE(red.contains({15, 1, 1}));    // upper edge exclusive
  CHECK(red.contains({345, 1, 1}));         // wrapped interval, lower inclusive
  CHECK(red.contains({359.9, 1, 1}));
  CHECK_FALSE(red.contains({344.9, 1, 1}));
  CHECK_FALSE(red.contains({0, 0.39, 1}));  // saturation floor
  CHECK_FALSE(red.contains({0, 1, 0.29}));  // value floor

  const ColorRange& white = t.range("white");
  CHECK(white.contains({123, 0.1, 0.9}));   // hue is irrelevant
  CHECK_FALSE(white.contains({0, 0.25, 0.95}));
  CHECK_FALSE(white.contains({0, 0.1, 0.8}));
  const ColorRange& black = t.range("black");
  CHECK(black.contains({200, 0.9, 0.1}));
  CHECK_FALSE(black.contains({200, 0.9, 0.15}));
  CHECK_THROWS_AS(t.range("magenta"), ConfigError);
}

TEST_CASE("every palette color lands in exactly its own range") {
  ColorRangeTable t = ColorRangeTable::standard();
  Palette p = Palette::standard();
  Vocab v = Vocab::standard();
  REQUIRE(p.colors.size() == v.colors().size());
  for (const auto& name : v.colors()) {
    const auto& rgb = p.rgb(name);
    Hsv h = rgb_to_hsv(rgb[0], rgb[1], rgb[2]);
    for (const auto& other : v.colors()) {
      INFO(name, " vs range ", other);
      CHECK(t.matches(other, h) == (other == name));
    }
  }
  // the canvas gray matches no color class, so background is never detected
  Hsv bg = rgb_to_hsv(0.5, 0.5, 0.5);
  for (const auto& name : v.colors()) CHECK_FALSE(t.matches(name, bg));
  CHECK_THROWS_AS(p.rgb("magenta"), ConfigError);
}

// ---------------------------------------------------------------------------
// layout sampling
// ---------------------------------------------------------------------------

TEST_CASE("layout sampler: counts, lattice, side bounds, overlap cap") {
  BenchmarkSpec spec;
  spec.validate();
  for (int level = 2; level <= 4; ++level) {
    Rng rng(100 + static_cast<uint64_t>(level));
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<Box> boxes = sample_layout(spec, level, rng);
      REQUIRE(static_cast<int>(boxes.size()) == level);
      for (const Box& b : boxes) {
        CHECK(on_lattice(b.x1, spec.grid));
        CHECK(on_lattice(b.y1, spec.grid));
        CHECK(on_lattice(b.x2, spec.grid));
        CHECK(on_lattice(b.y2, spec.grid));
        CHECK(b.x1 >= 0.0);
        CHECK(b.y1 >= 0.0);
        CHECK(b.x2 <= 1.0);
        CHECK(b.y2 <= 1.0);
        CHECK(b.x2 - b.x1 >= spec.min_side_frac - 1e-12);
        CHECK(b.y2 - b.y1 >= spec.min_side_frac - 1e-12);
        CHECK(b.x2 - b.x1 <= double(spec.max_side_units) / spec.grid + 1e-12);
        CHECK(b.y2 - b.y1 <= double(spec.max_side_units) / spec.grid + 1e-12);
      }
      for (size_t i = 0; i < boxes.size(); ++i)
        for (size_t j = i + 1; j < boxes.size(); ++j)
          CHECK(iou(boxes[i], boxes[j]) <= spec.max_pair_iou + 1e-12);
    }
  }
  // deterministic in the generator state
  Rng a(7), b(7), c(8);
  std::vector<Box> ba = sample_layout(spec, 3, a), bb = sample_layout(spec, 3, b),
                   bc = sample_layout(spec, 3, c);
  for (size_t i = 0; i < ba.size(); ++i) {
    CHECK(ba[i].x1 == bb[i].x1);
    CHECK(ba[i].y2 == bb[i].y2);
  }
  bool differs = false;
  for (size_t i = 0; i < ba.size(); ++i)
    differs = differs || ba[i].x1 != bc[i].x1 || ba[i].y1 != bc[i].y1;
  CHECK(differs);
}

TEST_CASE("layout sampler surfaces an exhausted rejection budget") {
  BenchmarkSpec spec;
  spec.grid = 8;
  spec.min_side_frac = 0.5;  // every box is exactly 4x4 units
  spec.max_side_units = 4;
  spec.max_pair_iou = 0.0;
  spec.max_attempts = 2000;
  Rng rng(1);
  CHECK(sample_layout(spec, 4, rng).size() == 4);  // a perfect tiling exists
  CHECK_THROWS_WITH_AS(sample_layout(spec, 5, rng), doctest::Contains("rejection budget"),
                       ConfigError);  // five half-size boxes cannot fit disjointly
  BenchmarkSpec bad;
  bad.max_side_units = 40;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  BenchmarkSpec bad2;
  bad2.min_side_frac = 0.9;
  CHECK_THROWS_AS(bad2.validate(), ConfigError);
}

TEST_CASE("attribute assignment draws from the closed vocabulary") {
  BenchmarkSpec spec;
  Vocab v = Vocab::standard();
  Palette p = Palette::standard();
  std::set<std::string> colors_seen, shapes_seen;
  Rng rng(9);
  for (int rep = 0; rep < 40; ++rep) {
    Scene s = assign_attributes(sample_layout(spec, 3, rng), v, p, rng);
    REQUIRE(s.n() == 3);
    REQUIRE(s.phrases.size() == 3);
    for (const auto& ph : s.phrases) {
      CHECK(v.is_color(ph.attr));
      CHECK(v.is_shape(ph.obj));
      colors_seen.insert(ph.attr);
      shapes_seen.insert(ph.obj);
    }
  }
  CHECK(colors_seen.size() >= 5);  // uniform draws cover the space quickly
  CHECK(shapes_seen.size() == 4);
}

TEST_CASE("prompt builder wording") {
  CHECK(build_prompt({}) == "");
  CHECK(build_prompt({{"red", "circle"}}) == "a red circle");
  CHECK(build_prompt({{"red", "circle"}, {"blue", "square"}}) ==
        "a red circle, and a blue square");
  CHECK(build_prompt({{"red", "circle"}, {"blue", "square"}, {"green", "cross"}}) ==
        "a red circle, a blue square, and a green cross");
}

// ---------------------------------------------------------------------------
// rasterization
// ---------------------------------------------------------------------------

TEST_CASE("shape membership: squares fill their box, others stay inside it") {
  const int res = 32;
  Box box{6.0 / res, 8.0 / res, 16.0 / res, 20.0 / res};
  for (const char* shape : {"circle", "square", "triangle", "cross"})
    for (int py = 0; py < res; ++py)
      for (int px = 0; px < res; ++px) {
        const bool inside_box = px >= 6 && px < 16 && py >= 8 && py < 20;
        const bool covered = shape_covers_pixel(shape, box, px, py, res);
        if (std::string(shape) == "square")
          CHECK(covered == inside_box);
        else if (covered)
          CHECK(inside_box);
      }
  CHECK_THROWS_AS(shape_covers_pixel("blob", box, 7, 9, res), ConfigError);
}

TEST_CASE("fill-ratio bands separate the four shapes at every legal size") {
  const int res = 32;
  ShapeBands bands;
  for (const char* shape : {"circle", "square", "triangle", "cross"})
    for (int w = 4; w <= 16; ++w)
      for (int h = 4; h <= 16; ++h) {
        // stamp at two offsets; coverage is lattice-translation invariant
        for (int ox : {0, 9}) {
          Box box{double(ox) / res, 3.0 / res, double(ox + w) / res, double(3 + h) / res};
          int area = 0, x_lo = res, x_hi = -1, y_lo = res, y_hi = -1;
          for (int py = 0; py < res; ++py)
            for (int px = 0; px < res; ++px)
              if (shape_covers_pixel(shape, box, px, py, res)) {
                ++area;
                x_lo = std::min(x_lo, px);
                x_hi = std::max(x_hi, px);
                y_lo = std::min(y_lo, py);
                y_hi = std::max(y_hi, py);
              }
          REQUIRE(area > 0);
          const double fill =
              double(area) / ((x_hi - x_lo + 1) * (y_hi - y_lo + 1));
          INFO(shape, " w=", w, " h=", h, " fill=", fill);
          CHECK(bands.classify(fill) == shape);
        }
      }
  // pinned extremes backing the band constants
  CHECK(bands.classify(1.0) == "square");
  CHECK(bands.classify(0.5) == "triangle");
  CHECK(bands.classify(0.78) == "circle");
  CHECK(bands.classify(0.4375) == "cross");
  ShapeBands bad;
  bad.triangle_hi = 0.3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("renderer: background, occlusion order, visible masks, tight boxes") {
  const int res = 32;
  Palette pal = Palette::standard();
  Scene s;
  s.boxes = {{4.0 / res, 4.0 / res, 12.0 / res, 12.0 / res},
             {10.0 / res, 4.0 / res, 18.0 / res, 12.0 / res}};  // overlaps columns 10,11
  s.phrases = {{"red", "square"}, {"blue", "square"}};
  GroundTruth gt = render_ground_truth(s, res, pal);

  const auto& red = pal.rgb("red");
  const auto& blue = pal.rgb("blue");
  CHECK(gt.image(0, 0, 0) == 0.5);  // untouched background stays gray
  CHECK(gt.image(1, 31, 31) == 0.5);
  CHECK(gt.image(0, 8, 5) == red[0]);   // red-only region
  CHECK(gt.image(2, 8, 15) == blue[2]); // blue-only region
  // the later instance wins the contested columns
  CHECK(gt.image(2, 8, 10) == blue[2]);
  CHECK(gt.image(0, 8, 11) == blue[0]);
  // masks are the visible regions: red lost its overlap strip
  CHECK(gt.masks[0](8, 5) == 1.0);
  CHECK(gt.masks[0](8, 10) == 0.0);
  CHECK(gt.masks[1](8, 10) == 1.0);
  int red_area = 0;
  for (double m : gt.masks[0].data) red_area += m > 0;
  CHECK(red_area == 8 * 6);  // 8 rows x (8 - 2 occluded) columns
  // tight boxes follow visibility
  CHECK(gt.tight_boxes[0].x2 == doctest::Approx(10.0 / res));
  CHECK(gt.tight_boxes[1].x1 == doctest::Approx(10.0 / res));
  CHECK(gt.tight_boxes[1].x2 == doctest::Approx(18.0 / res));
}

// ---------------------------------------------------------------------------
// detection + verdicts
// ---------------------------------------------------------------------------

TEST_CASE("detector: exact recovery of a clean instance") {
  const int res = 32;
  Palette pal = Palette::standard();
  EvalConfig cfg;
  Scene s;
  s.boxes = {{8.0 / res, 8.0 / res, 16.0 / res, 16.0 / res}};
  s.phrases = {{"green", "square"}};
  GroundTruth gt = render_ground_truth(s, res, pal);

  auto dets = detect_instances(gt.image, "green", "square", cfg);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].area == 64);
  CHECK(dets[0].fill == 1.0);
  CHECK(iou(dets[0].box, s.boxes[0]) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(detect_instances(gt.image, "red", "square", cfg).empty());    // wrong color
  CHECK(detect_instances(gt.image, "green", "circle", cfg).empty());  // wrong band

  InstanceVerdict v = eval_instance(gt.image, s.boxes[0], s.phrases[0], cfg);
  CHECK(v.best_iou == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(v.position_correct);
  CHECK(v.color_fraction == doctest::Approx(1.0));
  CHECK(v.fully_correct);
  CHECK(v.miou_contribution == doctest::Approx(1.0).epsilon(1e-12));

  InstanceVerdict miss = eval_instance(gt.image, s.boxes[0], {"blue", "square"}, cfg);
  CHECK(miss.best_iou == 0.0);
  CHECK_FALSE(miss.position_correct);
  CHECK_FALSE(miss.fully_correct);
  CHECK(miss.miou_contribution == 0.0);
}

TEST_CASE("detector: connectivity, area floor, same-color twins") {
  const int res = 32;
  EvalConfig cfg;
  const std::array<double, 3> red = Palette::standard().rgb("red");
  Tensor img = gray_canvas(res);
  // a 3-pixel speck: below the area floor of 4
  paint(img, 2, 2, red);
  paint(img, 3, 2, red);
  paint(img, 2, 3, red);
  CHECK(detect_instances(img, "red", "square", cfg).empty());
  // grow it to a 2x2 block: now a legitimate (if tiny) square
  paint(img, 3, 3, red);
  auto dets = detect_instances(img, "red", "square", cfg);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].area == 4);

  // diagonal contact does not join components (4-connectivity)
  Tensor img2 = gray_canvas(res);
  for (int y = 10; y < 12; ++y)
    for (int x = 10; x < 12; ++x) paint(img2, x, y, red);
  for (int y = 12; y < 14; ++y)
    for (int x = 12; x < 14; ++x) paint(img2, x, y, red);
  auto two = detect_instances(img2, "red", "square", cfg);
  CHECK(two.size() == 2);

  // two separated same-color squares: the verdict picks the right one by IoU
  Scene s;
  s.boxes = {{2.0 / res, 2.0 / res, 8.0 / res, 8.0 / res},
             {20.0 / res, 20.0 / res, 28.0 / res, 28.0 / res}};
  s.phrases = {{"red", "square"}, {"red", "square"}};
  GroundTruth gt = render_ground_truth(s, res, Palette::standard());
  ImageRecord rec = eval_image(gt.image, s, 2, cfg);
  REQUIRE(rec.instances.size() == 2);
  CHECK(rec.instances[0].best_iou == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rec.instances[1].best_iou == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rec.all_position_correct());
}

// ---------------------------------------------------------------------------
// metric aggregation
// ---------------------------------------------------------------------------

namespace {
InstanceVerdict verdict(double iou_v, bool pos, bool full, double miou_c) {
  InstanceVerdict v;
  v.best_iou = iou_v;
  v.position_correct = pos;
  v.fully_correct = full;
  v.miou_contribution = miou_c;
  v.color_fraction = full ? 1.0 : 0.0;
  return v;
}
}  // namespace

TEST_CASE("metric aggregation algebra") {
  ImageRecord good;
  good.level = 2;
  good.instances = {verdict(1.0, true, true, 1.0), verdict(0.8, true, true, 0.8)};
  ImageRecord half;
  half.level = 2;
  half.instances = {verdict(0.9, true, true, 0.9), verdict(0.4, false, false, 0.0)};
  ImageRecord color_fail;
  color_fail.level = 3;
  // found in place but wrong color: counts for position, not for success/miou
  color_fail.instances = {verdict(0.95, true, false, 0.0)};

  std::vector<ImageRecord> rs = {good, half, color_fail};
  Metrics m = compute_metrics(rs);
  CHECK(m.n_images == 3);
  CHECK(m.n_instances == 5);
  CHECK(m.instance_success_rate == doctest::Approx(3.0 / 5.0).epsilon(1e-12));
  CHECK(m.miou == doctest::Approx((1.0 + 0.8 + 0.9 + 0.0 + 0.0) / 5.0).epsilon(1e-12));
  CHECK(m.image_success_rate == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  std::vector<ImageRecord> shuffled = {color_fail, good, half};
  Metrics m2 = compute_metrics(shuffled);
  CHECK(m2.instance_success_rate == m.instance_success_rate);
  CHECK(m2.miou == m.miou);
  CHECK(m2.image_success_rate == m.image_success_rate);

  CHECK_THROWS_AS(compute_metrics({}), ConfigError);
}

TEST_CASE("metrics csv layout") {
  ImageRecord a;
  a.level = 2;
  a.instances = {verdict(1.0, true, true, 1.0)};
  ImageRecord b;
  b.level = 4;
  b.instances = {verdict(0.5, true, true, 0.5), verdict(0.0, false, false, 0.0)};
  std::string csv = metrics_csv({a, b});
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line == "level,n_images,instance_success_rate,miou,R");
  std::getline(is, line);
  CHECK(line.rfind("2,1,", 0) == 0);
  std::getline(is, line);
  CHECK(line.rfind("4,1,", 0) == 0);
  std::getline(is, line);
  CHECK(line.rfind("all,2,", 0) == 0);
  // spot-check one row's numbers end to end
  CHECK(csv.find("2,1,1.000000,1.000000,1.000000") != std::string::npos);
  CHECK(csv.find("all,2,0.666667,0.500000,0.500000") != std::string::npos);
  CHECK_FALSE(std::getline(is, line));  // nothing after the aggregate row
}

// ---------------------------------------------------------------------------
// end-to-end oracle closure
// ---------------------------------------------------------------------------

TEST_CASE("ground-truth renders of a filtered benchmark pass their own evaluation") {
  BenchmarkSpec spec;
  spec.layouts_per_level = 6;
  Vocab v = Vocab::standard();
  Palette pal = Palette::standard();
  EvalConfig cfg;
  const int res = 32;

  auto gt_survives = [&](const Scene& s) {
    GroundTruth gt = render_ground_truth(s, res, pal);
    ImageRecord rec = eval_image(gt.image, s, s.n(), cfg);
    for (const auto& iv : rec.instances)
      if (!iv.fully_correct) return false;
    return true;
  };
  int rejected = 0;
  auto cases = build_benchmark(spec, v, pal, 77, gt_survives, &rejected);
  REQUIRE(static_cast<int>(cases.size()) == 3 * spec.layouts_per_level);

  std::vector<ImageRecord> records;
  for (const auto& c : cases) {
    GroundTruth gt = render_ground_truth(c.scene, res, pal);
    records.push_back(eval_image(gt.image, c.scene, c.level, cfg));
    CHECK(c.level == c.scene.n());
    CHECK_FALSE(c.prompt.empty());
  }
  Metrics m = compute_metrics(records);
  CHECK(m.instance_success_rate == 1.0);
  CHECK(m.image_success_rate == 1.0);
  CHECK(m.miou >= 0.9);

  // the same seed reproduces the same benchmark, filter and all
  auto cases2 = build_benchmark(spec, v, pal, 77, gt_survives);
  REQUIRE(cases2.size() == cases.size());
  for (size_t i = 0; i < cases.size(); ++i) {
    CHECK(cases[i].prompt == cases2[i].prompt);
    CHECK(cases[i].scene.boxes[0].x1 == cases2[i].scene.boxes[0].x1);
  }
}
