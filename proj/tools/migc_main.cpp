// Command-line harness: train the two-stage model, sample images from layout
// requests, run the synthetic benchmark, re-score saved images, and check
// gradients. Exit codes: 0 ok, 1 usage/config, 2 numeric, 3 oracle closure.

#include <algorithm>
#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "migc/bench.hpp"
#include "migc/checkpoint.hpp"
#include "migc/config.hpp"
#include "migc/diffusion.hpp"
#include "migc/evalpipe.hpp"
#include "migc/gradcheck.hpp"
#include "migc/png_io.hpp"
#include "migc/runio.hpp"
#include "migc/threadpool.hpp"
#include "migc/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace migc;

namespace {

std::string fmt_g(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// --out pins the run directory exactly; otherwise a timestamped one is
// created under runs/.
std::string resolve_run_dir(const std::string& out, const std::string& cmd) {
  if (!out.empty()) {
    fs::create_directories(out);
    return out;
  }
  fs::create_directories("runs");
  return make_run_dir("runs", cmd);
}

struct AblateSet {
  bool ea = false, la = false, sac = false, loss = false;
  MigcFlags flags() const { return MigcFlags{ea, la, sac, nullptr}; }
};

AblateSet parse_ablate(const std::vector<std::string>& items, bool allow_loss) {
  AblateSet a;
  for (const auto& tok : items) {
    if (tok == "ea") a.ea = true;
    else if (tok == "la") a.la = true;
    else if (tok == "sac") a.sac = true;
    else if (tok == "loss" && allow_loss) a.loss = true;
    else
      throw ConfigError("unknown ablation '" + tok + "' (expected ea, la, sac" +
                        (allow_loss ? ", loss" : "") + ")");
  }
  return a;
}

void require_matching_geometry(const UNetConfig& ckpt, const UNetConfig& want) {
  const bool same = ckpt.img_ch == want.img_ch && ckpt.res == want.res && ckpt.base == want.base &&
                    ckpt.mid == want.mid && ckpt.deep == want.deep && ckpt.heads == want.heads &&
                    ckpt.d_txt == want.d_txt && ckpt.t_dim == want.t_dim &&
                    ckpt.gn_groups == want.gn_groups && ckpt.vocab == want.vocab &&
                    ckpt.max_num == want.max_num && ckpt.sac_hidden == want.sac_hidden &&
                    ckpt.spatial_k == want.spatial_k;
  if (!same) throw ConfigError("checkpoint model geometry does not match the [model] section");
}

void require_matching_schedule(const NoiseSchedule& ckpt, const RunConfig& cfg) {
  if (ckpt.T != cfg.T || ckpt.beta0 != cfg.beta0 || ckpt.beta1 != cfg.beta1)
    throw ConfigError("checkpoint noise schedule does not match the config (T/beta0/beta1)");
}

SampleRequest scene_request(const Scene& scene, const Vocab& vocab, const SampleConfig& sc,
                            uint64_t seed, bool use_migc, const MigcFlags& flags) {
  SampleRequest req;
  req.boxes = scene.boxes;
  for (const auto& p : scene.phrases) req.desc_tokens.push_back(encode_phrase(vocab, p));
  req.global_tokens = encode_prompt(vocab, scene.phrases);
  req.seed = seed;
  req.steps = sc.steps;
  req.migc_steps = sc.migc_steps;
  req.cfg_scale = sc.cfg_scale;
  req.use_migc = use_migc;
  req.flags = flags;
  return req;
}

json scene_json(const Scene& scene) {
  json inst = json::array();
  for (int i = 0; i < scene.n(); ++i) {
    const Box& b = scene.boxes[static_cast<size_t>(i)];
    const Phrase& p = scene.phrases[static_cast<size_t>(i)];
    inst.push_back({{"color", p.attr}, {"shape", p.obj}, {"box", {b.x1, b.y1, b.x2, b.y2}}});
  }
  return inst;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, out, from;
  std::vector<std::string> ablate;
  bool pretrain_backbone = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  const AblateSet ab = parse_ablate(a.ablate, /*allow_loss=*/true);
  const std::string dir = resolve_run_dir(a.out, "train");
  std::ostream* log = a.quiet ? nullptr : &std::cout;

  RunLog manifest;
  const std::string cfg_path = dir + "/config.ini";
  write_text_file(cfg_path, serialize_run_config(cfg));
  manifest.add_file("config", cfg_path);

  std::ostringstream losses;
  losses << "stage,epoch,l_denoise,l_inhibit,l_total\n";

  NoiseSchedule sched = NoiseSchedule::linear(cfg.T, cfg.beta0, cfg.beta1);
  UNet net;
  if (a.pretrain_backbone) {
    if (!a.from.empty())
      throw ConfigError("--pretrain-backbone and --from are mutually exclusive");
    Rng rng(cfg.train.seed);
    net = UNet(cfg.model, rng);
    if (log) *log << "stage 0: backbone (" << cfg.train.n_images << " images, "
                  << cfg.train.backbone_epochs << " epochs)\n";
    for (const EpochStats& e : train_backbone(net, sched, cfg.backbone_stage(), log))
      losses << "0," << e.epoch << "," << fmt_g(e.l_ldm) << "," << fmt_g(e.l_ihbt) << ","
             << fmt_g(e.l_total) << "\n";
    const std::string bb_path = dir + "/backbone.ckpt";
    save_checkpoint(bb_path, net, sched);
    manifest.add_file("backbone_checkpoint", bb_path);
  } else {
    if (a.from.empty())
      throw ConfigError("train needs --pretrain-backbone or --from <backbone checkpoint>");
    LoadedModel m = load_checkpoint(a.from);
    require_matching_geometry(m.net.cfg, cfg.model);
    require_matching_schedule(m.sched, cfg);
    net = std::move(m.net);
    sched = std::move(m.sched);
    manifest.add_file("backbone_checkpoint_in", a.from);
  }

  StageConfig s1 = cfg.migc_stage();
  if (ab.loss) s1.lambda = 0.0;
  s1.ablations.ablate_ea = ab.ea;
  s1.ablations.ablate_la = ab.la;
  s1.ablations.ablate_sac = ab.sac;
  if (log) *log << "stage 1: instance control (" << s1.n_images << " images, " << s1.epochs
                << " epochs, lambda=" << fmt_g(s1.lambda) << ")\n";
  for (const EpochStats& e : train_migc(net, sched, s1, log))
    losses << "1," << e.epoch << "," << fmt_g(e.l_ldm) << "," << fmt_g(e.l_ihbt) << ","
           << fmt_g(e.l_total) << "\n";

  const std::string model_path = dir + "/model.ckpt";
  save_checkpoint(model_path, net, sched);
  manifest.add_file("model_checkpoint", model_path);

  const std::string losses_path = dir + "/losses.csv";
  write_text_file(losses_path, losses.str());
  manifest.add_file("losses", losses_path);
  if (ab.ea || ab.la || ab.sac || ab.loss)
    manifest.add_note("ablations", std::string(ab.ea ? "ea " : "") + (ab.la ? "la " : "") +
                                       (ab.sac ? "sac " : "") + (ab.loss ? "loss" : ""));
  manifest.save(dir + "/manifest.jsonl");
  std::cout << "run dir: " << dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenArgs {
  std::string request, ckpt, out;
  std::vector<std::string> ablate;
  bool no_migc = false;
};

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed) known = known || item.key() == k;
    if (!known) throw ConfigError("unknown " + where + " key '" + item.key() + "'");
  }
}

json load_request_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open request file: " + path);
  try {
    json j;
    f >> j;
    return j;
  } catch (const json::exception& e) {
    throw ConfigError("request JSON: " + std::string(e.what()));
  }
}

int cmd_generate(const GenArgs& a) {
  const AblateSet ab = parse_ablate(a.ablate, /*allow_loss=*/false);
  const json j = load_request_json(a.request);
  if (!j.is_object()) throw ConfigError("request must be a JSON object");
  reject_unknown_keys(j, {"instances", "seed", "seeds", "steps", "migc_steps", "cfg_scale"},
                      "request");

  const Vocab vocab = Vocab::standard();
  Scene scene;
  if (j.contains("instances")) {
    if (!j["instances"].is_array()) throw ConfigError("request: instances must be an array");
    for (const json& inst : j["instances"]) {
      if (!inst.is_object()) throw ConfigError("request: each instance must be an object");
      reject_unknown_keys(inst, {"color", "shape", "box"}, "instance");
      for (const char* k : {"color", "shape", "box"})
        if (!inst.contains(k)) throw ConfigError(std::string("request: instance missing '") + k + "'");
      const std::string color = inst["color"].get<std::string>();
      const std::string shape = inst["shape"].get<std::string>();
      if (!vocab.is_color(color)) throw ConfigError("request: unknown color '" + color + "'");
      if (!vocab.is_shape(shape)) throw ConfigError("request: unknown shape '" + shape + "'");
      const json& bj = inst["box"];
      if (!bj.is_array() || bj.size() != 4)
        throw ConfigError("request: box must be [x1, y1, x2, y2]");
      Box b{bj[0].get<double>(), bj[1].get<double>(), bj[2].get<double>(), bj[3].get<double>()};
      if (!(b.x1 >= 0 && b.y1 >= 0 && b.x2 <= 1 && b.y2 <= 1 && b.x1 < b.x2 && b.y1 < b.y2))
        throw ConfigError("request: box must satisfy 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1");
      scene.boxes.push_back(b);
      scene.phrases.push_back({color, shape});
    }
  }

  std::vector<uint64_t> seeds;
  if (j.contains("seed") && j.contains("seeds"))
    throw ConfigError("request: give either 'seed' or 'seeds', not both");
  if (j.contains("seed")) seeds.push_back(j["seed"].get<uint64_t>());
  else if (j.contains("seeds"))
    for (const json& s : j["seeds"]) seeds.push_back(s.get<uint64_t>());
  else
    throw ConfigError("request: missing 'seed' (or 'seeds')");
  if (seeds.empty()) throw ConfigError("request: 'seeds' must not be empty");

  SampleConfig sc;
  if (j.contains("steps")) sc.steps = j["steps"].get<int>();
  if (j.contains("migc_steps")) sc.migc_steps = j["migc_steps"].get<int>();
  if (j.contains("cfg_scale")) sc.cfg_scale = j["cfg_scale"].get<double>();
  sc.validate();

  LoadedModel m = load_checkpoint(a.ckpt);
  if (m.net.cfg.vocab != vocab.size())
    throw ConfigError("checkpoint vocabulary size does not match the token table");
  if (sc.steps > m.sched.T) throw ConfigError("request: steps exceeds the schedule length");

  const std::string dir = resolve_run_dir(a.out, "generate");
  RunLog manifest;
  manifest.add_file("checkpoint", a.ckpt);
  manifest.add_file("request", a.request);

  const bool use_migc = !a.no_migc;
  for (uint64_t seed : seeds) {
    SampleRequest req = scene_request(scene, vocab, sc, seed, use_migc, ab.flags());
    Tensor img = sample_image(m.net, m.sched, req);
    const std::string name = "img-" + std::to_string(seed) + ".png";
    write_png(dir + "/" + name, img);
    manifest.add_file("image", dir + "/" + name);
    std::cout << name << "\n";
  }

  json settings = {{"prompt", build_prompt(scene.phrases)},
                   {"instances", scene_json(scene)},
                   {"seeds", seeds},
                   {"steps", sc.steps},
                   {"migc_steps", sc.migc_steps},
                   {"cfg_scale", sc.cfg_scale},
                   {"instance_control", use_migc},
                   {"ablate_ea", ab.ea},
                   {"ablate_la", ab.la},
                   {"ablate_sac", ab.sac}};
  const std::string settings_path = dir + "/settings.json";
  write_text_file(settings_path, settings.dump(2) + "\n");
  manifest.add_file("settings", settings_path);
  manifest.save(dir + "/manifest.jsonl");
  std::cout << "run dir: " << dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// bench + eval share the scoring/reporting tail
// ---------------------------------------------------------------------------

struct ScoredImage {
  std::string name;  // path relative to the run dir
  int level = 0, layout_index = 0, seed_index = 0;
  const Scene* scene = nullptr;
  ImageRecord record;
};

std::string verdict_line(const ScoredImage& s) {
  json out = json::array();
  for (size_t i = 0; i < s.record.instances.size(); ++i) {
    const InstanceVerdict& v = s.record.instances[i];
    const Box& b = s.scene->boxes[i];
    const Phrase& p = s.scene->phrases[i];
    out.push_back({{"image", s.name},
                   {"level", s.level},
                   {"layout", s.layout_index},
                   {"seed_index", s.seed_index},
                   {"instance", static_cast<int>(i)},
                   {"color", p.attr},
                   {"shape", p.obj},
                   {"box", {b.x1, b.y1, b.x2, b.y2}},
                   {"best_iou", v.best_iou},
                   {"position_correct", v.position_correct},
                   {"color_fraction", v.color_fraction},
                   {"fully_correct", v.fully_correct}});
  }
  std::string joined;
  for (const json& o : out) joined += o.dump() + "\n";
  return joined;
}

void write_score_report(const std::string& dir, const std::vector<ScoredImage>& scored,
                        RunLog& manifest) {
  std::ostringstream verdicts;
  std::vector<ImageRecord> records;
  records.reserve(scored.size());
  for (const ScoredImage& s : scored) {
    verdicts << verdict_line(s);
    records.push_back(s.record);
  }
  const std::string verdicts_path = dir + "/verdicts.jsonl";
  write_text_file(verdicts_path, verdicts.str());
  manifest.add_file("verdicts", verdicts_path);

  const std::string csv = metrics_csv(records);
  const std::string metrics_path = dir + "/metrics.csv";
  write_text_file(metrics_path, csv);
  manifest.add_file("metrics", metrics_path);
  std::cout << csv;
}

// Rows of a metrics.csv: level label -> (isr, miou, R).
std::vector<std::pair<std::string, std::array<double, 3>>> parse_metrics_csv(
    const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "level,n_images,instance_success_rate,miou,R")
    throw ConfigError("unrecognized metrics CSV header in " + path);
  std::vector<std::pair<std::string, std::array<double, 3>>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string level, n, isr, miou, r;
    if (!std::getline(ls, level, ',') || !std::getline(ls, n, ',') ||
        !std::getline(ls, isr, ',') || !std::getline(ls, miou, ',') || !std::getline(ls, r, ','))
      throw ConfigError("malformed metrics row in " + path + ": " + line);
    rows.push_back({level, {std::stod(isr), std::stod(miou), std::stod(r)}});
  }
  if (rows.empty()) throw ConfigError("metrics CSV has no rows: " + path);
  return rows;
}

void write_delta_table(const std::string& dir, const std::string& baseline_csv, RunLog& manifest) {
  auto ours = parse_metrics_csv(dir + "/metrics.csv");
  auto base = parse_metrics_csv(baseline_csv);
  std::ostringstream out;
  out << "level,d_instance_success_rate,d_miou,d_R\n";
  out << std::fixed << std::setprecision(6);
  for (const auto& [level, vals] : ours) {
    auto it = std::find_if(base.begin(), base.end(),
                           [&](const auto& row) { return row.first == level; });
    if (it == base.end())
      throw ConfigError("baseline metrics have no row for level '" + level + "'");
    out << level << "," << (vals[0] - it->second[0]) << "," << (vals[1] - it->second[1]) << ","
        << (vals[2] - it->second[2]) << "\n";
  }
  const std::string delta_path = dir + "/delta.csv";
  write_text_file(delta_path, out.str());
  manifest.add_file("delta", delta_path);
  std::cout << "delta vs " << baseline_csv << ":\n" << out.str();
}

struct BenchArgs {
  std::string config, ckpt, out, baseline;
  std::vector<std::string> ablate;
  bool no_migc = false, gt_selfcheck = false;
  int workers = 1;
};

int cmd_bench(const BenchArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  const AblateSet ab = parse_ablate(a.ablate, /*allow_loss=*/false);
  LoadedModel m = load_checkpoint(a.ckpt);
  require_matching_geometry(m.net.cfg, cfg.model);
  require_matching_schedule(m.sched, cfg);

  const Vocab vocab = Vocab::standard();
  const Palette palette = Palette::standard();
  if (m.net.cfg.vocab != vocab.size())
    throw ConfigError("checkpoint vocabulary size does not match the token table");
  if (cfg.bench.level_hi > cfg.model.max_num)
    throw ConfigError("bench.level_hi exceeds the aggregation slot capacity max_num");

  // Only layouts whose ground-truth render survives the scorer are admitted,
  // so every benchmark instance is detectable in principle.
  const auto gt_ok = [&](const Scene& sc) {
    GroundTruth gt = render_ground_truth(sc, cfg.model.res, palette);
    ImageRecord r = eval_image(gt.image, sc, sc.n(), cfg.eval);
    for (const InstanceVerdict& v : r.instances)
      if (!v.fully_correct) return false;
    return true;
  };
  int rejected = 0;
  std::vector<BenchCase> cases =
      build_benchmark(cfg.bench, vocab, palette, cfg.bench_seed, gt_ok, &rejected);
  std::cout << "benchmark: " << cases.size() << " layouts (" << rejected
            << " re-sampled by the ground-truth filter)\n";

  const std::string dir = resolve_run_dir(a.out, "bench");
  RunLog manifest;
  const std::string cfg_path = dir + "/config.ini";
  write_text_file(cfg_path, serialize_run_config(cfg));
  manifest.add_file("config", cfg_path);
  manifest.add_file("checkpoint", a.ckpt);

  if (a.gt_selfcheck) {
    std::vector<ImageRecord> gt_records;
    for (const BenchCase& bc : cases) {
      GroundTruth gt = render_ground_truth(bc.scene, cfg.model.res, palette);
      gt_records.push_back(eval_image(gt.image, bc.scene, bc.level, cfg.eval));
    }
    Metrics g = compute_metrics(gt_records);
    std::cout << "gt self-check: isr=" << g.instance_success_rate << " miou=" << g.miou << "\n";
    if (g.instance_success_rate < 1.0 || g.miou < 0.95)
      throw OracleClosureError("ground-truth renders do not close the evaluation loop (isr=" +
                               fmt_g(g.instance_success_rate) + ", miou=" + fmt_g(g.miou) + ")");
    manifest.add_note("gt_selfcheck", "isr=" + fmt_g(g.instance_success_rate) +
                                          " miou=" + fmt_g(g.miou));
  }

  const int spl = cfg.bench.seeds_per_layout;
  const int n_jobs = static_cast<int>(cases.size()) * spl;

  // Per-image seeds come from forked child streams keyed by job index, so
  // results do not depend on worker count or completion order.
  Rng seed_root(cfg.bench_seed);
  std::vector<uint64_t> seeds(static_cast<size_t>(n_jobs));
  for (int jn = 0; jn < n_jobs; ++jn)
    seeds[static_cast<size_t>(jn)] = seed_root.fork("image-seed", static_cast<uint64_t>(jn)).next_u64();

  const bool use_migc = !a.no_migc;
  std::vector<Tensor> imgs(static_cast<size_t>(n_jobs));
  run_indexed_jobs(n_jobs, a.workers, [&](int jn) {
    const BenchCase& bc = cases[static_cast<size_t>(jn / spl)];
    SampleRequest req = scene_request(bc.scene, vocab, cfg.sample, seeds[static_cast<size_t>(jn)],
                                      use_migc, ab.flags());
    imgs[static_cast<size_t>(jn)] = sample_image(m.net, m.sched, req);
  });

  // Sequential tail: file layout, verdicts and metrics are reduced in job
  // order, independent of how the sampling work was scheduled.
  fs::create_directories(dir + "/images");
  std::ostringstream bench_manifest;
  std::vector<ScoredImage> scored;
  scored.reserve(static_cast<size_t>(n_jobs));
  for (size_t ci = 0; ci < cases.size(); ++ci) {
    const BenchCase& bc = cases[ci];
    json images = json::array();
    for (int si = 0; si < spl; ++si) {
      const int jn = static_cast<int>(ci) * spl + si;
      const std::string name = "images/L" + std::to_string(bc.level) + "-i" +
                               std::to_string(bc.layout_index) + "-s" + std::to_string(si) +
                               ".png";
      write_png(dir + "/" + name, imgs[static_cast<size_t>(jn)]);
      manifest.add_file("image", dir + "/" + name);
      images.push_back(name);
      ScoredImage s;
      s.name = name;
      s.level = bc.level;
      s.layout_index = bc.layout_index;
      s.seed_index = si;
      s.scene = &bc.scene;
      // score the file as written, so a later re-score sees the same pixels
      s.record = eval_image(read_png(dir + "/" + name), bc.scene, bc.level, cfg.eval);
      scored.push_back(std::move(s));
    }
    bench_manifest << json{{"level", bc.level},
                           {"layout", bc.layout_index},
                           {"prompt", bc.prompt},
                           {"instances", scene_json(bc.scene)},
                           {"images", images}}
                          .dump()
                   << "\n";
  }
  const std::string bench_path = dir + "/benchmark.jsonl";
  write_text_file(bench_path, bench_manifest.str());
  manifest.add_file("benchmark", bench_path);

  write_score_report(dir, scored, manifest);
  if (!a.baseline.empty()) write_delta_table(dir, a.baseline, manifest);
  manifest.save(dir + "/manifest.jsonl");
  std::cout << "run dir: " << dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval: re-score a saved image directory against its benchmark manifest
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string config, images, out;
};

int cmd_eval(const EvalArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  const std::string manifest_path = a.images + "/benchmark.jsonl";
  std::istringstream in(read_text_file(manifest_path));

  // Scenes are kept alive here; ScoredImage points into them.
  std::vector<std::unique_ptr<Scene>> scenes;
  std::vector<ScoredImage> scored;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ConfigError(manifest_path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    auto scene = std::make_unique<Scene>();
    for (const json& inst : j.at("instances")) {
      const json& bj = inst.at("box");
      scene->boxes.push_back(
          {bj[0].get<double>(), bj[1].get<double>(), bj[2].get<double>(), bj[3].get<double>()});
      scene->phrases.push_back({inst.at("color").get<std::string>(),
                                inst.at("shape").get<std::string>()});
    }
    const int level = j.at("level").get<int>();
    const int layout = j.at("layout").get<int>();
    int si = 0;
    for (const json& name : j.at("images")) {
      ScoredImage s;
      s.name = name.get<std::string>();
      s.level = level;
      s.layout_index = layout;
      s.seed_index = si++;
      s.scene = scene.get();
      Tensor img = read_png(a.images + "/" + s.name);
      s.record = eval_image(img, *scene, level, cfg.eval);
      scored.push_back(std::move(s));
    }
    scenes.push_back(std::move(scene));
  }
  if (scored.empty()) throw ConfigError("no images listed in " + manifest_path);

  const std::string dir = resolve_run_dir(a.out, "eval");
  RunLog manifest;
  const std::string cfg_path = dir + "/config.ini";
  write_text_file(cfg_path, serialize_run_config(cfg));
  manifest.add_file("config", cfg_path);
  manifest.add_note("images_dir", a.images);
  write_score_report(dir, scored, manifest);
  manifest.save(dir + "/manifest.jsonl");
  std::cout << "run dir: " << dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradArgs {
  uint64_t seed = 7;
  double tol = 1e-4;
};

int cmd_gradcheck(const GradArgs& a) {
  UNetConfig cfg;
  cfg.res = 8;
  cfg.base = 4;
  cfg.mid = 4;
  cfg.deep = 8;
  cfg.heads = 1;
  cfg.d_txt = 8;
  cfg.t_dim = 8;
  cfg.gn_groups = 2;
  cfg.max_num = 2;
  cfg.sac_hidden = 4;
  cfg.spatial_k = 3;
  Rng rng(a.seed);
  UNet net(cfg, rng);

  // The output layers start at exact zero; randomize them so the check sees
  // real gradient flow instead of a vacuous 0 == 0.
  Rng r2(a.seed + 1);
  net.oconv.w->val = uniform_init(net.oconv.w->val.shape, 0.3, r2);
  net.oconv.b->val = uniform_init(net.oconv.b->val.shape, 0.3, r2);
  net.migc8.sac.out_proj.w->val = uniform_init(net.migc8.sac.out_proj.w->val.shape, 0.3, r2);
  net.migc16.sac.out_proj.w->val = uniform_init(net.migc16.sac.out_proj.w->val.shape, 0.3, r2);
  net.migc8.ea.Wo->val = uniform_init(net.migc8.ea.Wo->val.shape, 0.2, r2);
  net.migc16.ea.Wo->val = uniform_init(net.migc16.ea.Wo->val.shape, 0.2, r2);

  Tensor z({cfg.img_ch, cfg.res, cfg.res});
  Rng zr(a.seed + 2);
  zr.fill_normal(z.data);
  const std::vector<Box> boxes = {{0.0, 0.0, 0.5, 0.75}, {0.5, 0.5, 1.0, 1.0}};
  const std::vector<std::vector<int>> descs = {{0, 7}, {3, 8}};
  const MigcCtx ctx = make_migc_ctx(boxes, descs, cfg);
  const std::vector<int> prompt = {0, 7, 3, 8};

  const auto loss = [&]() {
    AttnRecord rec;
    Value pred = net.forward(constant(z), 37, prompt, &ctx, &rec);
    Value l = sum_all(mul(pred, pred));
    return add(l, mul_scalar(inhibition_loss(rec.maps, ctx.l16.bg_mask_flat), 0.1));
  };

  ParamRegistry bb, mg;
  net.collect_backbone(bb);
  net.collect_migc(mg);

  struct Family {
    std::string label;
    ParamRegistry params;
  };
  std::vector<Family> fams = {{"enhancement-attn", {}},
                              {"layout-attn", {}},
                              {"aggregation", {}},
                              {"position-mlp", {}},
                              {"backbone (spot)", {}}};
  for (const auto& [name, v] : mg.items) {
    if (name.find(".ea.") != std::string::npos) fams[0].params.add(name, v);
    else if (name.find(".la.") != std::string::npos) fams[1].params.add(name, v);
    else if (name.find(".sac.") != std::string::npos) fams[2].params.add(name, v);
    else if (name.rfind("migc.pos", 0) == 0) fams[3].params.add(name, v);
  }
  for (const auto& [name, v] : bb.items)
    if (name.find("rb16d") != std::string::npos || name.find("ca8") != std::string::npos ||
        name.find("temb") != std::string::npos || name == "bb.token_table" ||
        name.find("oconv") != std::string::npos || name.find("stem") != std::string::npos)
      fams[4].params.add(name, v);

  std::cout << "family              params  max_rel_err              worst\n";
  std::vector<std::string> failed;
  for (Family& fam : fams) {
    if (fam.params.items.empty()) throw NumericError("gradcheck: empty family " + fam.label);
    GradCheckReport rep = grad_check(fam.params.items, loss, 1e-5);
    const bool ok = rep.max_rel_err < a.tol && !rep.nondiff_suspect;
    std::cout << std::left << std::setw(20) << fam.label << std::setw(8) << rep.n_checked
              << std::setw(25) << fmt_g(rep.max_rel_err) << rep.worst << (ok ? "" : "  FAIL")
              << "\n";
    if (!ok) failed.push_back(fam.label);
  }
  if (!failed.empty()) {
    std::string msg = "gradient check failed for:";
    for (const std::string& f : failed) msg += " " + f;
    throw NumericError(msg);
  }
  std::cout << "all families within " << fmt_g(a.tol) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layout-controlled toy diffusion: train, sample, benchmark, score"};
  app.require_subcommand(1);

  TrainArgs ta;
  CLI::App* train = app.add_subcommand(
      "train", "train the backbone and/or the instance-control parameters");
  train->add_option("--config", ta.config, "run config (.ini)")->required();
  train->add_option("--out", ta.out, "run directory (default: runs/train-<stamp>)");
  train->add_flag("--pretrain-backbone", ta.pretrain_backbone,
                  "train the backbone from scratch first");
  train->add_option("--from", ta.from, "start from this backbone checkpoint");
  train->add_option("--ablate", ta.ablate, "disable parts: ea, la, sac, loss")
      ->delimiter(',');
  train->add_flag("--quiet", ta.quiet, "suppress progress logging");

  GenArgs ga;
  CLI::App* gen = app.add_subcommand("generate", "sample images from a layout request");
  gen->add_option("--request", ga.request, "request JSON")->required();
  gen->add_option("--ckpt", ga.ckpt, "model checkpoint")->required();
  gen->add_option("--out", ga.out, "run directory (default: runs/generate-<stamp>)");
  gen->add_flag("--no-migc", ga.no_migc, "plain conditioned backbone, no instance control");
  gen->add_option("--ablate", ga.ablate, "disable parts: ea, la, sac")->delimiter(',');

  BenchArgs ba;
  CLI::App* bench = app.add_subcommand("bench", "generate and score the synthetic benchmark");
  bench->add_option("--config", ba.config, "run config (.ini)")->required();
  bench->add_option("--ckpt", ba.ckpt, "model checkpoint")->required();
  bench->add_option("--out", ba.out, "run directory (default: runs/bench-<stamp>)");
  bench->add_flag("--no-migc", ba.no_migc, "plain conditioned backbone, no instance control");
  bench->add_option("--ablate", ba.ablate, "disable parts: ea, la, sac")->delimiter(',');
  bench->add_flag("--gt-selfcheck", ba.gt_selfcheck,
                  "score the ground-truth renders first; abort unless they pass");
  bench->add_option("--workers", ba.workers, "sampling worker threads")
      ->check(CLI::Range(1, 256));
  bench->add_option("--baseline", ba.baseline,
                    "metrics.csv of a reference run; writes delta.csv against it");

  EvalArgs ea;
  CLI::App* ev = app.add_subcommand("eval", "re-score a saved image directory");
  ev->add_option("--config", ea.config, "run config (.ini)")->required();
  ev->add_option("--images", ea.images, "directory holding benchmark.jsonl and its images")
      ->required();
  ev->add_option("--out", ea.out, "run directory (default: runs/eval-<stamp>)");

  GradArgs gr;
  CLI::App* grad = app.add_subcommand(
      "gradcheck", "compare analytic gradients against central differences, per block family");
  grad->add_option("--seed", gr.seed, "parameter/input seed");
  grad->add_option("--tol", gr.tol, "max relative error allowed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) return cmd_train(ta);
    if (gen->parsed()) return cmd_generate(ga);
    if (bench->parsed()) return cmd_bench(ba);
    if (ev->parsed()) return cmd_eval(ea);
    if (grad->parsed()) return cmd_gradcheck(gr);
  } catch (const OracleClosureError& e) {
    std::cerr << "oracle closure failure: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
