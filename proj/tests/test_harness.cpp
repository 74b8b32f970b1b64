// Run-infrastructure tests: config text format, PNG round trips, the worker
// pool, hashing/manifests — plus, when invoked with --cli-bin <path>, an
// end-to-end drive of the command-line tool (exit codes included).

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <sys/wait.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "migc/config.hpp"
#include "migc/png_io.hpp"
#include "migc/rng.hpp"
#include "migc/runio.hpp"
#include "migc/threadpool.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace migc;

static std::string g_cli_bin;  // empty: library-level cases only

int main(int argc, char** argv) {
  std::vector<const char*> pass;
  for (int i = 0; i < argc; ++i) {
    if (std::string(argv[i]) == "--cli-bin" && i + 1 < argc) {
      g_cli_bin = argv[++i];
      continue;
    }
    pass.push_back(argv[i]);
  }
  doctest::Context ctx(static_cast<int>(pass.size()), pass.data());
  return ctx.run();
}

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("migc_harness_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// config text format
// ---------------------------------------------------------------------------

TEST_CASE("config: defaults serialize and re-parse to the identical text") {
  RunConfig cfg;
  const std::string text = serialize_run_config(cfg);
  RunConfig back = parse_run_config(text);
  CHECK(serialize_run_config(back) == text);
  CHECK(back.model.res == 32);
  CHECK(back.T == 1000);
  CHECK(back.sample.cfg_scale == 7.5);
  CHECK(back.bench.layouts_per_level == 50);
  CHECK(back.eval.iou_threshold == 0.5);
}

TEST_CASE("config: every field round-trips after mutation") {
  RunConfig cfg;
  cfg.model.res = 16;
  cfg.model.base = 24;
  cfg.model.mid = 12;
  cfg.model.deep = 16;
  cfg.model.heads = 4;  // divides every channel count above
  cfg.T = 750;
  cfg.beta0 = 2.5e-4;
  cfg.beta1 = 0.0175;
  cfg.sample.steps = 40;
  cfg.sample.migc_steps = 13;
  cfg.sample.cfg_scale = 3.25;
  cfg.train.n_images = 123;
  cfg.train.backbone_epochs = 5;
  cfg.train.migc_epochs = 7;
  cfg.train.batch = 11;
  cfg.train.lr = 7.5e-5;
  cfg.train.seed = 987654321;
  cfg.train.prompt_dropout = 0.15;
  cfg.train.lambda = 0.05;
  cfg.train.n_lo = 2;
  cfg.train.n_hi = 3;
  cfg.bench.level_lo = 3;
  cfg.bench.layouts_per_level = 9;
  cfg.bench.max_pair_iou = 0.125;
  cfg.bench_seed = 31337;
  cfg.eval.iou_threshold = 0.45;
  cfg.eval.bands.cross_hi = 0.5;
  cfg.eval.tie_rule = TieRule::kClosest;
  cfg.eval.colors.entries[0].second.hue = {{0, 12.5}, {350, 360}};
  cfg.eval.colors.entries[0].second.s_lo = 0.35;

  RunConfig back = parse_run_config(serialize_run_config(cfg));
  CHECK(back.model.res == 16);
  CHECK(back.model.heads == 4);
  CHECK(back.T == 750);
  CHECK(back.beta0 == 2.5e-4);
  CHECK(back.sample.migc_steps == 13);
  CHECK(back.train.seed == 987654321);
  CHECK(back.train.lambda == 0.05);
  CHECK(back.bench_seed == 31337);
  CHECK(back.eval.tie_rule == TieRule::kClosest);
  CHECK(back.eval.colors.entries[0].second.hue.size() == 2);
  CHECK(back.eval.colors.entries[0].second.hue[1].first == 350.0);
  CHECK(back.eval.colors.entries[0].second.s_lo == 0.35);
  CHECK(serialize_run_config(back) == serialize_run_config(cfg));
}

TEST_CASE("config: partial files keep defaults elsewhere; comments are fine") {
  const std::string text =
      "# run notes\n"
      "[sample]\n"
      "steps = 40\n"
      "\n"
      "[train]\n"
      "seed = 9\n";
  RunConfig cfg = parse_run_config(text);
  CHECK(cfg.sample.steps == 40);
  CHECK(cfg.sample.migc_steps == 25);  // untouched default
  CHECK(cfg.train.seed == 9);
  CHECK(cfg.model.res == 32);
  // defaults are not silently adjusted: shrinking steps below the default
  // control window without restating migc_steps is a contradiction
  CHECK_THROWS_AS(parse_run_config("[sample]\nsteps = 20\n"), ConfigError);
}

TEST_CASE("config: strict rejection with line numbers") {
  CHECK_THROWS_WITH_AS(parse_run_config("[nope]\n"),
                       doctest::Contains("unknown section"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config("[model]\nwidth = 3\n"),
                       doctest::Contains("unknown key 'width'"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config("res = 8\n"),
                       doctest::Contains("before any section"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config("[model\nres = 8\n"),
                       doctest::Contains("malformed section header"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config("[model]\nres\n"),
                       doctest::Contains("expected 'key = value'"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config("[model]\nres = eight\n"),
                       doctest::Contains("line 2"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config("[eval]\nred_s = 0.4\n"),
                       doctest::Contains("expected 'lo:hi'"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config("[eval]\ntie_rule = best\n"),
                       doctest::Contains("max_iou or closest"), ConfigError);
  // cross-field validation still applies to parsed configs
  CHECK_THROWS_WITH_AS(parse_run_config("[sample]\nsteps = 10\nmigc_steps = 11\n"),
                       doctest::Contains("migc_steps"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config("[model]\nT = 40\n"),
                       doctest::Contains("steps cannot exceed"), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.ini"), ConfigError);
}

TEST_CASE("config: sampling steps double as the control window boundary") {
  RunConfig cfg;
  cfg.sample.steps = 30;
  cfg.sample.migc_steps = 0;  // control off
  CHECK_NOTHROW(cfg.validate());
  cfg.sample.migc_steps = 30;  // control the whole trajectory
  CHECK_NOTHROW(cfg.validate());
}

// ---------------------------------------------------------------------------
// png round trips
// ---------------------------------------------------------------------------

TEST_CASE("png: write/read round trip is exact on the 8-bit lattice") {
  fs::path dir = fresh_dir("png");
  Tensor img({3, 5, 7});
  for (size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = static_cast<double>((i * 17) % 256) / 255.0;
  const std::string path = (dir / "exact.png").string();
  write_png(path, img);
  Tensor back = read_png(path);
  REQUIRE(back.shape == std::vector<int>{3, 5, 7});
  for (size_t i = 0; i < img.data.size(); ++i)
    CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-12));
}

TEST_CASE("png: arbitrary values quantize to the nearest of 256 levels") {
  fs::path dir = fresh_dir("png_q");
  Rng rng(3);
  Tensor img({3, 9, 4});
  for (auto& v : img.data) v = rng.uniform();
  const std::string path = (dir / "q.png").string();
  write_png(path, img);
  Tensor back = read_png(path);
  for (size_t i = 0; i < img.data.size(); ++i)
    CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("png: out-of-range values clamp; identical tensors give identical bytes") {
  fs::path dir = fresh_dir("png_c");
  Tensor img({3, 2, 2});
  img.data[0] = -0.75;
  img.data[1] = 1.75;
  const std::string a = (dir / "a.png").string(), b = (dir / "b.png").string();
  write_png(a, img);
  write_png(b, img);
  CHECK(hash_file(a) == hash_file(b));
  Tensor back = read_png(a);
  CHECK(back.data[0] == 0.0);
  CHECK(back.data[1] == 1.0);
}

TEST_CASE("png: unreadable paths and bad shapes are rejected") {
  CHECK_THROWS_AS(read_png("/nonexistent/image.png"), ConfigError);
  Tensor bad({1, 4, 4});
  CHECK_THROWS_AS(write_png("/tmp/migc_harness_bad.png", bad), ConfigError);
  // not a png: signature check fires
  fs::path dir = fresh_dir("png_sig");
  const std::string junk = (dir / "junk.png").string();
  write_text_file(junk, "definitely not a png");
  CHECK_THROWS_AS(read_png(junk), ConfigError);
}

// ---------------------------------------------------------------------------
// worker pool
// ---------------------------------------------------------------------------

TEST_CASE("worker pool: results are identical for any worker count") {
  const int n = 977;
  std::vector<long> ref(n);
  for (int i = 0; i < n; ++i) ref[static_cast<size_t>(i)] = static_cast<long>(i) * i;
  for (int workers : {1, 3, 8}) {
    std::vector<long> out(n, -1);
    run_indexed_jobs(n, workers, [&](int i) { out[static_cast<size_t>(i)] = static_cast<long>(i) * i; });
    CHECK(out == ref);
  }
}

TEST_CASE("worker pool: the lowest-index failure wins, as in a sequential run") {
  for (int workers : {1, 6}) {
    CAPTURE(workers);
    try {
      run_indexed_jobs(50, workers, [&](int i) {
        if (i == 31 || i == 7 || i == 44)
          throw NumericError("job " + std::to_string(i) + " failed");
      });
      FAIL("expected a throw");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()) == "job 7 failed");
    }
  }
}

TEST_CASE("worker pool: degenerate inputs") {
  int calls = 0;
  run_indexed_jobs(0, 4, [&](int) { ++calls; });
  CHECK(calls == 0);
  CHECK_THROWS_AS(run_indexed_jobs(-1, 4, [](int) {}), ConfigError);
  CHECK_THROWS_AS(run_indexed_jobs(4, 0, [](int) {}), ConfigError);
  // every index runs exactly once even when jobs outnumber workers widely
  std::atomic<int> hits{0};
  run_indexed_jobs(1000, 16, [&](int) { hits.fetch_add(1); });
  CHECK(hits.load() == 1000);
}

// ---------------------------------------------------------------------------
// hashing and manifests
// ---------------------------------------------------------------------------

TEST_CASE("hashing: pinned fnv-1a vectors and hex formatting") {
  fs::path dir = fresh_dir("hash");
  const std::string empty = (dir / "empty").string();
  const std::string abc = (dir / "abc").string();
  write_text_file(empty, "");
  write_text_file(abc, "abc");
  // published 64-bit FNV-1a constants: offset basis, and the digest of "abc"
  CHECK(hash_file(empty) == 0xcbf29ce484222325ull);
  CHECK(hash_file(abc) == 0xe71fa2190541574bull);
  CHECK(hex64(0xcbf29ce484222325ull) == "cbf29ce484222325");
  CHECK(hex64(0) == "0000000000000000");
  CHECK_THROWS_AS(hash_file((dir / "missing").string()), ConfigError);
}

TEST_CASE("manifest: one self-describing json record per line") {
  fs::path dir = fresh_dir("manifest");
  const std::string payload = (dir / "payload.bin").string();
  write_text_file(payload, "payload-bytes");
  RunLog log;
  log.add_file("artifact", payload);
  log.add_note("remark", "hello");
  const std::string out = (dir / "manifest.jsonl").string();
  log.save(out);

  std::ifstream is(out);
  std::string l1, l2, l3;
  REQUIRE(std::getline(is, l1));
  REQUIRE(std::getline(is, l2));
  CHECK_FALSE(std::getline(is, l3));
  json j1 = json::parse(l1), j2 = json::parse(l2);
  CHECK(j1["role"] == "artifact");
  CHECK(j1["path"] == "payload.bin");  // stored relative: runs stay relocatable
  CHECK(j1["fnv1a"] == hex64(hash_file(payload)));
  CHECK(j2["role"] == "remark");
  CHECK(j2["note"] == "hello");
}

TEST_CASE("run dirs: sibling creations never collide") {
  fs::path dir = fresh_dir("rundirs");
  const std::string a = make_run_dir(dir.string(), "job");
  const std::string b = make_run_dir(dir.string(), "job");
  CHECK(a != b);
  CHECK(fs::is_directory(a));
  CHECK(fs::is_directory(b));
}

// ---------------------------------------------------------------------------
// CLI end-to-end (only with --cli-bin)
// ---------------------------------------------------------------------------

namespace {

struct CmdResult {
  int code = -1;
  std::string out;
};

CmdResult run_cli(const fs::path& scratch, const std::string& args) {
  const std::string outf = (scratch / "cmd.out").string();
  const std::string cmd = g_cli_bin + " " + args + " > " + outf + " 2>&1";
  const int rc = std::system(cmd.c_str());
  CmdResult r;
  r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = read_text_file(outf);
  return r;
}

const char* kTinyConfig = R"(# tiny geometry so the whole flow runs in seconds
[model]
res = 8
base = 4
mid = 4
deep = 8
heads = 1
d_txt = 8
t_dim = 8
gn_groups = 2
max_num = 2
sac_hidden = 4
spatial_k = 3

[sample]
steps = 6
migc_steps = 3

[train]
n_images = 16
backbone_epochs = 1
migc_epochs = 1
batch = 8
seed = 5
n_lo = 1
n_hi = 2

[bench]
level_lo = 1
level_hi = 2
layouts_per_level = 2
seeds_per_layout = 2
grid = 8
min_side_frac = 0.25
max_side_units = 4
)";

std::string slurp(const fs::path& p) { return read_text_file(p.string()); }

}  // namespace

TEST_CASE("cli: train / generate / bench / eval flow with deterministic artifacts") {
  if (g_cli_bin.empty()) return;  // unit run: the integration pass drives this
  fs::path dir = fresh_dir("cli_flow");
  const std::string cfg = (dir / "tiny.ini").string();
  write_text_file(cfg, kTinyConfig);

  // train both stages
  auto tr = run_cli(dir, "train --config " + cfg + " --pretrain-backbone --out " +
                             (dir / "train").string());
  CAPTURE(tr.out);
  REQUIRE(tr.code == 0);
  CHECK(fs::exists(dir / "train/backbone.ckpt"));
  CHECK(fs::exists(dir / "train/model.ckpt"));
  CHECK(fs::exists(dir / "train/config.ini"));
  const std::string losses = slurp(dir / "train/losses.csv");
  CHECK(losses.rfind("stage,epoch,l_denoise,l_inhibit,l_total\n", 0) == 0);
  CHECK(losses.find("\n0,0,") != std::string::npos);
  CHECK(losses.find("\n1,0,") != std::string::npos);
  {
    std::istringstream is(slurp(dir / "train/manifest.jsonl"));
    std::string l;
    int n = 0;
    while (std::getline(is, l)) {
      const json rec = json::parse(l);  // throws (failing the case) if malformed
      CHECK(rec.contains("role"));
      ++n;
    }
    CHECK(n >= 4);  // config, backbone, model, losses
  }

  // resume control training from the saved backbone
  auto tr2 = run_cli(dir, "train --config " + cfg + " --from " +
                              (dir / "train/backbone.ckpt").string() + " --out " +
                              (dir / "train2").string());
  CAPTURE(tr2.out);
  CHECK(tr2.code == 0);
  CHECK(fs::exists(dir / "train2/model.ckpt"));

  // generation is a pure function of the request
  const std::string req = (dir / "req.json").string();
  write_text_file(req, R"({"instances": [
      {"color": "red", "shape": "circle", "box": [0.0, 0.0, 0.5, 0.5]},
      {"color": "blue", "shape": "square", "box": [0.5, 0.5, 1.0, 1.0]}],
    "seeds": [3, 4], "steps": 6, "migc_steps": 3})");
  const std::string ck = (dir / "train/model.ckpt").string();
  auto g1 = run_cli(dir, "generate --request " + req + " --ckpt " + ck + " --out " +
                             (dir / "gen1").string());
  auto g2 = run_cli(dir, "generate --request " + req + " --ckpt " + ck + " --out " +
                             (dir / "gen2").string());
  CAPTURE(g1.out);
  REQUIRE(g1.code == 0);
  REQUIRE(g2.code == 0);
  for (const char* name : {"img-3.png", "img-4.png"}) {
    CHECK(hash_file((dir / "gen1" / name).string()) == hash_file((dir / "gen2" / name).string()));
  }
  CHECK(hash_file((dir / "gen1/img-3.png").string()) !=
        hash_file((dir / "gen1/img-4.png").string()));
  json settings = json::parse(slurp(dir / "gen1/settings.json"));
  CHECK(settings["instance_control"] == true);
  CHECK(settings["prompt"] == "a red circle, and a blue square");

  // benchmark: self-checked, parallel, reproducible across worker counts
  auto b2 = run_cli(dir, "bench --config " + cfg + " --ckpt " + ck +
                             " --gt-selfcheck --workers 2 --out " + (dir / "bench2").string());
  CAPTURE(b2.out);
  REQUIRE(b2.code == 0);
  CHECK(b2.out.find("gt self-check") != std::string::npos);
  const std::string metrics = slurp(dir / "bench2/metrics.csv");
  CHECK(metrics.rfind("level,n_images,instance_success_rate,miou,R\n", 0) == 0);
  CHECK(metrics.find("\nall,8,") != std::string::npos);  // 2 levels x 2 layouts x 2 seeds

  auto b1 = run_cli(dir, "bench --config " + cfg + " --ckpt " + ck + " --workers 1 --out " +
                             (dir / "bench1").string());
  REQUIRE(b1.code == 0);
  CHECK(slurp(dir / "bench1/metrics.csv") == metrics);
  CHECK(slurp(dir / "bench1/verdicts.jsonl") == slurp(dir / "bench2/verdicts.jsonl"));
  int n_images = 0;
  for (const auto& e : fs::directory_iterator(dir / "bench2/images"))
    n_images += e.path().extension() == ".png";
  CHECK(n_images == 8);

  // re-scoring the saved images reproduces the benchmark's numbers
  auto ev = run_cli(dir, "eval --config " + cfg + " --images " + (dir / "bench2").string() +
                             " --out " + (dir / "rescore").string());
  CAPTURE(ev.out);
  REQUIRE(ev.code == 0);
  CHECK(slurp(dir / "rescore/metrics.csv") == metrics);
  CHECK(slurp(dir / "rescore/verdicts.jsonl") == slurp(dir / "bench2/verdicts.jsonl"));

  // delta table against the control-free baseline
  auto bn = run_cli(dir, "bench --config " + cfg + " --ckpt " + ck + " --no-migc --baseline " +
                             (dir / "bench2/metrics.csv").string() + " --out " +
                             (dir / "benchno").string());
  REQUIRE(bn.code == 0);
  CHECK(slurp(dir / "benchno/delta.csv").rfind("level,d_instance_success_rate,d_miou,d_R\n", 0) ==
        0);
}

TEST_CASE("cli: exit codes separate config, numeric and closure failures") {
  if (g_cli_bin.empty()) return;
  fs::path dir = fresh_dir("cli_codes");
  const std::string cfg = (dir / "tiny.ini").string();
  write_text_file(cfg, kTinyConfig);

  // usage: no subcommand
  CHECK(run_cli(dir, "").code == 1);
  // config: unknown key, with the offending line reported
  const std::string bad = (dir / "bad.ini").string();
  write_text_file(bad, "[model]\nres = 8\nwidth = 3\n");
  auto r = run_cli(dir, "train --config " + bad + " --pretrain-backbone");
  CHECK(r.code == 1);
  CHECK(r.out.find("unknown key 'width'") != std::string::npos);
  CHECK(r.out.find("line 3") != std::string::npos);
  // config: train without a starting point
  CHECK(run_cli(dir, "train --config " + cfg).code == 1);
  // config: missing checkpoint file
  CHECK(run_cli(dir, "bench --config " + cfg + " --ckpt " + (dir / "nope.ckpt").string()).code ==
        1);

  // build a real checkpoint for request-level checks
  auto tr = run_cli(dir, "train --config " + cfg + " --pretrain-backbone --out " +
                             (dir / "train").string());
  REQUIRE(tr.code == 0);
  const std::string ck = (dir / "train/model.ckpt").string();

  // request error: more instances than aggregation slots
  const std::string over = (dir / "over.json").string();
  write_text_file(over, R"({"seed": 1, "instances": [
      {"color": "red", "shape": "circle", "box": [0.0, 0.0, 0.2, 0.2]},
      {"color": "red", "shape": "circle", "box": [0.3, 0.3, 0.5, 0.5]},
      {"color": "red", "shape": "circle", "box": [0.6, 0.6, 0.8, 0.8]}]})");
  auto ov = run_cli(dir, "generate --request " + over + " --ckpt " + ck);
  CHECK(ov.code == 1);
  CHECK(ov.out.find("slot capacity") != std::string::npos);

  // request error: unknown fields and vocabulary
  const std::string unk = (dir / "unk.json").string();
  write_text_file(unk, R"({"seed": 1, "instances": [
      {"color": "magenta", "shape": "circle", "box": [0.0, 0.0, 0.2, 0.2]}]})");
  CHECK(run_cli(dir, "generate --request " + unk + " --ckpt " + ck).code == 1);
  const std::string extra = (dir / "extra.json").string();
  write_text_file(extra, R"({"seed": 1, "temperature": 0.7})");
  auto ex = run_cli(dir, "generate --request " + extra + " --ckpt " + ck);
  CHECK(ex.code == 1);
  CHECK(ex.out.find("temperature") != std::string::npos);

  // config/checkpoint geometry mismatch
  const std::string cfg2 = (dir / "other.ini").string();
  std::string other = kTinyConfig;
  other.replace(other.find("base = 4"), 8, "base = 8");
  write_text_file(cfg2, other);
  CHECK(run_cli(dir, "bench --config " + cfg2 + " --ckpt " + ck).code == 1);

  // ablation vocabulary is closed
  CHECK(run_cli(dir, "train --config " + cfg + " --pretrain-backbone --ablate fancy").code == 1);
  // 'loss' is a training-only ablation
  CHECK(run_cli(dir, "bench --config " + cfg + " --ckpt " + ck + " --ablate loss").code == 1);

  // gradient self-diagnosis passes on the reference kernels
  auto gc = run_cli(dir, "gradcheck");
  CAPTURE(gc.out);
  CHECK(gc.code == 0);
  CHECK(gc.out.find("all families within") != std::string::npos);
  // an impossible tolerance must flip it to the numeric-failure exit code
  CHECK(run_cli(dir, "gradcheck --tol 1e-18").code == 2);
}
