#pragma once

#include <string>

#include "migc/bench.hpp"
#include "migc/evalpipe.hpp"
#include "migc/train.hpp"
#include "migc/unet.hpp"

namespace migc {

struct SampleConfig {
  int steps = 50;
  int migc_steps = 25;  // instance control active for the first half by default
  double cfg_scale = 7.5;
  void validate() const;
};

// Training knobs shared by both stages; stage-specific fields apply to the
// stage that consumes them (prompt_dropout: backbone, lambda: control).
struct TrainSection {
  int n_images = 5000;
  int backbone_epochs = 2;
  int migc_epochs = 2;
  int batch = 32;
  double lr = 1e-4;
  uint64_t seed = 1;
  double prompt_dropout = 0.1;
  double lambda = 0.1;
  int n_lo = 1, n_hi = 4;
};

// Everything a run needs, resolved. The text format is strict: five sections
// ([model] [sample] [train] [bench] [eval]), every key spelled exactly,
// unknown sections or keys rejected so no published metric rides on a typo.
struct RunConfig {
  UNetConfig model;
  int T = 1000;
  double beta0 = 1e-4, beta1 = 0.02;
  SampleConfig sample;
  TrainSection train;
  BenchmarkSpec bench;
  uint64_t bench_seed = 2024;
  EvalConfig eval;

  void validate() const;
  StageConfig backbone_stage() const;
  StageConfig migc_stage() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);  // ConfigError on unreadable file

// Full key set with resolved values; parse(serialize(c)) reproduces c
// exactly (doubles are printed shortest-round-trip).
std::string serialize_run_config(const RunConfig& cfg);

}  // namespace migc
