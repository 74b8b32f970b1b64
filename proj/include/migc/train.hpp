#pragma once

#include <iosfwd>
#include <vector>

#include "migc/bench.hpp"
#include "migc/diffusion.hpp"
#include "migc/unet.hpp"

namespace migc {

// One synthetic training sample: scene geometry, its render mapped to
// [-1,1], and the encoded global prompt.
struct TrainSample {
  Scene scene;
  Tensor z0;  // [3,res,res]
  std::vector<int> global_tokens;
  std::vector<std::vector<int>> desc_tokens;
};

// Deterministic corpus: sample `index` of the corpus keyed by `seed`.
// Scenes draw 1..n_hi instances with the benchmark's box law.
TrainSample make_train_sample(uint64_t seed, int index, const Vocab& vocab,
                              const Palette& palette, const BenchmarkSpec& box_law, int res,
                              int n_lo, int n_hi);

struct StageConfig {
  int n_images = 5000;
  int epochs = 2;
  int batch = 32;
  double lr = 1e-4;
  uint64_t seed = 1;
  double prompt_dropout = 0.1;  // backbone stage only
  double lambda = 0.1;          // control stage only; 0 drops the term
  int n_lo = 1, n_hi = 4;       // instances per training scene
  MigcFlags ablations;          // control stage: ea/la/sac switches only
  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double l_ldm = 0, l_ihbt = 0, l_total = 0;
};

// Stage 0: train every backbone parameter on the synthetic corpus with
// global prompts only (a fraction of samples sees the null prompt so the
// guidance branch is trained). Returns per-epoch mean losses.
std::vector<EpochStats> train_backbone(UNet& net, const NoiseSchedule& sched,
                                       const StageConfig& cfg, std::ostream* log = nullptr);

// Stage 1: freeze the backbone, train the control parameters with
// L = L_denoise + lambda * L_inhibition. Instance lists are padded to
// cfg(max_num) inside the request builder; aggregation slots are shuffled
// per step. Throws NumericError on non-finite loss, and verifies the
// frozen-backbone hash at exit.
std::vector<EpochStats> train_migc(UNet& net, const NoiseSchedule& sched, const StageConfig& cfg,
                                   std::ostream* log = nullptr);

}  // namespace migc
