#pragma once

#include <cstdint>
#include <vector>

#include "migc/unet.hpp"

namespace migc {

// Variance-preserving forward process: z_t = sqrt(ab_t) z0 + sqrt(1-ab_t) eps.
// Arrays are indexed by t in [0, T] with alpha_bar[0] = 1.
struct NoiseSchedule {
  int T = 0;
  double beta0 = 0, beta1 = 0;
  std::vector<double> beta;        // beta[1..T]
  std::vector<double> alpha_bar;   // alpha_bar[0..T], decreasing from 1
  std::vector<double> sqrt_ab;     // sqrt(alpha_bar)
  std::vector<double> sqrt_1mab;   // sqrt(1 - alpha_bar)

  static NoiseSchedule linear(int T = 1000, double b0 = 1e-4, double b1 = 0.02);
};

Tensor forward_noise(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s);

// eps_u + scale * (eps_c - eps_u)
Tensor cfg_combine(const Tensor& eps_u, const Tensor& eps_c, double scale);

// One deterministic reverse step from timestep t to t_prev (t_prev < t,
// t_prev == 0 lands on the clean estimate):
//   z0_hat  = (z - sqrt(1-ab_t) eps_hat) / sqrt(ab_t)
//   z_prev  = sqrt(ab_prev) z0_hat + sqrt(1-ab_prev) eps_hat
Tensor ddim_update(const Tensor& z, const Tensor& eps_hat, int t, int t_prev,
                   const NoiseSchedule& s);

struct SampleRequest {
  std::vector<Box> boxes;
  std::vector<std::vector<int>> desc_tokens;
  std::vector<int> global_tokens;
  uint64_t seed = 0;
  int steps = 50;
  int migc_steps = 25;  // control active for the first migc_steps of `steps`
  double cfg_scale = 7.5;
  bool use_migc = true;
  MigcFlags flags;
};

// Deterministic sampler: pure function of (request, parameters). The
// unconditional guidance branch runs the plain backbone on the null prompt
// (no instance control). Output is RGB in [0,1].
Tensor sample_image(const UNet& net, const NoiseSchedule& s, const SampleRequest& req);

}  // namespace migc
