#include "migc/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace migc {

NoiseSchedule NoiseSchedule::linear(int T, double b0, double b1) {
  if (T < 1 || b0 <= 0 || b1 < b0 || b1 >= 1)
    throw ConfigError("noise schedule needs T >= 1 and 0 < beta0 <= beta1 < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta0 = b0;
  s.beta1 = b1;
  s.beta.assign(T + 1, 0.0);
  s.alpha_bar.assign(T + 1, 1.0);
  double ab = 1.0;
  for (int t = 1; t <= T; ++t) {
    s.beta[t] = T == 1 ? b0 : b0 + (b1 - b0) * (t - 1) / (T - 1);
    ab *= 1.0 - s.beta[t];
    s.alpha_bar[t] = ab;
  }
  s.sqrt_ab.resize(T + 1);
  s.sqrt_1mab.resize(T + 1);
  for (int t = 0; t <= T; ++t) {
    s.sqrt_ab[t] = std::sqrt(s.alpha_bar[t]);
    s.sqrt_1mab[t] = std::sqrt(1.0 - s.alpha_bar[t]);
  }
  return s;
}

Tensor forward_noise(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s) {
  if (t < 1 || t > s.T) throw ConfigError("timestep out of range [1, T]");
  if (z0.shape != eps.shape) throw ConfigError("noise shape must match the sample");
  Tensor out(z0.shape);
  const double a = s.sqrt_ab[t], b = s.sqrt_1mab[t];
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * z0.data[i] + b * eps.data[i];
  return out;
}

Tensor cfg_combine(const Tensor& eps_u, const Tensor& eps_c, double scale) {
  if (eps_u.shape != eps_c.shape) throw ConfigError("guidance branches disagree on shape");
  Tensor out(eps_u.shape);
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = eps_u.data[i] + scale * (eps_c.data[i] - eps_u.data[i]);
  return out;
}

Tensor ddim_update(const Tensor& z, const Tensor& eps_hat, int t, int t_prev,
                   const NoiseSchedule& s) {
  if (t < 1 || t > s.T || t_prev < 0 || t_prev >= t)
    throw ConfigError("ddim step needs 0 <= t_prev < t <= T");
  const double at = s.sqrt_ab[t], bt = s.sqrt_1mab[t];
  const double ap = s.sqrt_ab[t_prev], bp = s.sqrt_1mab[t_prev];
  Tensor out(z.shape);
  for (size_t i = 0; i < out.data.size(); ++i) {
    double z0 = (z.data[i] - bt * eps_hat.data[i]) / at;
    out.data[i] = ap * z0 + bp * eps_hat.data[i];
  }
  return out;
}

Tensor sample_image(const UNet& net, const NoiseSchedule& s, const SampleRequest& req) {
  if (req.steps < 1 || req.steps > s.T) throw ConfigError("sampler steps out of range");
  if (req.migc_steps < 0) throw ConfigError("negative control-step count");
  NoGradGuard ng;

  MigcCtx ctx;
  bool have_ctx = false;
  if (req.use_migc && req.migc_steps > 0) {
    ctx = make_migc_ctx(req.boxes, req.desc_tokens, net.cfg, req.flags);
    have_ctx = true;
  }

  Rng rng(req.seed);
  Tensor z({net.cfg.img_ch, net.cfg.res, net.cfg.res});
  rng.fill_normal(z.data);

  for (int k = req.steps; k >= 1; --k) {
    const int t = k * s.T / req.steps;
    const int t_prev = (k - 1) * s.T / req.steps;
    const bool controlled = have_ctx && (req.steps - k) < req.migc_steps;

    Value zc = constant(z);
    Tensor eps_c = net.forward(zc, t, req.global_tokens, controlled ? &ctx : nullptr)->val;
    Tensor eps_hat;
    if (req.cfg_scale == 1.0) {
      eps_hat = std::move(eps_c);
    } else {
      Tensor eps_u = net.forward(zc, t, {}, nullptr)->val;  // null prompt, no control
      eps_hat = cfg_combine(eps_u, eps_c, req.cfg_scale);
    }
    if (!eps_hat.all_finite()) throw NumericError("non-finite noise prediction at t=" +
                                                  std::to_string(t));
    z = ddim_update(z, eps_hat, t, t_prev, s);
  }

  // decode from [-1,1] to clamped RGB
  Tensor img(z.shape);
  for (size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = std::clamp((z.data[i] + 1.0) * 0.5, 0.0, 1.0);
  return img;
}

}  // namespace migc
