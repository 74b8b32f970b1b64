#include "migc/train.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace migc {

void StageConfig::validate() const {
  if (n_images < 1 || epochs < 1 || batch < 1) throw ConfigError("training sizes must be positive");
  if (lr <= 0) throw ConfigError("learning rate must be positive");
  if (lambda < 0) throw ConfigError("loss weight lambda must be non-negative");
  if (prompt_dropout < 0 || prompt_dropout > 1) throw ConfigError("prompt_dropout out of [0,1]");
  if (n_lo < 1 || n_hi < n_lo) throw ConfigError("instances-per-scene range out of order");
}

TrainSample make_train_sample(uint64_t seed, int index, const Vocab& vocab,
                              const Palette& palette, const BenchmarkSpec& box_law, int res,
                              int n_lo, int n_hi) {
  Rng rng = Rng(seed).fork("train-scene", static_cast<uint64_t>(index));
  const int n = rng.range_int(n_lo, n_hi);
  TrainSample ts;
  ts.scene = assign_attributes(sample_layout(box_law, n, rng), vocab, palette, rng);
  GroundTruth gt = render_ground_truth(ts.scene, res, palette);
  ts.z0 = Tensor(gt.image.shape);
  for (size_t i = 0; i < ts.z0.data.size(); ++i) ts.z0.data[i] = 2.0 * gt.image.data[i] - 1.0;
  ts.global_tokens = encode_prompt(vocab, ts.scene.phrases);
  for (const auto& p : ts.scene.phrases) ts.desc_tokens.push_back(encode_phrase(vocab, p));
  return ts;
}

namespace {

Value mse(const Value& pred, const Tensor& target) {
  Value d = sub(pred, constant(target));
  return mean_all(mul(d, d));
}

void log_epoch(std::ostream* log, const EpochStats& st) {
  if (!log) return;
  (*log) << "epoch " << st.epoch << "  l_denoise " << st.l_ldm << "  l_inhibit " << st.l_ihbt
         << "  l_total " << st.l_total << "\n";
}

}  // namespace

std::vector<EpochStats> train_backbone(UNet& net, const NoiseSchedule& sched,
                                       const StageConfig& cfg, std::ostream* log) {
  cfg.validate();
  const Vocab vocab = Vocab::standard();
  const Palette palette = Palette::standard();
  BenchmarkSpec box_law;  // benchmark box distribution doubles as the corpus law
  box_law.grid = net.cfg.res;
  box_law.max_side_units = std::max(1, net.cfg.res / 2);

  ParamRegistry reg;
  net.collect_backbone(reg);
  reg.set_requires_grad(true);
  AdamW opt;
  opt.lr = cfg.lr;
  std::vector<Value> params = reg.values();

  std::vector<EpochStats> out;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochStats st;
    st.epoch = epoch;
    int count = 0;
    for (int start = 0; start < cfg.n_images; start += cfg.batch) {
      const int bsz = std::min(cfg.batch, cfg.n_images - start);
      GradStore acc;
      double batch_loss = 0;
      for (int b = 0; b < bsz; ++b) {
        const int idx = start + b;
        TrainSample ts = make_train_sample(cfg.seed, idx, vocab, palette, box_law, net.cfg.res,
                                           cfg.n_lo, cfg.n_hi);
        Rng draw = Rng(cfg.seed).fork("bb-draw",
                                      static_cast<uint64_t>(epoch) * cfg.n_images + idx);
        const int t = draw.range_int(1, sched.T);
        Tensor eps(ts.z0.shape);
        draw.fill_normal(eps.data);
        const bool drop = draw.uniform() < cfg.prompt_dropout;
        Tensor zt = forward_noise(ts.z0, t, eps, sched);
        Value pred = net.forward(constant(zt), t, drop ? std::vector<int>{} : ts.global_tokens);
        Value loss = mse(pred, eps);
        if (!loss->val.all_finite())
          throw NumericError("non-finite backbone loss at epoch " + std::to_string(epoch) +
                             " sample " + std::to_string(idx));
        batch_loss += loss->val(0);
        acc.accumulate(backward(loss));
      }
      acc.scale(1.0 / bsz);
      opt.step(params, acc);
      st.l_ldm += batch_loss / bsz;
      st.l_total += batch_loss / bsz;
      ++count;
    }
    st.l_ldm /= count;
    st.l_total /= count;
    out.push_back(st);
    log_epoch(log, st);
  }
  return out;
}

std::vector<EpochStats> train_migc(UNet& net, const NoiseSchedule& sched, const StageConfig& cfg,
                                   std::ostream* log) {
  cfg.validate();
  if (cfg.n_hi > net.cfg.max_num)
    throw ConfigError("training scenes may not exceed the slot capacity max_num");
  const Vocab vocab = Vocab::standard();
  const Palette palette = Palette::standard();
  BenchmarkSpec box_law;
  box_law.grid = net.cfg.res;
  box_law.max_side_units = std::max(1, net.cfg.res / 2);

  ParamRegistry frozen;
  net.collect_backbone(frozen);
  frozen.set_requires_grad(false);
  const uint64_t theta_hash = frozen.content_hash();

  ParamRegistry reg;
  net.collect_migc(reg);
  reg.set_requires_grad(true);
  AdamW opt;
  opt.lr = cfg.lr;
  std::vector<Value> params = reg.values();

  Rng shuffle_rng = Rng(cfg.seed).fork("sac-shuffle", 0);

  std::vector<EpochStats> out;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochStats st;
    st.epoch = epoch;
    int count = 0;
    for (int start = 0; start < cfg.n_images; start += cfg.batch) {
      const int bsz = std::min(cfg.batch, cfg.n_images - start);
      GradStore acc;
      double b_ldm = 0, b_ihbt = 0;
      for (int b = 0; b < bsz; ++b) {
        const int idx = start + b;
        TrainSample ts = make_train_sample(cfg.seed, idx, vocab, palette, box_law, net.cfg.res,
                                           cfg.n_lo, cfg.n_hi);
        Rng draw = Rng(cfg.seed).fork("ctl-draw",
                                      static_cast<uint64_t>(epoch) * cfg.n_images + idx);
        const int t = draw.range_int(1, sched.T);
        Tensor eps(ts.z0.shape);
        draw.fill_normal(eps.data);
        Tensor zt = forward_noise(ts.z0, t, eps, sched);

        MigcFlags flags = cfg.ablations;
        flags.shuffle_rng = &shuffle_rng;
        MigcCtx ctx = make_migc_ctx(ts.scene.boxes, ts.desc_tokens, net.cfg, flags);
        AttnRecord rec;
        Value pred = net.forward(constant(zt), t, ts.global_tokens, &ctx, &rec);
        Value l_ldm = mse(pred, eps);
        Value loss = l_ldm;
        double ihbt_val = 0;
        if (cfg.lambda > 0) {
          Value l_ihbt = inhibition_loss(rec.maps, ctx.l16.bg_mask_flat);
          ihbt_val = l_ihbt->val(0);
          loss = add(l_ldm, mul_scalar(l_ihbt, cfg.lambda));
        }
        if (!loss->val.all_finite())
          throw NumericError("non-finite control loss at epoch " + std::to_string(epoch) +
                             " sample " + std::to_string(idx));
        b_ldm += l_ldm->val(0);
        b_ihbt += ihbt_val;
        acc.accumulate(backward(loss));
      }
      acc.scale(1.0 / bsz);
      opt.step(params, acc);
      st.l_ldm += b_ldm / bsz;
      st.l_ihbt += b_ihbt / bsz;
      ++count;
    }
    st.l_ldm /= count;
    st.l_ihbt /= count;
    st.l_total = st.l_ldm + cfg.lambda * st.l_ihbt;
    out.push_back(st);
    log_epoch(log, st);
  }

  ParamRegistry check;
  net.collect_backbone(check);
  if (check.content_hash() != theta_hash)
    throw NumericError("frozen backbone parameters drifted during control training");
  return out;
}

}  // namespace migc
