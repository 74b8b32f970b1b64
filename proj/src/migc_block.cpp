#include "migc/migc_block.hpp"

#include <cmath>

namespace migc {

PositionMlp::PositionMlp(int bands_, int hidden, int d_txt, Rng& rng) : bands(bands_) {
  l1 = Linear(8 * bands_, hidden, rng);
  l2 = Linear(hidden, d_txt, rng);
}

Value PositionMlp::fwd(const Box& b) const {
  Tensor fe = fourier_embed(b, bands);
  Value row = constant(Tensor({1, static_cast<int>(fe.numel())}, fe.data));
  return l2.fwd(silu(l1.fwd(row)));
}

void PositionMlp::collect(ParamRegistry& r, const std::string& prefix) const {
  l1.collect(r, prefix + ".l1");
  l2.collect(r, prefix + ".l2");
}

EnhancementAttention::EnhancementAttention(int channels, int d_txt, int heads_, Rng& rng)
    : heads(heads_) {
  const double si = 1.0 / std::sqrt(static_cast<double>(channels));
  const double st = 1.0 / std::sqrt(static_cast<double>(d_txt));
  Wq = param(uniform_init({channels, channels}, si, rng));
  Wk = param(uniform_init({d_txt, channels}, st, rng));
  Wv = param(uniform_init({d_txt, channels}, st, rng));
  Wo = param(Tensor::zeros({channels, channels}));
}

void EnhancementAttention::collect(ParamRegistry& r, const std::string& prefix) const {
  r.add(prefix + ".Wq", Wq);
  r.add(prefix + ".Wk", Wk);
  r.add(prefix + ".Wv", Wv);
  r.add(prefix + ".Wo", Wo);
}

LayoutAttentionParams::LayoutAttentionParams(int channels, int heads_, Rng& rng) : heads(heads_) {
  const double s = 1.0 / std::sqrt(static_cast<double>(channels));
  Wq = param(uniform_init({channels, channels}, s, rng));
  Wk = param(uniform_init({channels, channels}, s, rng));
  Wv = param(uniform_init({channels, channels}, s, rng));
}

void LayoutAttentionParams::collect(ParamRegistry& r, const std::string& prefix) const {
  r.add(prefix + ".Wq", Wq);
  r.add(prefix + ".Wk", Wk);
  r.add(prefix + ".Wv", Wv);
}

Sac::Sac(int channels_, int hidden, int max_num_, int spatial_k, Rng& rng)
    : max_num(max_num_), n_slots(max_num_ + 2), channels(channels_) {
  intra_in = Conv2dLayer(channels_ + 1, hidden, 1, 1, 0, rng);
  intra_cbam = Cbam(hidden, 4, spatial_k, rng);
  intra_out = Conv2dLayer(hidden, 1, 1, 1, 0, rng);
  inter_cbam = Cbam(n_slots, 4, spatial_k, rng);
  logit_head = Conv2dLayer(n_slots, n_slots, 1, 1, 0, rng);
  out_proj = Conv2dLayer(channels_, channels_, 1, 1, 0, rng, /*zero_init=*/true);
}

void Sac::collect(ParamRegistry& r, const std::string& prefix) const {
  intra_in.collect(r, prefix + ".intra_in");
  intra_cbam.collect(r, prefix + ".intra_cbam");
  intra_out.collect(r, prefix + ".intra_out");
  inter_cbam.collect(r, prefix + ".inter_cbam");
  logit_head.collect(r, prefix + ".logit_head");
  out_proj.collect(r, prefix + ".out_proj");
}

MigcSite::MigcSite(int channels, int d_txt, int heads, int max_num, int sac_hidden, int spatial_k,
                   Rng& rng)
    : ea(channels, d_txt, heads, rng),
      la(channels, heads, rng),
      sac(channels, sac_hidden, max_num, spatial_k, rng) {}

void MigcSite::collect(ParamRegistry& r, const std::string& prefix) const {
  ea.collect(r, prefix + ".ea");
  la.collect(r, prefix + ".la");
  sac.collect(r, prefix + ".sac");
}

LayoutCtx make_layout_ctx(const std::vector<Box>& boxes,
                          const std::vector<std::vector<int>>& desc_tokens, int H, int W) {
  if (boxes.size() != desc_tokens.size())
    throw ConfigError("layout: box and description counts differ");
  LayoutCtx ctx;
  ctx.H = H;
  ctx.W = W;
  ctx.boxes = boxes;
  ctx.desc_tokens = desc_tokens;
  std::vector<Tensor> planes;
  for (const Box& b : boxes) planes.push_back(rasterize_mask(b, H, W));
  Tensor bg = background_mask(planes, H, W);
  ctx.la_mask = layout_attention_mask(planes, bg);
  for (Tensor& p : planes) ctx.masks_flat.push_back(Tensor({H * W}, std::move(p.data)));
  ctx.bg_mask_flat = Tensor({H * W}, std::move(bg.data));
  return ctx;
}

Value cross_attention_shading(const Value& Q, const Value& K, const Value& V, int heads,
                              const Tensor& mask_flat, Value* mean_attn_out) {
  Value out;
  if (mean_attn_out) {
    AttentionWithMaps awm = attention_rows_with_maps(Q, K, V, heads);
    std::vector<Value> per_head;
    for (const Value& A : awm.maps) per_head.push_back(mean_axis(A, 1));
    *mean_attn_out = per_head.size() == 1
                         ? per_head[0]
                         : mul_scalar(add_many(per_head),
                                      1.0 / static_cast<double>(per_head.size()));
    out = awm.out;
  } else {
    out = attention_rows(Q, K, V, heads);
  }
  return mul_axis0(out, constant(mask_flat));
}

Value make_grounded_tokens(const Value& desc_tokens, const Value& pos_token) {
  return concat({desc_tokens, pos_token}, 0);
}

Value enhancement_attention(const EnhancementAttention& ea, const Value& rows,
                            const Value& grounded_tokens, const Tensor& mask_flat) {
  Value q = matmul(rows, ea.Wq);
  Value k = matmul(grounded_tokens, ea.Wk);
  Value v = matmul(grounded_tokens, ea.Wv);
  Value o = matmul(attention_rows(q, k, v, ea.heads), ea.Wo);
  return mul_axis0(o, constant(mask_flat));
}

Value layout_attention(const LayoutAttentionParams& la, const Value& rows,
                       const Tensor& la_mask) {
  return attention_rows(matmul(rows, la.Wq), matmul(rows, la.Wk), matmul(rows, la.Wv), la.heads,
                        &la_mask);
}

Value pad_shading_channels(const std::vector<Value>& inst_feats, const Value& padding_feat,
                           const Value& bg_feat, const Value* la_feat, int max_num,
                           const std::vector<int>& slot_order) {
  if (static_cast<int>(slot_order.size()) != max_num)
    throw NumericError("pad_shading_channels: slot order length mismatch");
  std::vector<Value> planes;
  planes.reserve(static_cast<size_t>(max_num) + 2);
  for (int s = 0; s < max_num; ++s) {
    const int idx = slot_order[static_cast<size_t>(s)];
    planes.push_back(idx >= 0 ? inst_feats.at(static_cast<size_t>(idx)) : padding_feat);
  }
  planes.push_back(bg_feat);
  planes.push_back(la_feat ? *la_feat : padding_feat);
  return concat(planes, 0);
}

SacOut sac_aggregate(const Sac& sac, const std::vector<SacEntry>& inst, const SacEntry& bg,
                     const SacEntry* la, int H, int W, Rng* shuffle_rng) {
  const int n = static_cast<int>(inst.size());
  if (n > sac.max_num)
    throw ConfigError("layout has " + std::to_string(n) + " instances; capacity is " +
                      std::to_string(sac.max_num));
  const int HW = H * W;

  auto intra = [&](const Value& shading_rows, const Tensor& mask_flat) {
    Value chw = from_rows(shading_rows, H, W);
    Value mplane = constant(Tensor({1, H, W}, mask_flat.data));
    Value in = concat({chw, mplane}, 0);
    return sac.intra_out.fwd(sac.intra_cbam.fwd(sac.intra_in.fwd(in)));
  };
  // empty-slot feature: the same network applied to an all-zero entry,
  // computed once and shared by every unoccupied slot
  Value padding_feat = sac.intra_out.fwd(
      sac.intra_cbam.fwd(sac.intra_in.fwd(constant(Tensor::zeros({sac.channels + 1, H, W})))));

  std::vector<Value> inst_feats;
  for (const SacEntry& e : inst) inst_feats.push_back(intra(e.shading, e.mask));
  Value bg_feat = intra(bg.shading, bg.mask);
  Value la_feat;
  if (la) la_feat = intra(la->shading, la->mask);

  std::vector<int> order(static_cast<size_t>(sac.max_num), -1);
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  if (shuffle_rng) shuffle_rng->shuffle(order);

  Value F = pad_shading_channels(inst_feats, padding_feat, bg_feat, la ? &la_feat : nullptr,
                                 sac.max_num, order);
  Value logits = sac.logit_head.fwd(sac.inter_cbam.fwd(F));

  Tensor slot_mask({sac.n_slots, H, W});
  auto ban = [&](int s) {
    for (int i = 0; i < HW; ++i) slot_mask.data[static_cast<size_t>(s) * HW + i] = kNegInf;
  };
  for (int s = 0; s < sac.max_num; ++s)
    if (order[static_cast<size_t>(s)] < 0) ban(s);
  if (!la) ban(sac.max_num + 1);

  Value wts = softmax(logits, 0, &slot_mask);

  std::vector<Value> parts;
  for (int s = 0; s < sac.max_num; ++s) {
    const int idx = order[static_cast<size_t>(s)];
    if (idx < 0) continue;
    Value wf = reshape(slice(wts, 0, s, 1), {HW});
    parts.push_back(mul_axis0(inst[static_cast<size_t>(idx)].shading, wf));
  }
  parts.push_back(mul_axis0(bg.shading, reshape(slice(wts, 0, sac.max_num, 1), {HW})));
  if (la)
    parts.push_back(mul_axis0(la->shading, reshape(slice(wts, 0, sac.max_num + 1, 1), {HW})));

  SacOut out;
  out.combined = add_many(parts);
  out.weights = wts;
  out.slot_order = order;
  return out;
}

Value migc_residual(const CrossAttnSite& site, const MigcSite& ms, const PositionMlp& pos_mlp,
                    const Value& rows, const Value& token_table, const LayoutCtx& lay,
                    const std::vector<int>& global_tokens, const MigcFlags& flags,
                    AttnRecord* rec) {
  const int H = lay.H, W = lay.W;
  Value Q = site.q_proj(rows);

  std::vector<SacEntry> entries;
  for (size_t i = 0; i < lay.boxes.size(); ++i) {
    Value desc = embedding(token_table, lay.desc_tokens[i]);
    Value K = site.k_proj(desc);
    Value V = site.v_proj(desc);
    Value mean_attn;
    Value rf = cross_attention_shading(Q, K, V, site.heads, lay.masks_flat[i],
                                       rec ? &mean_attn : nullptr);
    if (rec) rec->maps.push_back(mean_attn);
    Value rs = rf;
    if (!flags.ablate_ea) {
      Value pos = pos_mlp.fwd(lay.boxes[i]);
      Value grounded = make_grounded_tokens(desc, pos);
      rs = add(rf, enhancement_attention(ms.ea, rows, grounded, lay.masks_flat[i]));
    }
    entries.push_back({rs, lay.masks_flat[i]});
  }

  Value gdesc = embedding(token_table, global_tokens);
  Value rbg = cross_attention_shading(Q, site.k_proj(gdesc), site.v_proj(gdesc), site.heads,
                                      lay.bg_mask_flat);
  SacEntry bg{rbg, lay.bg_mask_flat};

  std::optional<SacEntry> laEnt;
  if (!flags.ablate_la) {
    Value rla = layout_attention(ms.la, rows, lay.la_mask);
    laEnt = SacEntry{rla, Tensor::full({H * W}, 1.0)};
  }

  Value combined;
  if (flags.ablate_sac) {
    std::vector<Value> parts;
    for (const SacEntry& e : entries) parts.push_back(e.shading);
    parts.push_back(bg.shading);
    if (laEnt) parts.push_back(laEnt->shading);
    combined = mul_scalar(add_many(parts), 1.0 / static_cast<double>(parts.size()));
  } else {
    SacOut so = sac_aggregate(ms.sac, entries, bg, laEnt ? &*laEnt : nullptr, H, W,
                              flags.shuffle_rng);
    combined = so.combined;
  }
  return ms.sac.out_proj.fwd(from_rows(combined, H, W));
}

Value inhibition_loss(const std::vector<Value>& attn_maps, const Tensor& bg_mask_flat) {
  const double n_bg = bg_mask_flat.sum();
  if (attn_maps.empty() || n_bg == 0.0) return constant(Tensor::scalar(0.0));
  Value bg = constant(bg_mask_flat);
  std::vector<Value> terms;
  for (const Value& map : attn_maps) {
    Value mean = mul_scalar(sum_all(mul(map, bg)), 1.0 / n_bg);
    Value mean_vec = bcast_from_scalar(mean, bg_mask_flat.shape);
    Value dev = abs_v(sub(map, mean_vec));
    terms.push_back(sum_all(mul(dev, bg)));
  }
  return terms.size() == 1 ? terms[0] : add_many(terms);
}

}  // namespace migc
