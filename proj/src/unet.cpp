#include "migc/unet.hpp"

#include <cmath>

namespace migc {

void UNetConfig::validate() const {
  auto div = [](int a, int b) { return b > 0 && a % b == 0; };
  if (img_ch < 1 || res < 8 || res % 4 != 0)
    throw ConfigError("model resolution must be a multiple of 4 and at least 8");
  for (int c : {base, mid, deep}) {
    if (!div(c, heads)) throw ConfigError("heads must divide every channel count");
    if (!div(c, gn_groups)) throw ConfigError("gn_groups must divide every channel count");
  }
  if (d_txt % heads != 0) throw ConfigError("heads must divide d_txt");
  if (vocab < 2) throw ConfigError("vocab needs at least one real and one null token");
  if (max_num < 1) throw ConfigError("max_num must be positive");
}

// ---------------------------------------------------------------------------
// timestep embedding
// ---------------------------------------------------------------------------

TimeEmbed::TimeEmbed(int dim_, Rng& rng) : dim(dim_) {
  l1 = Linear(dim, dim, rng);
  l2 = Linear(dim, dim, rng);
}

Value TimeEmbed::fwd(int t) const {
  const int half = dim / 2;
  Tensor s({1, dim});
  for (int j = 0; j < half; ++j) {
    double freq = std::exp(-std::log(10000.0) * j / half);
    s(0, j) = std::sin(t * freq);
    s(0, j + half) = std::cos(t * freq);
  }
  return l2.fwd(silu(l1.fwd(constant(s))));
}

void TimeEmbed::collect(ParamRegistry& r, const std::string& prefix) const {
  l1.collect(r, prefix + ".l1");
  l2.collect(r, prefix + ".l2");
}

// ---------------------------------------------------------------------------
// residual block
// ---------------------------------------------------------------------------

ResBlock::ResBlock(int cin, int cout, int groups, int t_dim, Rng& rng) {
  n1 = GroupNormLayer(cin, groups);
  c1 = Conv2dLayer(cin, cout, 3, 1, 1, rng);
  tproj = Linear(t_dim, cout, rng);
  n2 = GroupNormLayer(cout, groups);
  c2 = Conv2dLayer(cout, cout, 3, 1, 1, rng);
  reproject = cin != cout;
  if (reproject) skip = Conv2dLayer(cin, cout, 1, 1, 0, rng);
}

Value ResBlock::fwd(const Value& x, const Value& te) const {
  Value h = c1.fwd(silu(n1.fwd(x)));
  const int cout = h->val.shape[0];
  h = add_vec_axis0(h, reshape(tproj.fwd(te), {cout}));
  h = c2.fwd(silu(n2.fwd(h)));
  return add(h, reproject ? skip.fwd(x) : x);
}

void ResBlock::collect(ParamRegistry& r, const std::string& prefix) const {
  n1.collect(r, prefix + ".n1");
  c1.collect(r, prefix + ".c1");
  tproj.collect(r, prefix + ".tproj");
  n2.collect(r, prefix + ".n2");
  c2.collect(r, prefix + ".c2");
  if (reproject) skip.collect(r, prefix + ".skip");
}

// ---------------------------------------------------------------------------
// request geometry
// ---------------------------------------------------------------------------

MigcCtx make_migc_ctx(const std::vector<Box>& boxes,
                      const std::vector<std::vector<int>>& desc_tokens, const UNetConfig& cfg,
                      const MigcFlags& flags) {
  if (boxes.size() != desc_tokens.size())
    throw ConfigError("instance boxes and descriptions must pair up");
  if (static_cast<int>(boxes.size()) > cfg.max_num)
    throw ConfigError("instance count " + std::to_string(boxes.size()) +
                      " exceeds the aggregation slot capacity max_num=" +
                      std::to_string(cfg.max_num));
  MigcCtx ctx;
  ctx.n_real = static_cast<int>(boxes.size());
  ctx.flags = flags;
  // pad with null instances: sentinel box (empty mask) + null description
  std::vector<Box> b = boxes;
  std::vector<std::vector<int>> d = desc_tokens;
  while (static_cast<int>(b.size()) < cfg.max_num) {
    b.push_back(Box{});
    d.push_back({cfg.null_id(), cfg.null_id()});
  }
  ctx.l16 = make_layout_ctx(b, d, cfg.res / 2, cfg.res / 2);
  ctx.l8 = make_layout_ctx(b, d, cfg.res / 4, cfg.res / 4);
  return ctx;
}

// ---------------------------------------------------------------------------
// UNet
// ---------------------------------------------------------------------------

UNet::UNet(const UNetConfig& c, Rng& rng) : cfg(c) {
  cfg.validate();
  token_table = param(uniform_init({cfg.vocab, cfg.d_txt}, 0.5, rng));
  temb = TimeEmbed(cfg.t_dim, rng);

  stem = Conv2dLayer(cfg.img_ch, cfg.base, 3, 1, 1, rng);
  rb32e = ResBlock(cfg.base, cfg.base, cfg.gn_groups, cfg.t_dim, rng);
  ca32e = CrossAttnSite(cfg.base, cfg.d_txt, cfg.gn_groups, cfg.heads, rng);
  down16 = Conv2dLayer(cfg.base, cfg.mid, 3, 2, 1, rng);
  rb16e = ResBlock(cfg.mid, cfg.mid, cfg.gn_groups, cfg.t_dim, rng);
  ca16e = CrossAttnSite(cfg.mid, cfg.d_txt, cfg.gn_groups, cfg.heads, rng);
  down8 = Conv2dLayer(cfg.mid, cfg.deep, 3, 2, 1, rng);
  rb8a = ResBlock(cfg.deep, cfg.deep, cfg.gn_groups, cfg.t_dim, rng);
  ca8 = CrossAttnSite(cfg.deep, cfg.d_txt, cfg.gn_groups, cfg.heads, rng);
  rb8b = ResBlock(cfg.deep, cfg.deep, cfg.gn_groups, cfg.t_dim, rng);
  up16c = Conv2dLayer(cfg.deep, cfg.mid, 3, 1, 1, rng);
  rb16d = ResBlock(cfg.mid * 2, cfg.mid, cfg.gn_groups, cfg.t_dim, rng);
  ca16d = CrossAttnSite(cfg.mid, cfg.d_txt, cfg.gn_groups, cfg.heads, rng);
  up32c = Conv2dLayer(cfg.mid, cfg.base, 3, 1, 1, rng);
  rb32d = ResBlock(cfg.base * 2, cfg.base, cfg.gn_groups, cfg.t_dim, rng);
  ca32d = CrossAttnSite(cfg.base, cfg.d_txt, cfg.gn_groups, cfg.heads, rng);
  onorm = GroupNormLayer(cfg.base, cfg.gn_groups);
  oconv = Conv2dLayer(cfg.base, cfg.img_ch, 3, 1, 1, rng, /*zero_init=*/true);

  migc8 = MigcSite(cfg.deep, cfg.d_txt, cfg.heads, cfg.max_num, cfg.sac_hidden, cfg.spatial_k,
                   rng);
  migc16 = MigcSite(cfg.mid, cfg.d_txt, cfg.heads, cfg.max_num, cfg.sac_hidden, cfg.spatial_k,
                    rng);
  pos_mlp = PositionMlp(8, 2 * cfg.d_txt, cfg.d_txt, rng);
}

void UNet::collect_backbone(ParamRegistry& r) const {
  r.add("bb.token_table", token_table);
  temb.collect(r, "bb.temb");
  stem.collect(r, "bb.stem");
  rb32e.collect(r, "bb.rb32e");
  ca32e.collect(r, "bb.ca32e");
  down16.collect(r, "bb.down16");
  rb16e.collect(r, "bb.rb16e");
  ca16e.collect(r, "bb.ca16e");
  down8.collect(r, "bb.down8");
  rb8a.collect(r, "bb.rb8a");
  ca8.collect(r, "bb.ca8");
  rb8b.collect(r, "bb.rb8b");
  up16c.collect(r, "bb.up16c");
  rb16d.collect(r, "bb.rb16d");
  ca16d.collect(r, "bb.ca16d");
  up32c.collect(r, "bb.up32c");
  rb32d.collect(r, "bb.rb32d");
  ca32d.collect(r, "bb.ca32d");
  onorm.collect(r, "bb.onorm");
  oconv.collect(r, "bb.oconv");
}

void UNet::collect_migc(ParamRegistry& r) const {
  migc8.collect(r, "migc.s8");
  migc16.collect(r, "migc.s16");
  pos_mlp.collect(r, "migc.pos");
}

uint64_t UNet::backbone_hash() const {
  ParamRegistry r;
  collect_backbone(r);
  return r.content_hash();
}

namespace {

// x + Wo(attn(norm(x), ctx)) at a plain site.
Value attn_plain(const CrossAttnSite& s, const Value& x, const Value& ctx) {
  const int H = x->val.shape[1], W = x->val.shape[2];
  Value rows = s.norm_rows(x);
  return add(x, from_rows(s.plain_residual_rows(rows, ctx), H, W));
}

// Same residual plus the instance-control contribution (zero at init).
Value attn_controlled(const CrossAttnSite& s, const MigcSite& ms, const PositionMlp& pos,
                      const Value& token_table, const Value& x, const Value& ctx,
                      const LayoutCtx& lay, const std::vector<int>& global_tokens,
                      const MigcFlags& flags, AttnRecord* rec) {
  const int H = x->val.shape[1], W = x->val.shape[2];
  Value rows = s.norm_rows(x);
  Value plain = from_rows(s.plain_residual_rows(rows, ctx), H, W);
  Value ctrl = migc_residual(s, ms, pos, rows, token_table, lay, global_tokens, flags, rec);
  return add(add(x, plain), ctrl);
}

}  // namespace

Value UNet::forward(const Value& z, int t, const std::vector<int>& global_tokens,
                    const MigcCtx* migc, AttnRecord* rec) const {
  if (z->val.shape != std::vector<int>{cfg.img_ch, cfg.res, cfg.res})
    throw ConfigError("denoiser input must be [" + std::to_string(cfg.img_ch) + "," +
                      std::to_string(cfg.res) + "," + std::to_string(cfg.res) + "], got " +
                      z->val.shape_str());
  std::vector<int> toks = global_tokens.empty()
                              ? std::vector<int>{cfg.null_id(), cfg.null_id()}
                              : global_tokens;
  Value ctx = embedding(token_table, toks);
  Value te = temb.fwd(t);

  Value h = stem.fwd(z);
  h = rb32e.fwd(h, te);
  h = attn_plain(ca32e, h, ctx);
  Value s32 = h;

  h = down16.fwd(h);
  h = rb16e.fwd(h, te);
  h = attn_plain(ca16e, h, ctx);
  Value s16 = h;

  h = down8.fwd(h);
  h = rb8a.fwd(h, te);
  h = migc ? attn_controlled(ca8, migc8, pos_mlp, token_table, h, ctx, migc->l8, toks,
                             migc->flags, nullptr)
           : attn_plain(ca8, h, ctx);
  h = rb8b.fwd(h, te);

  h = up16c.fwd(upsample2x(h));
  h = rb16d.fwd(concat({h, s16}, 0), te);
  h = migc ? attn_controlled(ca16d, migc16, pos_mlp, token_table, h, ctx, migc->l16, toks,
                             migc->flags, rec)
           : attn_plain(ca16d, h, ctx);

  h = up32c.fwd(upsample2x(h));
  h = rb32d.fwd(concat({h, s32}, 0), te);
  h = attn_plain(ca32d, h, ctx);

  Value out = oconv.fwd(silu(onorm.fwd(h)));
  if (rec && migc) rec->maps.resize(static_cast<size_t>(migc->n_real));
  return out;
}

}  // namespace migc
