#pragma once

#include <vector>

#include "migc/migc_block.hpp"
#include "migc/nn.hpp"

namespace migc {

struct UNetConfig {
  int img_ch = 3;
  int res = 32;       // input resolution (feature levels: res, res/2, res/4)
  int base = 8;       // channels at full resolution
  int mid = 12;       // channels at res/2
  int deep = 16;      // channels at res/4
  int heads = 2;      // attention heads (must divide every channel count)
  int d_txt = 16;     // token embedding width
  int t_dim = 16;     // timestep embedding width
  int gn_groups = 4;  // group-norm groups (must divide every channel count)
  int vocab = 12;     // embedding table rows; last row is the null token
  int max_num = 4;    // instance slot capacity of the aggregation stage
  int sac_hidden = 8;
  int spatial_k = 3;

  int null_id() const { return vocab - 1; }
  void validate() const;  // ConfigError on divisibility/range violations
};

// Sinusoidal timestep features fed through a two-layer MLP.
struct TimeEmbed {
  Linear l1, l2;
  int dim = 0;
  TimeEmbed() = default;
  TimeEmbed(int dim, Rng& rng);
  Value fwd(int t) const;  // [1, dim]
  void collect(ParamRegistry& r, const std::string& prefix) const;
};

// Pre-norm residual conv block with a per-channel timestep bias.
struct ResBlock {
  GroupNormLayer n1, n2;
  Conv2dLayer c1, c2;
  Linear tproj;
  Conv2dLayer skip;  // 1x1 when channel counts differ
  bool reproject = false;
  ResBlock() = default;
  ResBlock(int cin, int cout, int groups, int t_dim, Rng& rng);
  Value fwd(const Value& x, const Value& temb) const;
  void collect(ParamRegistry& r, const std::string& prefix) const;
};

// Per-request geometry for the two controlled sites, instance lists already
// padded to max_num with null descriptions and sentinel boxes.
struct MigcCtx {
  LayoutCtx l16, l8;
  MigcFlags flags;
  int n_real = 0;  // instances before padding (capture and loss use this)
};

// Throws ConfigError when boxes.size() exceeds max_num (slot capacity).
MigcCtx make_migc_ctx(const std::vector<Box>& boxes,
                      const std::vector<std::vector<int>>& desc_tokens, const UNetConfig& cfg,
                      const MigcFlags& flags = {});

// Text-conditioned denoiser over [img_ch, res, res]:
// res -> res/2 -> res/4 with cross-attention at every level and the
// instance-control block at the res/4 and decoder res/2 sites. The decoder
// res/2 site is where per-instance attention maps are recorded.
struct UNet {
  UNetConfig cfg;
  Value token_table;  // [vocab, d_txt]
  TimeEmbed temb;

  Conv2dLayer stem;
  ResBlock rb32e;
  CrossAttnSite ca32e;
  Conv2dLayer down16;  // stride-2
  ResBlock rb16e;
  CrossAttnSite ca16e;
  Conv2dLayer down8;  // stride-2
  ResBlock rb8a;
  CrossAttnSite ca8;
  ResBlock rb8b;
  Conv2dLayer up16c;  // after 2x upsample
  ResBlock rb16d;     // concat(skip) input
  CrossAttnSite ca16d;
  Conv2dLayer up32c;
  ResBlock rb32d;
  CrossAttnSite ca32d;
  GroupNormLayer onorm;
  Conv2dLayer oconv;

  // trainable control parameters (everything above stays frozen once trained)
  MigcSite migc8, migc16;
  PositionMlp pos_mlp;

  UNet() = default;
  UNet(const UNetConfig& c, Rng& rng);

  void collect_backbone(ParamRegistry& r) const;  // prefix "bb."
  void collect_migc(ParamRegistry& r) const;      // prefix "migc."
  uint64_t backbone_hash() const;

  // Noise prediction. migc == nullptr runs the plain conditioned backbone;
  // rec, when given, receives the decoder-site raw attention maps of the
  // first migc->n_real instances.
  Value forward(const Value& z, int t, const std::vector<int>& global_tokens,
                const MigcCtx* migc = nullptr, AttnRecord* rec = nullptr) const;
};

}  // namespace migc
