#pragma once

#include <optional>

#include "migc/fourier.hpp"
#include "migc/geometry.hpp"
#include "migc/nn.hpp"

namespace migc {

// ---------------------------------------------------------------------------
// Instance-layout conditioning at one attention site. The frozen backbone
// projections produce a per-instance "shading" (attention output masked to
// the instance box); trainable pieces sharpen it and a learned controller
// blends all shadings into one residual:
//   - per-instance shading via the site's frozen Q/K/V,
//   - enhancement attention over [description tokens, position token],
//   - background shading from the global prompt on the uncovered region,
//   - layout self-attention restricted to pixels sharing a region,
//   - a shading-aggregation controller producing per-pixel convex weights.
// The final 1x1 output projection starts at zero, so a freshly initialized
// block leaves the backbone's behavior bit-for-bit unchanged.
// ---------------------------------------------------------------------------

// Maps the sinusoidal box code to one context-space token.
struct PositionMlp {
  Linear l1, l2;
  int bands = 8;
  PositionMlp() = default;
  PositionMlp(int bands, int hidden, int d_txt, Rng& rng);
  Value fwd(const Box& b) const;  // [1, d_txt]
  void collect(ParamRegistry& r, const std::string& prefix) const;
};

// Trainable cross-attention from image rows onto grounded instance tokens.
// The output projection is zero-initialized.
struct EnhancementAttention {
  Value Wq, Wk, Wv, Wo;
  int heads = 1;
  EnhancementAttention() = default;
  EnhancementAttention(int channels, int d_txt, int heads, Rng& rng);
  void collect(ParamRegistry& r, const std::string& prefix) const;
};

// Trainable masked self-attention over image rows.
struct LayoutAttentionParams {
  Value Wq, Wk, Wv;
  int heads = 1;
  LayoutAttentionParams() = default;
  LayoutAttentionParams(int channels, int heads, Rng& rng);
  void collect(ParamRegistry& r, const std::string& prefix) const;
};

// Shading aggregation controller. Each entry (shading, mask) is summarized
// to a one-channel feature; features are stacked into a fixed number of
// slots (instances + padding, then background, then the layout entry),
// mixed across slots, and turned into per-pixel softmax weights over the
// occupied slots.
struct Sac {
  Conv2dLayer intra_in;   // (C+1) -> hidden, 1x1
  Cbam intra_cbam;        // hidden channels
  Conv2dLayer intra_out;  // hidden -> 1, 1x1
  Cbam inter_cbam;        // n_slots channels
  Conv2dLayer logit_head; // n_slots -> n_slots, 1x1
  Conv2dLayer out_proj;   // C -> C, 1x1, zero-initialized
  int max_num = 8;
  int n_slots = 10;  // max_num + background + layout entry
  int channels = 0;
  Sac() = default;
  Sac(int channels, int hidden, int max_num, int spatial_k, Rng& rng);
  void collect(ParamRegistry& r, const std::string& prefix) const;
};

// All trainable parameters living at one attention site.
struct MigcSite {
  EnhancementAttention ea;
  LayoutAttentionParams la;
  Sac sac;
  MigcSite() = default;
  MigcSite(int channels, int d_txt, int heads, int max_num, int sac_hidden, int spatial_k,
           Rng& rng);
  void collect(ParamRegistry& r, const std::string& prefix) const;
};

// Precomputed request geometry at one feature resolution (all constants).
struct LayoutCtx {
  int H = 0, W = 0;
  std::vector<Box> boxes;                     // real instances only
  std::vector<std::vector<int>> desc_tokens;  // [attr, obj] ids per instance
  std::vector<Tensor> masks_flat;             // each [HW]
  Tensor bg_mask_flat;                        // [HW]
  Tensor la_mask;                             // [HW, HW] additive
};

// Builds masks and the layout-attention mask for a box list.
LayoutCtx make_layout_ctx(const std::vector<Box>& boxes,
                          const std::vector<std::vector<int>>& desc_tokens, int H, int W);

// Frozen-projection shading: softmax(Q K^T / sqrt(d)) V, rows scaled by the
// region mask. Optionally reports the raw (pre-mask) per-pixel attention
// averaged over description tokens and heads.
Value cross_attention_shading(const Value& Q, const Value& K, const Value& V, int heads,
                              const Tensor& mask_flat, Value* mean_attn_out = nullptr);

// [desc tokens ; position token] -> [L+1, d_txt]
Value make_grounded_tokens(const Value& desc_tokens, const Value& pos_token);

// Residual sharpening of one instance's shading; masked like the shading.
Value enhancement_attention(const EnhancementAttention& ea, const Value& rows,
                            const Value& grounded_tokens, const Tensor& mask_flat);

// Masked self-attention over rows with the layout additive mask.
Value layout_attention(const LayoutAttentionParams& la, const Value& rows,
                       const Tensor& la_mask);

// One aggregation entry: shading rows [HW, C] plus region mask [HW].
struct SacEntry {
  Value shading;
  Tensor mask;
};

// Stacks per-slot scalar features into [n_slots, H, W]:
// slots [0, max_num) hold instance features per slot_order (-1 = padding
// feature), then background, then (optionally) the layout feature.
Value pad_shading_channels(const std::vector<Value>& inst_feats, const Value& padding_feat,
                           const Value& bg_feat, const Value* la_feat, int max_num,
                           const std::vector<int>& slot_order);

struct SacOut {
  Value combined;               // [HW, C] convex combination of entries
  Value weights;                // [n_slots, H, W]; exact zeros on padding slots
  std::vector<int> slot_order;  // slot -> instance index or -1
};

// Per-pixel convex blend of all entries. Training passes a shuffle RNG to
// permute instance/padding slots; background and layout slots stay fixed.
// More instances than max_num is a request error.
SacOut sac_aggregate(const Sac& sac, const std::vector<SacEntry>& inst, const SacEntry& bg,
                     const SacEntry* la, int H, int W, Rng* shuffle_rng = nullptr);

struct MigcFlags {
  bool ablate_ea = false;
  bool ablate_la = false;
  bool ablate_sac = false;  // uniform average instead of learned weights
  Rng* shuffle_rng = nullptr;
};

// Captured per-instance raw attention maps (each [HW]) for the training loss.
struct AttnRecord {
  std::vector<Value> maps;
};

// Full residual of the block at one site: the caller adds it to
// x + plain_residual. rows must be the site's normed pixel rows.
Value migc_residual(const CrossAttnSite& site, const MigcSite& ms, const PositionMlp& pos_mlp,
                    const Value& rows, const Value& token_table, const LayoutCtx& lay,
                    const std::vector<int>& global_tokens, const MigcFlags& flags,
                    AttnRecord* rec = nullptr);

// Sum over instances of total absolute deviation of the attention map from
// its background mean, taken over background pixels. Zero when the layout
// covers the whole frame.
Value inhibition_loss(const std::vector<Value>& attn_maps, const Tensor& bg_mask_flat);

}  // namespace migc
