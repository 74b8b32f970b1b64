#pragma once

#include <string>
#include <vector>

#include "migc/autodiff.hpp"
#include "migc/rng.hpp"

namespace migc {

// Named parameter set. Ordering is stable (insertion order) so optimizer
// walks, checkpoints, and hashes are deterministic.
struct ParamRegistry {
  std::vector<std::pair<std::string, Value>> items;

  void add(const std::string& name, const Value& v);
  std::vector<Value> values() const;
  Value find(const std::string& name) const;  // null if absent
  // FNV-1a over names, shapes and raw values; detects any parameter drift.
  uint64_t content_hash() const;
  void set_requires_grad(bool on);
};

Tensor uniform_init(std::vector<int> shape, double scale, Rng& rng);

struct Linear {
  Value W, b;  // W: [in, out]
  Linear() = default;
  Linear(int in, int out, Rng& rng, bool zero_init = false);
  Value fwd(const Value& x) const { return add_rowvec(matmul(x, W), b); }
  void collect(ParamRegistry& r, const std::string& prefix) const;
};

struct Conv2dLayer {
  Value w, b;
  int stride = 1, pad = 0;
  Conv2dLayer() = default;
  Conv2dLayer(int cin, int cout, int k, int stride, int pad, Rng& rng, bool zero_init = false);
  Value fwd(const Value& x) const { return conv2d(x, w, b, stride, pad); }
  void collect(ParamRegistry& r, const std::string& prefix) const;
};

struct GroupNormLayer {
  Value gamma, beta;
  int groups = 1;
  GroupNormLayer() = default;
  GroupNormLayer(int channels, int groups);
  Value fwd(const Value& x) const { return group_norm(x, gamma, beta, groups); }
  void collect(ParamRegistry& r, const std::string& prefix) const;
};

// Convolutional block attention: channel gate from pooled descriptors through
// a shared bottleneck MLP, then a spatial gate from pooled channel maps.
struct Cbam {
  Linear fc1, fc2;        // C -> C/r -> C, shared by avg and max paths
  Conv2dLayer spatial;    // 2 -> 1, k x k
  int channels = 0;
  Cbam() = default;
  Cbam(int channels, int reduction, int spatial_k, Rng& rng);
  Value fwd(const Value& x) const;
  void collect(ParamRegistry& r, const std::string& prefix) const;
};

// Scaled dot-product attention over row-major token matrices.
// Q [Lq,d], K [Lk,d], V [Lk,dv]; heads must divide d and dv.
// add_mask, if given, is [Lq,Lk] with 0 / -inf entries.
Value attention_rows(const Value& Q, const Value& K, const Value& V, int heads,
                     const Tensor* add_mask = nullptr);

// Same, but also returns each head's post-softmax map ([Lq,Lk] per head).
struct AttentionWithMaps {
  Value out;
  std::vector<Value> maps;
};
AttentionWithMaps attention_rows_with_maps(const Value& Q, const Value& K, const Value& V,
                                           int heads, const Tensor* add_mask = nullptr);

// One cross-attention site of the backbone: pre-norm, shared projections.
// The same Q/K/V projections also feed the per-instance shading paths, so
// they are exposed rather than hidden behind a single fwd().
struct CrossAttnSite {
  GroupNormLayer norm;
  Value Wq, Wk, Wv, Wo;  // [C,C], [ctxt,C], [ctxt,C], [C,C]
  int heads = 1;
  CrossAttnSite() = default;
  CrossAttnSite(int channels, int ctxt, int groups, int heads, Rng& rng);
  Value norm_rows(const Value& x) const { return to_rows(norm.fwd(x)); }
  Value q_proj(const Value& rows) const { return matmul(rows, Wq); }
  Value k_proj(const Value& tokens) const { return matmul(tokens, Wk); }
  Value v_proj(const Value& tokens) const { return matmul(tokens, Wv); }
  // Standard global-prompt residual: Wo(attn(Q(rows), K(ctx), V(ctx))).
  Value plain_residual_rows(const Value& rows, const Value& ctx_tokens) const;
  void collect(ParamRegistry& r, const std::string& prefix) const;
};

struct AdamW {
  double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.01;
  int64_t t = 0;
  void step(const std::vector<Value>& params, const GradStore& grads);

 private:
  std::unordered_map<const Node*, std::pair<Tensor, Tensor>> moments_;
};

}  // namespace migc
