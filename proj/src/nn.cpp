#include "migc/nn.hpp"

#include <cmath>

namespace migc {

void ParamRegistry::add(const std::string& name, const Value& v) {
  for (const auto& [n, _] : items)
    if (n == name) throw NumericError("param registry: duplicate name " + name);
  items.emplace_back(name, v);
}

std::vector<Value> ParamRegistry::values() const {
  std::vector<Value> out;
  out.reserve(items.size());
  for (const auto& [_, v] : items) out.push_back(v);
  return out;
}

Value ParamRegistry::find(const std::string& name) const {
  for (const auto& [n, v] : items)
    if (n == name) return v;
  return nullptr;
}

uint64_t ParamRegistry::content_hash() const {
  uint64_t h = 1469598103934665603ull;
  for (const auto& [n, v] : items) {
    h = fnv1a64(n.data(), n.size(), h);
    for (int e : v->val.shape) {
      int64_t e64 = e;
      h = fnv1a64(&e64, sizeof(e64), h);
    }
    if (!v->val.data.empty())
      h = fnv1a64(v->val.data.data(), v->val.data.size() * sizeof(double), h);
  }
  return h;
}

void ParamRegistry::set_requires_grad(bool on) {
  for (auto& [_, v] : items) v->requires_grad = on;
}

Tensor uniform_init(std::vector<int> shape, double scale, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

Linear::Linear(int in, int out, Rng& rng, bool zero_init) {
  const double s = zero_init ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in));
  W = param(s == 0.0 ? Tensor::zeros({in, out}) : uniform_init({in, out}, s, rng));
  b = param(Tensor::zeros({out}));
}

void Linear::collect(ParamRegistry& r, const std::string& prefix) const {
  r.add(prefix + ".W", W);
  r.add(prefix + ".b", b);
}

Conv2dLayer::Conv2dLayer(int cin, int cout, int k, int stride_, int pad_, Rng& rng, bool zero_init)
    : stride(stride_), pad(pad_) {
  const double s = zero_init ? 0.0 : 1.0 / std::sqrt(static_cast<double>(cin) * k * k);
  w = param(s == 0.0 ? Tensor::zeros({cout, cin, k, k}) : uniform_init({cout, cin, k, k}, s, rng));
  b = param(Tensor::zeros({cout}));
}

void Conv2dLayer::collect(ParamRegistry& r, const std::string& prefix) const {
  r.add(prefix + ".w", w);
  r.add(prefix + ".b", b);
}

GroupNormLayer::GroupNormLayer(int channels, int groups_) : groups(groups_) {
  gamma = param(Tensor::full({channels}, 1.0));
  beta = param(Tensor::zeros({channels}));
}

void GroupNormLayer::collect(ParamRegistry& r, const std::string& prefix) const {
  r.add(prefix + ".gamma", gamma);
  r.add(prefix + ".beta", beta);
}

Cbam::Cbam(int channels_, int reduction, int spatial_k, Rng& rng) : channels(channels_) {
  int hidden = std::max(1, channels_ / reduction);
  fc1 = Linear(channels_, hidden, rng);
  fc2 = Linear(hidden, channels_, rng);
  spatial = Conv2dLayer(2, 1, spatial_k, 1, spatial_k / 2, rng);
}

Value Cbam::fwd(const Value& x) const {
  const int C = x->val.shape[0], H = x->val.shape[1], W = x->val.shape[2];
  // channel gate
  Value flat = reshape(x, {C, H * W});
  Value avg = reshape(mean_axis(flat, 1), {1, C});
  Value mx = reshape(max_axis(flat, 1), {1, C});
  Value gate = sigmoid(add(fc2.fwd(relu(fc1.fwd(avg))), fc2.fwd(relu(fc1.fwd(mx)))));
  Value x1 = mul_axis0(x, reshape(gate, {C}));
  // spatial gate
  Value savg = reshape(mean_axis(x1, 0), {1, H, W});
  Value smax = reshape(max_axis(x1, 0), {1, H, W});
  Value sgate = sigmoid(spatial.fwd(concat({savg, smax}, 0)));
  return mul_inner(x1, reshape(sgate, {H, W}));
}

void Cbam::collect(ParamRegistry& r, const std::string& prefix) const {
  fc1.collect(r, prefix + ".fc1");
  fc2.collect(r, prefix + ".fc2");
  spatial.collect(r, prefix + ".spatial");
}

namespace {
AttentionWithMaps attention_impl(const Value& Q, const Value& K, const Value& V, int heads,
                                 const Tensor* add_mask, bool want_maps) {
  const int d = Q->val.shape[1], dv = V->val.shape[1];
  if (heads < 1 || d % heads != 0 || dv % heads != 0)
    throw NumericError("attention: heads must divide feature dims");
  const int dh = d / heads, dvh = dv / heads;
  AttentionWithMaps r;
  std::vector<Value> outs;
  for (int h = 0; h < heads; ++h) {
    Value Qh = heads == 1 ? Q : slice(Q, 1, h * dh, dh);
    Value Kh = heads == 1 ? K : slice(K, 1, h * dh, dh);
    Value Vh = heads == 1 ? V : slice(V, 1, h * dvh, dvh);
    Value logits = mul_scalar(matmul(Qh, transpose2d(Kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    Value A = softmax(logits, 1, add_mask);
    if (want_maps) r.maps.push_back(A);
    outs.push_back(matmul(A, Vh));
  }
  r.out = heads == 1 ? outs[0] : concat(outs, 1);
  return r;
}
}  // namespace

Value attention_rows(const Value& Q, const Value& K, const Value& V, int heads,
                     const Tensor* add_mask) {
  return attention_impl(Q, K, V, heads, add_mask, false).out;
}

AttentionWithMaps attention_rows_with_maps(const Value& Q, const Value& K, const Value& V,
                                           int heads, const Tensor* add_mask) {
  return attention_impl(Q, K, V, heads, add_mask, true);
}

CrossAttnSite::CrossAttnSite(int channels, int ctxt, int groups, int heads_, Rng& rng)
    : norm(channels, groups), heads(heads_) {
  const double si = 1.0 / std::sqrt(static_cast<double>(channels));
  const double st = 1.0 / std::sqrt(static_cast<double>(ctxt));
  Wq = param(uniform_init({channels, channels}, si, rng));
  Wk = param(uniform_init({ctxt, channels}, st, rng));
  Wv = param(uniform_init({ctxt, channels}, st, rng));
  Wo = param(uniform_init({channels, channels}, si, rng));
}

Value CrossAttnSite::plain_residual_rows(const Value& rows, const Value& ctx_tokens) const {
  Value q = q_proj(rows);
  Value k = k_proj(ctx_tokens);
  Value v = v_proj(ctx_tokens);
  return matmul(attention_rows(q, k, v, heads), Wo);
}

void CrossAttnSite::collect(ParamRegistry& r, const std::string& prefix) const {
  norm.collect(r, prefix + ".norm");
  r.add(prefix + ".Wq", Wq);
  r.add(prefix + ".Wk", Wk);
  r.add(prefix + ".Wv", Wv);
  r.add(prefix + ".Wo", Wo);
}

void AdamW::step(const std::vector<Value>& params, const GradStore& grads) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (const auto& p : params) {
    auto it = moments_.find(p.get());
    if (it == moments_.end())
      it = moments_
               .emplace(p.get(), std::make_pair(Tensor::zeros(p->val.shape),
                                                Tensor::zeros(p->val.shape)))
               .first;
    Tensor& m = it->second.first;
    Tensor& v = it->second.second;
    const Tensor* g = grads.find(p.get());
    for (size_t i = 0; i < p->val.data.size(); ++i) {
      const double gi = g ? g->data[i] : 0.0;
      m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
      v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p->val.data[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p->val.data[i]);
    }
  }
}

}  // namespace migc
