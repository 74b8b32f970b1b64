#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <unordered_map>
#include <vector>

#include "migc/tensor.hpp"

namespace migc {

class Node;
using Value = std::shared_ptr<Node>;

// Gradients live outside the graph nodes so concurrent backward passes over
// shared parameters never race; a backward pass returns its own store.
class GradStore {
 public:
  // Accumulation slot for v, created zero-filled on first use.
  Tensor& slot(const Value& v);
  const Tensor* find(const Node* n) const;
  void add(const Value& v, const Tensor& delta);
  size_t size() const { return grads_.size(); }
  // Batch-accumulation helpers: fold another pass's gradients in, rescale.
  void accumulate(const GradStore& other);
  void scale(double s);
  void erase(const Node* n);

 private:
  std::unordered_map<const Node*, Tensor> grads_;
};

class Node {
 public:
  Tensor val;
  bool requires_grad = false;
  std::vector<Value> parents;
  // Receives d(root)/d(this) and adds each parent's contribution to the store.
  std::function<void(const Tensor&, GradStore&)> back;
};

// Graph recording can be switched off for inference; ops then produce
// constants regardless of their inputs.
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

Value constant(Tensor t);
Value param(Tensor t);  // leaf with requires_grad = true

// Reverse-mode sweep from a scalar root (numel == 1).
GradStore backward(const Value& root);

// ---- elementwise / scalar ----
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value add_many(const std::vector<Value>& xs);
Value add_scalar(const Value& a, double s);
Value mul_scalar(const Value& a, double s);
Value neg(const Value& a);
Value abs_v(const Value& a);
Value sigmoid(const Value& a);
Value silu(const Value& a);
Value relu(const Value& a);

// ---- linear algebra ----
Value matmul(const Value& a, const Value& b);  // [m,k] x [k,n]
Value transpose2d(const Value& a);             // [m,n] -> [n,m]

// ---- shape ----
Value reshape(const Value& a, std::vector<int> shape);
Value concat(const std::vector<Value>& xs, int axis);
Value slice(const Value& a, int axis, int start, int len);

// [C,H,W] <-> pixels-as-rows [H*W, C]
Value to_rows(const Value& x);
Value from_rows(const Value& r, int H, int W);

// ---- broadcasting ----
Value mul_axis0(const Value& x, const Value& g);   // g: [shape[0]]
Value mul_inner(const Value& x, const Value& g);   // g: shape[1:]
Value add_rowvec(const Value& x, const Value& b);  // x: [R,C], b: [C]
Value add_vec_axis0(const Value& x, const Value& b);  // x: [C,...], b: [C]

// ---- reductions / broadcast ----
Value sum_all(const Value& a);   // -> [1]
Value mean_all(const Value& a);  // -> [1]
Value bcast_from_scalar(const Value& s, std::vector<int> shape);  // s: [1]
Value mean_axis(const Value& a, int axis);
Value max_axis(const Value& a, int axis);

// ---- softmax ----
// Numerically stable softmax along `axis`. `add_mask`, if given, has the
// same shape with entries 0 or -inf and is added to the input first; a slice
// that is entirely -inf yields exact zeros. Non-finite *input* is an error.
Value softmax(const Value& a, int axis, const Tensor* add_mask = nullptr);

// ---- neural-net structured ops ----
Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad);
Value group_norm(const Value& x, const Value& gamma, const Value& beta, int groups,
                 double eps = 1e-5);
Value upsample2x(const Value& x);
Value embedding(const Value& table, const std::vector<int>& idx);

}  // namespace migc
