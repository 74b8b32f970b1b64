#include "migc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace migc {

// ---------------------------------------------------------------------------
// grad store / graph plumbing
// ---------------------------------------------------------------------------

Tensor& GradStore::slot(const Value& v) {
  auto it = grads_.find(v.get());
  if (it == grads_.end()) it = grads_.emplace(v.get(), Tensor::zeros(v->val.shape)).first;
  return it->second;
}

const Tensor* GradStore::find(const Node* n) const {
  auto it = grads_.find(n);
  return it == grads_.end() ? nullptr : &it->second;
}

void GradStore::add(const Value& v, const Tensor& delta) {
  Tensor& s = slot(v);
  for (size_t i = 0; i < s.data.size(); ++i) s.data[i] += delta.data[i];
}

void GradStore::accumulate(const GradStore& other) {
  for (const auto& [node, g] : other.grads_) {
    auto it = grads_.find(node);
    if (it == grads_.end()) {
      grads_.emplace(node, g);
    } else {
      if (it->second.data.size() != g.data.size())
        throw NumericError("gradient accumulation across passes hit a shape mismatch");
      for (size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += g.data[i];
    }
  }
}

void GradStore::erase(const Node* n) { grads_.erase(n); }

void GradStore::scale(double s) {
  for (auto& [node, g] : grads_)
    for (double& v : g.data) v *= s;
}

namespace {
thread_local bool g_grad_enabled = true;

Value make_node(Tensor out, std::vector<Value> parents,
                std::function<void(const Tensor&, GradStore&)> back) {
  auto n = std::make_shared<Node>();
  n->val = std::move(out);
  bool need = false;
  if (g_grad_enabled)
    for (const auto& p : parents)
      if (p->requires_grad) need = true;
  if (need) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->back = std::move(back);
  }
  return n;
}

void check_same_shape(const Value& a, const Value& b, const char* op) {
  if (!a->val.same_shape(b->val))
    throw NumericError(std::string(op) + ": shape mismatch " + a->val.shape_str() + " vs " +
                       b->val.shape_str());
}

struct AxisSplit {
  int64_t outer, n, inner;
};
AxisSplit split_axis(const std::vector<int>& shape, int axis) {
  if (axis < 0 || axis >= static_cast<int>(shape.size()))
    throw NumericError("axis out of range");
  AxisSplit s{1, shape[axis], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  for (size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Value constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  return n;
}

Value param(Tensor t) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  n->requires_grad = true;
  return n;
}

GradStore backward(const Value& root) {
  if (root->val.numel() != 1) throw NumericError("backward: root must be scalar");
  GradStore store;
  if (!root->requires_grad)
    throw NumericError("backward: root does not depend on any parameter");

  // Iterative post-order DFS over the requires_grad subgraph.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  store.slot(root) = Tensor::full({1}, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->back) continue;
    const Tensor* g = store.find(n);
    if (!g) continue;
    n->back(*g, store);
  }
  // Keep only leaf gradients. Interior nodes die with the graph and their
  // addresses get recycled, so carrying their entries across passes (e.g.
  // through batch accumulation) would alias unrelated tensors.
  for (Node* n : order)
    if (!n->parents.empty()) store.erase(n);
  return store;
}

// ---------------------------------------------------------------------------
// elementwise / scalar
// ---------------------------------------------------------------------------

Value add(const Value& a, const Value& b) {
  check_same_shape(a, b, "add");
  Tensor out = a->val;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->val.data[i];
  return make_node(std::move(out), {a, b}, [a, b](const Tensor& g, GradStore& s) {
    if (a->requires_grad) s.add(a, g);
    if (b->requires_grad) s.add(b, g);
  });
}

Value sub(const Value& a, const Value& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->val;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->val.data[i];
  return make_node(std::move(out), {a, b}, [a, b](const Tensor& g, GradStore& s) {
    if (a->requires_grad) s.add(a, g);
    if (b->requires_grad) {
      Tensor& gb = s.slot(b);
      for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= g.data[i];
    }
  });
}

Value mul(const Value& a, const Value& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a->val;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->val.data[i];
  return make_node(std::move(out), {a, b}, [a, b](const Tensor& g, GradStore& s) {
    if (a->requires_grad) {
      Tensor& ga = s.slot(a);
      for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g.data[i] * b->val.data[i];
    }
    if (b->requires_grad) {
      Tensor& gb = s.slot(b);
      for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += g.data[i] * a->val.data[i];
    }
  });
}

Value add_many(const std::vector<Value>& xs) {
  if (xs.empty()) throw NumericError("add_many: empty");
  Tensor out = xs[0]->val;
  for (size_t k = 1; k < xs.size(); ++k) {
    check_same_shape(xs[0], xs[k], "add_many");
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += xs[k]->val.data[i];
  }
  return make_node(std::move(out), xs, [xs](const Tensor& g, GradStore& s) {
    for (const auto& x : xs)
      if (x->requires_grad) s.add(x, g);
  });
}

Value add_scalar(const Value& a, double c) {
  Tensor out = a->val;
  for (auto& v : out.data) v += c;
  return make_node(std::move(out), {a}, [a](const Tensor& g, GradStore& s) {
    if (a->requires_grad) s.add(a, g);
  });
}

Value mul_scalar(const Value& a, double c) {
  Tensor out = a->val;
  for (auto& v : out.data) v *= c;
  return make_node(std::move(out), {a}, [a, c](const Tensor& g, GradStore& s) {
    if (!a->requires_grad) return;
    Tensor& ga = s.slot(a);
    for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g.data[i] * c;
  });
}

Value neg(const Value& a) { return mul_scalar(a, -1.0); }

Value abs_v(const Value& a) {
  Tensor out = a->val;
  for (auto& v : out.data) v = std::fabs(v);
  return make_node(std::move(out), {a}, [a](const Tensor& g, GradStore& s) {
    if (!a->requires_grad) return;
    Tensor& ga = s.slot(a);
    for (size_t i = 0; i < ga.data.size(); ++i) {
      double x = a->val.data[i];
      ga.data[i] += g.data[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
    }
  });
}

Value sigmoid(const Value& a) {
  Tensor out = a->val;
  for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  Tensor y = out;
  return make_node(std::move(out), {a}, [a, y](const Tensor& g, GradStore& s) {
    if (!a->requires_grad) return;
    Tensor& ga = s.slot(a);
    for (size_t i = 0; i < ga.data.size(); ++i)
      ga.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
  });
}

Value silu(const Value& a) {
  Tensor out = a->val;
  for (auto& v : out.data) v = v / (1.0 + std::exp(-v));
  return make_node(std::move(out), {a}, [a](const Tensor& g, GradStore& s) {
    if (!a->requires_grad) return;
    Tensor& ga = s.slot(a);
    for (size_t i = 0; i < ga.data.size(); ++i) {
      double x = a->val.data[i];
      double sg = 1.0 / (1.0 + std::exp(-x));
      ga.data[i] += g.data[i] * sg * (1.0 + x * (1.0 - sg));
    }
  });
}

Value relu(const Value& a) {
  Tensor out = a->val;
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  return make_node(std::move(out), {a}, [a](const Tensor& g, GradStore& s) {
    if (!a->requires_grad) return;
    Tensor& ga = s.slot(a);
    for (size_t i = 0; i < ga.data.size(); ++i)
      if (a->val.data[i] > 0.0) ga.data[i] += g.data[i];
  });
}

// ---------------------------------------------------------------------------
// matmul kernels: nn (plain), nt (B transposed), tn (A transposed).
// All accumulate into C.
// ---------------------------------------------------------------------------

namespace {
void mm_nn(Tensor& C, const Tensor& A, const Tensor& B) {
  const int m = A.shape[0], k = A.shape[1], n = B.shape[1];
  for (int i = 0; i < m; ++i) {
    double* c = &C.data[static_cast<size_t>(i) * n];
    const double* arow = &A.data[static_cast<size_t>(i) * k];
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = &B.data[static_cast<size_t>(kk) * n];
      for (int j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
}

// C[i,j] += dot(A.row(i), B.row(j));  A: [m,k], B: [n,k]
void mm_nt(Tensor& C, const Tensor& A, const Tensor& B) {
  const int m = A.shape[0], k = A.shape[1], n = B.shape[0];
  for (int i = 0; i < m; ++i) {
    const double* arow = &A.data[static_cast<size_t>(i) * k];
    double* c = &C.data[static_cast<size_t>(i) * n];
    for (int j = 0; j < n; ++j) {
      const double* brow = &B.data[static_cast<size_t>(j) * k];
      double acc = 0.0;
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      c[j] += acc;
    }
  }
}

// C[i,j] += sum_k A[k,i] * B[k,j];  A: [k,m], B: [k,n]
void mm_tn(Tensor& C, const Tensor& A, const Tensor& B) {
  const int kdim = A.shape[0], m = A.shape[1], n = B.shape[1];
  for (int kk = 0; kk < kdim; ++kk) {
    const double* arow = &A.data[static_cast<size_t>(kk) * m];
    const double* brow = &B.data[static_cast<size_t>(kk) * n];
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      double* c = &C.data[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
}
}  // namespace

Value matmul(const Value& a, const Value& b) {
  if (a->val.ndim() != 2 || b->val.ndim() != 2 || a->val.shape[1] != b->val.shape[0])
    throw NumericError("matmul: bad shapes " + a->val.shape_str() + " x " + b->val.shape_str());
  Tensor out = Tensor::zeros({a->val.shape[0], b->val.shape[1]});
  mm_nn(out, a->val, b->val);
  return make_node(std::move(out), {a, b}, [a, b](const Tensor& g, GradStore& s) {
    if (a->requires_grad) mm_nt(s.slot(a), g, b->val);
    if (b->requires_grad) mm_tn(s.slot(b), a->val, g);
  });
}

Value transpose2d(const Value& a) {
  if (a->val.ndim() != 2) throw NumericError("transpose2d: need 2-d tensor");
  const int m = a->val.shape[0], n = a->val.shape[1];
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out(j, i) = a->val(i, j);
  return make_node(std::move(out), {a}, [a, m, n](const Tensor& g, GradStore& s) {
    if (!a->requires_grad) return;
    Tensor& ga = s.slot(a);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga(i, j) += g(j, i);
  });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Value reshape(const Value& a, std::vector<int> shape) {
  if (Tensor::numel_of(shape) != a->val.numel())
    throw NumericError("reshape: element count mismatch");
  Tensor out(std::move(shape), a->val.data);
  std::vector<int> old_shape = a->val.shape;
  return make_node(std::move(out), {a}, [a, old_shape](const Tensor& g, GradStore& s) {
    if (!a->requires_grad) return;
    Tensor& ga = s.slot(a);
    for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g.data[i];
  });
}

Value concat(const std::vector<Value>& xs, int axis) {
  if (xs.empty()) throw NumericError("concat: empty");
  std::vector<int> shape = xs[0]->val.shape;
  int total = 0;
  for (const auto& x : xs) {
    if (x->val.ndim() != static_cast<int>(shape.size()))
      throw NumericError("concat: rank mismatch");
    for (int d = 0; d < x->val.ndim(); ++d)
      if (d != axis && x->val.shape[d] != shape[d])
        throw NumericError("concat: extent mismatch off-axis");
    total += x->val.shape[axis];
  }
  shape[axis] = total;
  Tensor out(shape);
  AxisSplit sp = split_axis(shape, axis);
  int64_t off = 0;
  for (const auto& x : xs) {
    const int64_t nx = x->val.shape[axis];
    for (int64_t o = 0; o < sp.outer; ++o)
      std::copy_n(&x->val.data[o * nx * sp.inner], nx * sp.inner,
                  &out.data[(o * sp.n + off) * sp.inner]);
    off += nx;
  }
  return make_node(std::move(out), xs, [xs, sp](const Tensor& g, GradStore& s) {
    int64_t off = 0;
    for (const auto& x : xs) {
      const int64_t len = x->val.numel() / (sp.outer * sp.inner);
      if (x->requires_grad) {
        Tensor& gx = s.slot(x);
        for (int64_t o = 0; o < sp.outer; ++o) {
          const double* src = &g.data[(o * sp.n + off) * sp.inner];
          double* dst = &gx.data[o * len * sp.inner];
          for (int64_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
        }
      }
      off += len;
    }
  });
}

Value slice(const Value& a, int axis, int start, int len) {
  AxisSplit sp = split_axis(a->val.shape, axis);
  if (start < 0 || len < 0 || start + len > sp.n) throw NumericError("slice: out of range");
  std::vector<int> shape = a->val.shape;
  shape[axis] = len;
  Tensor out(shape);
  for (int64_t o = 0; o < sp.outer; ++o)
    std::copy_n(&a->val.data[(o * sp.n + start) * sp.inner], static_cast<int64_t>(len) * sp.inner,
                &out.data[o * len * sp.inner]);
  return make_node(std::move(out), {a}, [a, sp, start, len](const Tensor& g, GradStore& s) {
    if (!a->requires_grad) return;
    Tensor& ga = s.slot(a);
    for (int64_t o = 0; o < sp.outer; ++o) {
      const double* src = &g.data[o * len * sp.inner];
      double* dst = &ga.data[(o * sp.n + start) * sp.inner];
      for (int64_t i = 0; i < static_cast<int64_t>(len) * sp.inner; ++i) dst[i] += src[i];
    }
  });
}

Value to_rows(const Value& x) {
  if (x->val.ndim() != 3) throw NumericError("to_rows: need [C,H,W]");
  const int C = x->val.shape[0], HW = x->val.shape[1] * x->val.shape[2];
  Tensor out({HW, C});
  for (int c = 0; c < C; ++c)
    for (int p = 0; p < HW; ++p) out(p, c) = x->val.data[static_cast<size_t>(c) * HW + p];
  return make_node(std::move(out), {x}, [x, C, HW](const Tensor& g, GradStore& s) {
    if (!x->requires_grad) return;
    Tensor& gx = s.slot(x);
    for (int c = 0; c < C; ++c)
      for (int p = 0; p < HW; ++p) gx.data[static_cast<size_t>(c) * HW + p] += g(p, c);
  });
}

Value from_rows(const Value& r, int H, int W) {
  if (r->val.ndim() != 2 || r->val.shape[0] != H * W)
    throw NumericError("from_rows: need [H*W, C]");
  const int C = r->val.shape[1], HW = H * W;
  Tensor out({C, H, W});
  for (int p = 0; p < HW; ++p)
    for (int c = 0; c < C; ++c) out.data[static_cast<size_t>(c) * HW + p] = r->val(p, c);
  return make_node(std::move(out), {r}, [r, C, HW](const Tensor& g, GradStore& s) {
    if (!r->requires_grad) return;
    Tensor& gr = s.slot(r);
    for (int p = 0; p < HW; ++p)
      for (int c = 0; c < C; ++c) gr(p, c) += g.data[static_cast<size_t>(c) * HW + p];
  });
}

// ---------------------------------------------------------------------------
// broadcasting
// ---------------------------------------------------------------------------

Value mul_axis0(const Value& x, const Value& g0) {
  const int64_t K = x->val.shape[0];
  if (g0->val.numel() != K) throw NumericError("mul_axis0: gate length mismatch");
  const int64_t inner = x->val.numel() / K;
  Tensor out = x->val;
  for (int64_t k = 0; k < K; ++k) {
    const double gv = g0->val.data[static_cast<size_t>(k)];
    double* row = &out.data[k * inner];
    for (int64_t i = 0; i < inner; ++i) row[i] *= gv;
  }
  return make_node(std::move(out), {x, g0}, [x, g0, K, inner](const Tensor& g, GradStore& s) {
    if (x->requires_grad) {
      Tensor& gx = s.slot(x);
      for (int64_t k = 0; k < K; ++k) {
        const double gv = g0->val.data[static_cast<size_t>(k)];
        for (int64_t i = 0; i < inner; ++i) gx.data[k * inner + i] += g.data[k * inner + i] * gv;
      }
    }
    if (g0->requires_grad) {
      Tensor& gg = s.slot(g0);
      for (int64_t k = 0; k < K; ++k) {
        double acc = 0.0;
        for (int64_t i = 0; i < inner; ++i) acc += g.data[k * inner + i] * x->val.data[k * inner + i];
        gg.data[static_cast<size_t>(k)] += acc;
      }
    }
  });
}

Value mul_inner(const Value& x, const Value& gi) {
  const int64_t K = x->val.shape[0];
  const int64_t inner = x->val.numel() / K;
  if (gi->val.numel() != inner) throw NumericError("mul_inner: gate size mismatch");
  Tensor out = x->val;
  for (int64_t k = 0; k < K; ++k) {
    double* row = &out.data[k * inner];
    for (int64_t i = 0; i < inner; ++i) row[i] *= gi->val.data[static_cast<size_t>(i)];
  }
  return make_node(std::move(out), {x, gi}, [x, gi, K, inner](const Tensor& g, GradStore& s) {
    if (x->requires_grad) {
      Tensor& gx = s.slot(x);
      for (int64_t k = 0; k < K; ++k)
        for (int64_t i = 0; i < inner; ++i)
          gx.data[k * inner + i] += g.data[k * inner + i] * gi->val.data[static_cast<size_t>(i)];
    }
    if (gi->requires_grad) {
      Tensor& gg = s.slot(gi);
      for (int64_t k = 0; k < K; ++k)
        for (int64_t i = 0; i < inner; ++i)
          gg.data[static_cast<size_t>(i)] += g.data[k * inner + i] * x->val.data[k * inner + i];
    }
  });
}

Value add_rowvec(const Value& x, const Value& b) {
  if (x->val.ndim() != 2 || b->val.numel() != x->val.shape[1])
    throw NumericError("add_rowvec: shape mismatch");
  const int R = x->val.shape[0], C = x->val.shape[1];
  Tensor out = x->val;
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) out(r, c) += b->val.data[static_cast<size_t>(c)];
  return make_node(std::move(out), {x, b}, [x, b, R, C](const Tensor& g, GradStore& s) {
    if (x->requires_grad) s.add(x, g);
    if (b->requires_grad) {
      Tensor& gb = s.slot(b);
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) gb.data[static_cast<size_t>(c)] += g(r, c);
    }
  });
}

Value add_vec_axis0(const Value& x, const Value& b) {
  const int64_t K = x->val.shape[0];
  if (b->val.numel() != K) throw NumericError("add_vec_axis0: length mismatch");
  const int64_t inner = x->val.numel() / K;
  Tensor out = x->val;
  for (int64_t k = 0; k < K; ++k) {
    const double bv = b->val.data[static_cast<size_t>(k)];
    for (int64_t i = 0; i < inner; ++i) out.data[k * inner + i] += bv;
  }
  return make_node(std::move(out), {x, b}, [x, b, K, inner](const Tensor& g, GradStore& s) {
    if (x->requires_grad) s.add(x, g);
    if (b->requires_grad) {
      Tensor& gb = s.slot(b);
      for (int64_t k = 0; k < K; ++k) {
        double acc = 0.0;
        for (int64_t i = 0; i < inner; ++i) acc += g.data[k * inner + i];
        gb.data[static_cast<size_t>(k)] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Value sum_all(const Value& a) {
  Tensor out = Tensor::scalar(a->val.sum());
  return make_node(std::move(out), {a}, [a](const Tensor& g, GradStore& s) {
    if (!a->requires_grad) return;
    Tensor& ga = s.slot(a);
    for (auto& v : ga.data) v += g.data[0];
  });
}

Value mean_all(const Value& a) {
  const double n = static_cast<double>(a->val.numel());
  Tensor out = Tensor::scalar(a->val.sum() / n);
  return make_node(std::move(out), {a}, [a, n](const Tensor& g, GradStore& s) {
    if (!a->requires_grad) return;
    Tensor& ga = s.slot(a);
    const double gv = g.data[0] / n;
    for (auto& v : ga.data) v += gv;
  });
}

Value bcast_from_scalar(const Value& s, std::vector<int> shape) {
  if (s->val.numel() != 1) throw NumericError("bcast_from_scalar: source must be scalar");
  Tensor out = Tensor::full(std::move(shape), s->val.data[0]);
  return make_node(std::move(out), {s}, [s](const Tensor& g, GradStore& st) {
    if (!s->requires_grad) return;
    st.slot(s).data[0] += g.sum();
  });
}

Value mean_axis(const Value& a, int axis) {
  AxisSplit sp = split_axis(a->val.shape, axis);
  std::vector<int> shape;
  for (int d = 0; d < a->val.ndim(); ++d)
    if (d != axis) shape.push_back(a->val.shape[d]);
  if (shape.empty()) shape.push_back(1);
  Tensor out(shape);
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t i = 0; i < sp.inner; ++i) {
      double acc = 0.0;
      for (int64_t t = 0; t < sp.n; ++t) acc += a->val.data[(o * sp.n + t) * sp.inner + i];
      out.data[o * sp.inner + i] = acc / static_cast<double>(sp.n);
    }
  return make_node(std::move(out), {a}, [a, sp](const Tensor& g, GradStore& s) {
    if (!a->requires_grad) return;
    Tensor& ga = s.slot(a);
    const double inv = 1.0 / static_cast<double>(sp.n);
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t i = 0; i < sp.inner; ++i) {
        const double gv = g.data[o * sp.inner + i] * inv;
        for (int64_t t = 0; t < sp.n; ++t) ga.data[(o * sp.n + t) * sp.inner + i] += gv;
      }
  });
}

Value max_axis(const Value& a, int axis) {
  AxisSplit sp = split_axis(a->val.shape, axis);
  std::vector<int> shape;
  for (int d = 0; d < a->val.ndim(); ++d)
    if (d != axis) shape.push_back(a->val.shape[d]);
  if (shape.empty()) shape.push_back(1);
  Tensor out(shape);
  std::vector<int64_t> arg(static_cast<size_t>(sp.outer * sp.inner));
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t i = 0; i < sp.inner; ++i) {
      double best = a->val.data[(o * sp.n + 0) * sp.inner + i];
      int64_t bt = 0;
      for (int64_t t = 1; t < sp.n; ++t) {
        double v = a->val.data[(o * sp.n + t) * sp.inner + i];
        if (v > best) {
          best = v;
          bt = t;
        }
      }
      out.data[o * sp.inner + i] = best;
      arg[static_cast<size_t>(o * sp.inner + i)] = bt;
    }
  return make_node(std::move(out), {a}, [a, sp, arg](const Tensor& g, GradStore& s) {
    if (!a->requires_grad) return;
    Tensor& ga = s.slot(a);
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t i = 0; i < sp.inner; ++i) {
        const int64_t t = arg[static_cast<size_t>(o * sp.inner + i)];
        ga.data[(o * sp.n + t) * sp.inner + i] += g.data[o * sp.inner + i];
      }
  });
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

Value softmax(const Value& a, int axis, const Tensor* add_mask) {
  if (!a->val.all_finite()) throw NumericError("softmax: non-finite input");
  if (add_mask && !a->val.same_shape(*add_mask))
    throw NumericError("softmax: mask shape mismatch");
  AxisSplit sp = split_axis(a->val.shape, axis);
  Tensor out(a->val.shape);
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t i = 0; i < sp.inner; ++i) {
      double mx = kNegInf;
      for (int64_t t = 0; t < sp.n; ++t) {
        const int64_t idx = (o * sp.n + t) * sp.inner + i;
        double v = a->val.data[idx] + (add_mask ? add_mask->data[idx] : 0.0);
        if (v > mx) mx = v;
      }
      if (mx == kNegInf) {
        for (int64_t t = 0; t < sp.n; ++t) out.data[(o * sp.n + t) * sp.inner + i] = 0.0;
        continue;
      }
      double sum = 0.0;
      for (int64_t t = 0; t < sp.n; ++t) {
        const int64_t idx = (o * sp.n + t) * sp.inner + i;
        double v = a->val.data[idx] + (add_mask ? add_mask->data[idx] : 0.0);
        double e = v == kNegInf ? 0.0 : std::exp(v - mx);
        out.data[idx] = e;
        sum += e;
      }
      for (int64_t t = 0; t < sp.n; ++t) out.data[(o * sp.n + t) * sp.inner + i] /= sum;
    }
  Tensor y = out;
  return make_node(std::move(out), {a}, [a, sp, y](const Tensor& g, GradStore& s) {
    if (!a->requires_grad) return;
    Tensor& ga = s.slot(a);
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t i = 0; i < sp.inner; ++i) {
        double dot = 0.0;
        for (int64_t t = 0; t < sp.n; ++t) {
          const int64_t idx = (o * sp.n + t) * sp.inner + i;
          dot += g.data[idx] * y.data[idx];
        }
        for (int64_t t = 0; t < sp.n; ++t) {
          const int64_t idx = (o * sp.n + t) * sp.inner + i;
          ga.data[idx] += y.data[idx] * (g.data[idx] - dot);
        }
      }
  });
}

// ---------------------------------------------------------------------------
// conv2d / group_norm / upsample / embedding
// ---------------------------------------------------------------------------

namespace {
struct ConvDims {
  int Ci, H, W, Co, kh, kw, Ho, Wo;
};
ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.ndim() != 3 || w.ndim() != 4 || w.shape[1] != x.shape[0])
    throw NumericError("conv2d: bad shapes");
  ConvDims d;
  d.Ci = x.shape[0];
  d.H = x.shape[1];
  d.W = x.shape[2];
  d.Co = w.shape[0];
  d.kh = w.shape[2];
  d.kw = w.shape[3];
  d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
  d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
  if (d.Ho <= 0 || d.Wo <= 0) throw NumericError("conv2d: empty output");
  return d;
}

// Valid output-x range for a kernel column so the input index stays in bounds.
inline void ox_range(int kx, int pad, int stride, int W, int Wo, int& lo, int& hi) {
  // need 0 <= ox*stride + kx - pad <= W-1
  int a = pad - kx;
  lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  int b = W - 1 + pad - kx;
  hi = b < 0 ? -1 : std::min(Wo - 1, b / stride);
}
}  // namespace

Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad) {
  ConvDims d = conv_dims(x->val, w->val, stride, pad);
  if (b->val.numel() != d.Co) throw NumericError("conv2d: bias length mismatch");
  Tensor out({d.Co, d.Ho, d.Wo});
  for (int co = 0; co < d.Co; ++co) {
    double* oplane = &out.data[static_cast<size_t>(co) * d.Ho * d.Wo];
    const double bv = b->val.data[static_cast<size_t>(co)];
    for (int i = 0; i < d.Ho * d.Wo; ++i) oplane[i] = bv;
    for (int ci = 0; ci < d.Ci; ++ci) {
      const double* xplane = &x->val.data[static_cast<size_t>(ci) * d.H * d.W];
      for (int ky = 0; ky < d.kh; ++ky)
        for (int kx = 0; kx < d.kw; ++kx) {
          const double wv = w->val.data[((static_cast<size_t>(co) * d.Ci + ci) * d.kh + ky) * d.kw + kx];
          if (wv == 0.0) continue;
          int oxlo, oxhi;
          ox_range(kx, pad, stride, d.W, d.Wo, oxlo, oxhi);
          for (int oy = 0; oy < d.Ho; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= d.H) continue;
            const double* xrow = &xplane[static_cast<size_t>(iy) * d.W];
            double* orow = &oplane[static_cast<size_t>(oy) * d.Wo];
            if (stride == 1) {
              const int base = kx - pad;
              for (int ox = oxlo; ox <= oxhi; ++ox) orow[ox] += wv * xrow[ox + base];
            } else {
              for (int ox = oxlo; ox <= oxhi; ++ox) orow[ox] += wv * xrow[ox * stride + kx - pad];
            }
          }
        }
    }
  }
  return make_node(std::move(out), {x, w, b}, [x, w, b, d, stride, pad](const Tensor& g, GradStore& s) {
    if (b->requires_grad) {
      Tensor& gb = s.slot(b);
      for (int co = 0; co < d.Co; ++co) {
        double acc = 0.0;
        const double* gp = &g.data[static_cast<size_t>(co) * d.Ho * d.Wo];
        for (int i = 0; i < d.Ho * d.Wo; ++i) acc += gp[i];
        gb.data[static_cast<size_t>(co)] += acc;
      }
    }
    if (x->requires_grad) {
      Tensor& gx = s.slot(x);
      for (int co = 0; co < d.Co; ++co) {
        const double* gplane = &g.data[static_cast<size_t>(co) * d.Ho * d.Wo];
        for (int ci = 0; ci < d.Ci; ++ci) {
          double* gxp = &gx.data[static_cast<size_t>(ci) * d.H * d.W];
          for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx) {
              const double wv =
                  w->val.data[((static_cast<size_t>(co) * d.Ci + ci) * d.kh + ky) * d.kw + kx];
              if (wv == 0.0) continue;
              int oxlo, oxhi;
              ox_range(kx, pad, stride, d.W, d.Wo, oxlo, oxhi);
              for (int oy = 0; oy < d.Ho; ++oy) {
                const int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= d.H) continue;
                double* gxrow = &gxp[static_cast<size_t>(iy) * d.W];
                const double* grow = &gplane[static_cast<size_t>(oy) * d.Wo];
                for (int ox = oxlo; ox <= oxhi; ++ox)
                  gxrow[ox * stride + kx - pad] += wv * grow[ox];
              }
            }
        }
      }
    }
    if (w->requires_grad) {
      Tensor& gw = s.slot(w);
      for (int co = 0; co < d.Co; ++co) {
        const double* gplane = &g.data[static_cast<size_t>(co) * d.Ho * d.Wo];
        for (int ci = 0; ci < d.Ci; ++ci) {
          const double* xplane = &x->val.data[static_cast<size_t>(ci) * d.H * d.W];
          for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx) {
              int oxlo, oxhi;
              ox_range(kx, pad, stride, d.W, d.Wo, oxlo, oxhi);
              double acc = 0.0;
              for (int oy = 0; oy < d.Ho; ++oy) {
                const int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= d.H) continue;
                const double* xrow = &xplane[static_cast<size_t>(iy) * d.W];
                const double* grow = &gplane[static_cast<size_t>(oy) * d.Wo];
                if (stride == 1) {
                  const int base = kx - pad;
                  for (int ox = oxlo; ox <= oxhi; ++ox) acc += grow[ox] * xrow[ox + base];
                } else {
                  for (int ox = oxlo; ox <= oxhi; ++ox)
                    acc += grow[ox] * xrow[ox * stride + kx - pad];
                }
              }
              gw.data[((static_cast<size_t>(co) * d.Ci + ci) * d.kh + ky) * d.kw + kx] += acc;
            }
        }
      }
    }
  });
}

Value group_norm(const Value& x, const Value& gamma, const Value& beta, int groups, double eps) {
  if (x->val.ndim() != 3) throw NumericError("group_norm: need [C,H,W]");
  const int C = x->val.shape[0], HW = x->val.shape[1] * x->val.shape[2];
  if (C % groups != 0) throw NumericError("group_norm: channels not divisible by groups");
  if (gamma->val.numel() != C || beta->val.numel() != C)
    throw NumericError("group_norm: affine length mismatch");
  const int cg = C / groups;
  const int64_t n = static_cast<int64_t>(cg) * HW;

  Tensor xhat(x->val.shape);
  std::vector<double> inv_std(static_cast<size_t>(groups));
  for (int g = 0; g < groups; ++g) {
    const double* base = &x->val.data[static_cast<size_t>(g) * n];
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += base[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double dlt = base[i] - mean;
      var += dlt * dlt;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(g)] = is;
    double* xh = &xhat.data[static_cast<size_t>(g) * n];
    for (int64_t i = 0; i < n; ++i) xh[i] = (base[i] - mean) * is;
  }
  Tensor out(x->val.shape);
  for (int c = 0; c < C; ++c) {
    const double gm = gamma->val.data[static_cast<size_t>(c)];
    const double bt = beta->val.data[static_cast<size_t>(c)];
    const double* xh = &xhat.data[static_cast<size_t>(c) * HW];
    double* op = &out.data[static_cast<size_t>(c) * HW];
    for (int i = 0; i < HW; ++i) op[i] = gm * xh[i] + bt;
  }
  return make_node(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, groups, cg, HW, n, xhat, inv_std](const Tensor& g, GradStore& s) {
        const int C = cg * groups;
        if (gamma->requires_grad) {
          Tensor& gg = s.slot(gamma);
          for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int i = 0; i < HW; ++i)
              acc += g.data[static_cast<size_t>(c) * HW + i] * xhat.data[static_cast<size_t>(c) * HW + i];
            gg.data[static_cast<size_t>(c)] += acc;
          }
        }
        if (beta->requires_grad) {
          Tensor& gb = s.slot(beta);
          for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int i = 0; i < HW; ++i) acc += g.data[static_cast<size_t>(c) * HW + i];
            gb.data[static_cast<size_t>(c)] += acc;
          }
        }
        if (x->requires_grad) {
          Tensor& gx = s.slot(x);
          for (int grp = 0; grp < groups; ++grp) {
            const double is = inv_std[static_cast<size_t>(grp)];
            // dxhat = g * gamma_c over the group's channels
            double sum_dxh = 0.0, sum_dxh_xh = 0.0;
            for (int cc = 0; cc < cg; ++cc) {
              const int c = grp * cg + cc;
              const double gm = gamma->val.data[static_cast<size_t>(c)];
              const double* gp = &g.data[static_cast<size_t>(c) * HW];
              const double* xh = &xhat.data[static_cast<size_t>(c) * HW];
              for (int i = 0; i < HW; ++i) {
                const double dxh = gp[i] * gm;
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xh[i];
              }
            }
            const double nn = static_cast<double>(n);
            for (int cc = 0; cc < cg; ++cc) {
              const int c = grp * cg + cc;
              const double gm = gamma->val.data[static_cast<size_t>(c)];
              const double* gp = &g.data[static_cast<size_t>(c) * HW];
              const double* xh = &xhat.data[static_cast<size_t>(c) * HW];
              double* gxp = &gx.data[static_cast<size_t>(c) * HW];
              for (int i = 0; i < HW; ++i) {
                const double dxh = gp[i] * gm;
                gxp[i] += is * (dxh - sum_dxh / nn - xh[i] * sum_dxh_xh / nn);
              }
            }
          }
        }
      });
}

Value upsample2x(const Value& x) {
  if (x->val.ndim() != 3) throw NumericError("upsample2x: need [C,H,W]");
  const int C = x->val.shape[0], H = x->val.shape[1], W = x->val.shape[2];
  Tensor out({C, 2 * H, 2 * W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) {
        const double v = x->val(c, y, xx);
        out(c, 2 * y, 2 * xx) = v;
        out(c, 2 * y, 2 * xx + 1) = v;
        out(c, 2 * y + 1, 2 * xx) = v;
        out(c, 2 * y + 1, 2 * xx + 1) = v;
      }
  return make_node(std::move(out), {x}, [x, C, H, W](const Tensor& g, GradStore& s) {
    if (!x->requires_grad) return;
    Tensor& gx = s.slot(x);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
          gx(c, y, xx) += g(c, 2 * y, 2 * xx) + g(c, 2 * y, 2 * xx + 1) + g(c, 2 * y + 1, 2 * xx) +
                          g(c, 2 * y + 1, 2 * xx + 1);
  });
}

Value embedding(const Value& table, const std::vector<int>& idx) {
  if (table->val.ndim() != 2) throw NumericError("embedding: table must be [V,D]");
  const int V = table->val.shape[0], D = table->val.shape[1];
  Tensor out({static_cast<int>(idx.size()), D});
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= V) throw NumericError("embedding: index out of range");
    std::copy_n(&table->val.data[static_cast<size_t>(idx[r]) * D], D,
                &out.data[r * static_cast<size_t>(D)]);
  }
  return make_node(std::move(out), {table}, [table, idx, D](const Tensor& g, GradStore& s) {
    if (!table->requires_grad) return;
    Tensor& gt = s.slot(table);
    for (size_t r = 0; r < idx.size(); ++r)
      for (int c = 0; c < D; ++c)
        gt.data[static_cast<size_t>(idx[r]) * D + c] += g.data[r * static_cast<size_t>(D) + c];
  });
}

}  // namespace migc
