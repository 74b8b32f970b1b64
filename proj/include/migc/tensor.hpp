#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace migc {

// Additive-mask sentinel: banned attention entries carry -inf before softmax.
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Error categories, mapped to CLI exit codes by the harness.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct OracleClosureError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major tensor of doubles. Shape metadata plus flat storage;
// all kernel ops keep values finite (NaN/Inf is an error state).
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  }
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != static_cast<int64_t>(data.size()))
      throw NumericError("tensor: shape/data length mismatch");
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int e : s) {
      if (e < 0) throw NumericError("tensor: negative extent");
      n *= e;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor of(std::vector<int> s, std::initializer_list<double> vals) {
    return Tensor(std::move(s), std::vector<double>(vals));
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  double& operator()(int i) { return data[static_cast<size_t>(i)]; }
  double operator()(int i) const { return data[static_cast<size_t>(i)]; }
  double& operator()(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  double operator()(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
  double& operator()(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  double operator()(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
  double max_abs() const;
  double sum() const;
  std::string shape_str() const;
};

// FNV-1a over the raw bytes of a tensor list; used for frozen-parameter checks
// and run manifests.
uint64_t fnv1a64(const void* bytes, size_t n, uint64_t seed = 1469598103934665603ull);
uint64_t hash_tensors(const std::vector<const Tensor*>& ts);

}  // namespace migc
