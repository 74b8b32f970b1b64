#include "migc/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace migc {

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data) m = std::max(m, std::fabs(v));
  return m;
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data) s += v;
  return s;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

uint64_t fnv1a64(const void* bytes, size_t n, uint64_t seed) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t hash_tensors(const std::vector<const Tensor*>& ts) {
  uint64_t h = 1469598103934665603ull;
  for (const Tensor* t : ts) {
    for (int e : t->shape) {
      int64_t e64 = e;
      h = fnv1a64(&e64, sizeof(e64), h);
    }
    if (!t->data.empty()) h = fnv1a64(t->data.data(), t->data.size() * sizeof(double), h);
  }
  return h;
}

}  // namespace migc
