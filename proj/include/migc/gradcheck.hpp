#pragma once

#include <functional>
#include <string>
#include <vector>

#include "migc/autodiff.hpp"

namespace migc {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst;            // "name[flat_index]"
  bool nondiff_suspect = false; // discrepancy persisted after an eps/10 retry
  int64_t n_checked = 0;
  std::vector<std::string> suspects;
};

// Compares analytic gradients of a scalar objective against central
// differences, element by element. Relative error is
// |analytic - numeric| / max(1, |numeric|). Entries above `retry_threshold`
// are re-measured at eps/10; if the discrepancy persists the parameter is
// flagged as suspected non-differentiable. `make_loss` must be deterministic.
GradCheckReport grad_check(const std::vector<std::pair<std::string, Value>>& params,
                           const std::function<Value()>& make_loss, double eps = 1e-5,
                           double retry_threshold = 1e-2);

}  // namespace migc
