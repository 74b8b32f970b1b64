#include "migc/gradcheck.hpp"

#include <cmath>

namespace migc {

namespace {
double eval_scalar(const std::function<Value()>& make_loss) {
  NoGradGuard ng;  // value-only evaluation
  Value v = make_loss();
  if (v->val.numel() != 1) throw NumericError("grad_check: objective must be scalar");
  return v->val.data[0];
}

double central_diff(double& cell, double x0, double eps,
                    const std::function<Value()>& make_loss) {
  cell = x0 + eps;
  const double fp = eval_scalar(make_loss);
  cell = x0 - eps;
  const double fm = eval_scalar(make_loss);
  cell = x0;
  return (fp - fm) / (2.0 * eps);
}
}  // namespace

GradCheckReport grad_check(const std::vector<std::pair<std::string, Value>>& params,
                           const std::function<Value()>& make_loss, double eps,
                           double retry_threshold) {
  GradCheckReport rep;
  Value loss = make_loss();
  if (loss->val.numel() != 1) throw NumericError("grad_check: objective must be scalar");
  GradStore grads = backward(loss);

  for (const auto& [name, p] : params) {
    const Tensor* g = grads.find(p.get());
    for (size_t i = 0; i < p->val.data.size(); ++i) {
      const double analytic = g ? g->data[i] : 0.0;
      double& cell = p->val.data[i];
      const double x0 = cell;
      double numeric = central_diff(cell, x0, eps, make_loss);
      double rel = std::fabs(analytic - numeric) / std::max(1.0, std::fabs(numeric));
      if (rel > retry_threshold) {
        numeric = central_diff(cell, x0, eps / 10.0, make_loss);
        rel = std::fabs(analytic - numeric) / std::max(1.0, std::fabs(numeric));
        if (rel > retry_threshold) {
          rep.nondiff_suspect = true;
          rep.suspects.push_back(name + "[" + std::to_string(i) + "]");
        }
      }
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = name + "[" + std::to_string(i) + "]";
      }
      ++rep.n_checked;
    }
  }
  return rep;
}

}  // namespace migc
