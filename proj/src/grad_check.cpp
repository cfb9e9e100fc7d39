#include "xmodal/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace xmodal {

namespace {

double eval_scalar(const ScalarFn& f, const std::map<std::string, Tensor>& params,
                   const std::string& where) {
  Tape tape;
  ParamVars vars;
  for (const auto& [name, tensor] : params) vars[name] = tape.leaf(tensor);
  Var root = f(tape, vars);
  const double v = tape.value(root).item();
  if (!std::isfinite(v)) throw EvalError("grad_check: non-finite value at " + where);
  return v;
}

}  // namespace

GradReport grad_check(const std::string& op_name, const ScalarFn& f,
                      const std::map<std::string, Tensor>& params, double h) {
  GradReport report;
  report.op_name = op_name;

  // Analytic gradients from one reverse pass.
  Tape tape;
  ParamVars vars;
  for (const auto& [name, tensor] : params) vars[name] = tape.leaf(tensor);
  Var root = f(tape, vars);
  if (!std::isfinite(tape.value(root).item()))
    throw EvalError("grad_check: non-finite value at base point of " + op_name);
  tape.backward(root);

  std::map<std::string, Tensor> work = params;
  for (const auto& [name, base] : params) {
    const Tensor analytic = tape.grad(vars.at(name));
    double worst = 0.0;
    Tensor& slot = work.at(name);
    for (std::size_t i = 0; i < base.numel(); ++i) {
      const double keep = slot[i];
      slot[i] = keep + h;
      const double fp = eval_scalar(f, work, name + "[" + std::to_string(i) + "] + h");
      slot[i] = keep - h;
      const double fm = eval_scalar(f, work, name + "[" + std::to_string(i) + "] - h");
      slot[i] = keep;
      const double numeric = (fp - fm) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    report.per_param[name] = worst;
    report.max_rel_error = std::max(report.max_rel_error, worst);
  }
  return report;
}

}  // namespace xmodal
