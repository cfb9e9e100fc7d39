#pragma once

#include <functional>
#include <map>
#include <string>

#include "xmodal/tape.hpp"

namespace xmodal {

struct GradReport {
  std::string op_name;
  double max_rel_error = 0.0;
  std::map<std::string, double> per_param;

  bool pass(double tol) const { return max_rel_error < tol; }
};

// A scalar-valued computation over named parameter leaves.
using ParamVars = std::map<std::string, Var>;
using ScalarFn = std::function<Var(Tape&, const ParamVars&)>;

// Compares reverse-mode gradients of f against central differences
// (f(x+h) - f(x-h)) / 2h per coordinate. Relative error uses denominator
// max(|analytic|, |numeric|, 1e-8). Throws EvalError if f is non-finite at
// the base point or any perturbation, naming the offending coordinate.
GradReport grad_check(const std::string& op_name, const ScalarFn& f,
                      const std::map<std::string, Tensor>& params, double h = 1e-5);

}  // namespace xmodal
