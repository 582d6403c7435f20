#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fastwam/param_store.hpp"

namespace fastwam {

// Deterministic scalar loss over a parameter store, evaluated through a
// fresh graph each call.
using LossFn = std::function<Tensor(Graph&)>;

struct CheckEntry {
  std::string path;
  double max_rel_err = 0.0;
};

struct CheckReport {
  bool pass = false;
  double rel_tol = 0.0;
  double max_rel_err = 0.0;
  std::string worst_path;
  std::vector<CheckEntry> per_param;
};

// Compares analytic gradients against central finite differences,
// parameter by parameter. Throws NumericError (naming the parameter
// path where applicable) when the loss is non-finite.
CheckReport finite_diff_check(ParamStore& params, const LossFn& loss_fn, double rel_tol, double h);

}  // namespace fastwam
