#include "fastwam/gradcheck.hpp"

#include <cmath>

#include "fastwam/errors.hpp"

namespace fastwam {

namespace {

// Relative error with a floor so exact zeros on both sides compare clean.
double rel_err(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
  return std::fabs(analytic - numeric) / denom;
}

double eval_loss(ParamStore& params, const LossFn& loss_fn, const std::string& context) {
  Graph g(params, /*grad_enabled=*/false);
  double v = loss_fn(g).scalar_value();
  if (!std::isfinite(v)) {
    throw NumericError("finite_diff_check: non-finite loss" +
                       (context.empty() ? "" : " while perturbing " + context));
  }
  return v;
}

}  // namespace

CheckReport finite_diff_check(ParamStore& params, const LossFn& loss_fn, double rel_tol, double h) {
  if (h <= 0.0) throw ConfigError("finite_diff_check: h must be positive");

  // Analytic pass.
  Graph g(params, /*grad_enabled=*/true);
  Tensor loss = loss_fn(g);
  if (!std::isfinite(loss.scalar_value())) {
    throw NumericError("finite_diff_check: non-finite loss at base point");
  }
  loss.backward();
  std::vector<double> analytic(params.total_size(), 0.0);
  g.accumulate_param_grads(analytic);

  CheckReport report;
  report.rel_tol = rel_tol;
  report.pass = true;

  for (auto& [path, entry] : params.entries()) {
    const std::size_t off = params.offset_of(path);
    CheckEntry ce;
    ce.path = path;
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double orig = entry.value[i];
      entry.value[i] = orig + h;
      const double lp = eval_loss(params, loss_fn, path);
      entry.value[i] = orig - h;
      const double lm = eval_loss(params, loss_fn, path);
      entry.value[i] = orig;
      const double numeric = (lp - lm) / (2.0 * h);
      const double e = rel_err(analytic[off + i], numeric);
      if (e > ce.max_rel_err) ce.max_rel_err = e;
    }
    if (ce.max_rel_err > report.max_rel_err) {
      report.max_rel_err = ce.max_rel_err;
      report.worst_path = path;
    }
    if (ce.max_rel_err > rel_tol) report.pass = false;
    report.per_param.push_back(std::move(ce));
  }
  return report;
}

}  // namespace fastwam
