#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lacmfer/autograd.hpp"

namespace lacmfer {

/// Named view of a parameter tensor being differentiated.
struct ParamRef {
  std::string name;
  Tensor* tensor;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_tensor;
  double worst = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Error measure: absolute below 1, relative above. Keeps finite-difference
/// roundoff noise from dominating entries whose true gradient is near zero.
inline double grad_rel_err(double analytic, double fd) {
  double denom = std::max({std::fabs(analytic), std::fabs(fd), 1.0});
  return std::fabs(analytic - fd) / denom;
}

/// Compares the tape gradient of a scalar loss against central finite
/// differences, per parameter tensor. `build_loss` receives one leaf per
/// ParamRef, in order, and must return a scalar node. The referenced tensors
/// are perturbed in place during the sweep and restored bit-exactly.
inline GradCheckReport grad_check(const std::vector<ParamRef>& params,
                                  const std::function<Var(Graph&, const std::vector<Var>&)>& build_loss,
                                  double step, double tolerance) {
  if (!(step > 0.0)) throw ConfigError("grad_check: step must be positive");

  auto eval_loss = [&]() {
    Graph g;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const ParamRef& p : params) leaves.push_back(g.leaf(*p.tensor));
    Var loss = build_loss(g, leaves);
    double v = g.value(loss).scalar_value();
    if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite loss value");
    return v;
  };

  // analytic pass
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> leaves;
    for (const ParamRef& p : params) leaves.push_back(g.leaf(*p.tensor));
    Var loss = build_loss(g, leaves);
    if (!std::isfinite(g.value(loss).scalar_value()))
      throw NumericalError("grad_check: non-finite loss value");
    g.backward(loss);
    for (Var v : leaves) analytic.push_back(g.grad(v));
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& x = *params[t].tensor;
    GradCheckEntry entry{params[t].name, 0.0};
    for (std::size_t i = 0; i < x.numel(); ++i) {
      double saved = x.data[i];
      x.data[i] = saved + step;
      double up = eval_loss();
      x.data[i] = saved - step;
      double down = eval_loss();
      x.data[i] = saved;
      double fd = (up - down) / (2.0 * step);
      entry.max_rel_err = std::max(entry.max_rel_err, grad_rel_err(analytic[t].data[i], fd));
    }
    report.worst = std::max(report.worst, entry.max_rel_err);
    report.per_tensor.push_back(std::move(entry));
  }
  report.passed = report.worst < tolerance;
  return report;
}

}  // namespace lacmfer
