#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sciedkit/tensor.hpp"

namespace sciedkit {

struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t worst_tensor = 0;
  size_t worst_index = 0;
};

// Central-difference check of reverse-mode gradients. `make_loss` must
// rebuild the computation from the current parameter values: with a tape
// pointer for the analytic pass, with nullptr for plain evaluation.
// Uses the Richardson-extrapolated central stencil
//   (8*(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / (12h)
// so a step around 1e-3 keeps both truncation and cancellation error small.
// Relative error uses denominator max(|numeric|, |analytic|, 1e-8).
template <typename T, typename F>
GradCheckReport finite_difference_check_all(F&& make_loss, std::vector<Tensor<T>> params,
                                            double step) {
  if (!(step > 0)) throw InputError("finite difference step must be > 0");
  for (auto& p : params) p.zero_grad();
  Tape<T> tape;
  Tensor<T> loss = make_loss(&tape);
  if (loss.size() != 1) throw InputError("gradient check requires a scalar-valued function");
  backward(tape, loss);

  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());
  for (auto& p : params) p.zero_grad();

  GradCheckReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].values();
    for (size_t i = 0; i < vals.size(); ++i) {
      const T orig = vals[i];
      auto eval_at = [&](double offset) {
        vals[i] = orig + T(offset);
        return static_cast<double>(make_loss(nullptr).item());
      };
      const double lp = eval_at(step);
      const double lm = eval_at(-step);
      const double lp2 = eval_at(2.0 * step);
      const double lm2 = eval_at(-2.0 * step);
      vals[i] = orig;
      const double numeric = (8.0 * (lp - lm) - (lp2 - lm2)) / (12.0 * step);
      const double exact = static_cast<double>(analytic[pi][i]);
      const double denom = std::max({std::fabs(numeric), std::fabs(exact), 1e-8});
      const double rel = std::fabs(numeric - exact) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_tensor = pi;
        report.worst_index = i;
      }
    }
  }
  return report;
}

// Single-tensor form: worst relative error between backward's gradient of
// f with respect to x and the central finite difference.
template <typename T, typename F>
double finite_difference_check(F&& make_loss, Tensor<T> x, double step) {
  return finite_difference_check_all<T>(std::forward<F>(make_loss), {x}, step).max_rel_err;
}

}  // namespace sciedkit
