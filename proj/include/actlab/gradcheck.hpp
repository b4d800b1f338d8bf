#pragma once

// Central-difference gradient checking. The callback builds a fresh scalar
// expression for a given input value; we compare its tape gradient against
// (f(x+h) - f(x-h)) / 2h coordinate by coordinate.

#include <cmath>
#include <cstddef>
#include <functional>

#include "actlab/tape.hpp"
#include "actlab/tensor.hpp"

namespace actlab {

/// Builds a scalar function of one tensor input on the given tape.
using DiffFn = std::function<Var(Tape&, Var)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

/// Relative error with a floor so near-zero gradient pairs compare absolutely.
inline double grad_rel_err(double analytic, double numeric) {
  double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
  return std::abs(analytic - numeric) / scale;
}

inline GradCheckResult finite_diff_check(const DiffFn& f, const Tensor& x, double h = 1e-5) {
  Tape tape;
  Var in = tape.leaf(x);
  Var out = f(tape, in);
  if (out.value().numel() != 1)
    throw std::invalid_argument("finite_diff_check: function must produce a scalar");
  tape.backward(out);
  Tensor analytic = tape.grad(in);

  GradCheckResult r;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    double keep = probe.data[i];
    probe.data[i] = keep + h;
    Tape tp;
    double fp = f(tp, tp.leaf(probe, false)).value().data[0];
    probe.data[i] = keep - h;
    Tape tm;
    double fm = f(tm, tm.leaf(probe, false)).value().data[0];
    probe.data[i] = keep;
    double numeric = (fp - fm) / (2.0 * h);
    double err = grad_rel_err(analytic.data[i], numeric);
    if (err >= r.max_rel_err) {
      r.max_rel_err = err;
      r.worst_index = i;
      r.analytic_at_worst = analytic.data[i];
      r.numeric_at_worst = numeric;
    }
  }
  return r;
}

}  // namespace actlab
