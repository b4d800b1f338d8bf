#pragma once

// L-infinity adversarial example generation. PGD maximizes an arbitrary
// scalar tape objective of the adversarial input, so the same loop serves
// plain cross-entropy attacks, TRADES' KL inner max, and the concurrent
// method's full mixed objective.
//
// Every example owns a seeded stream derived from (seed, example index,
// restart index); batch composition and restart scheduling therefore never
// change the noise an example sees.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "actlab/models.hpp"
#include "actlab/objectives.hpp"
#include "actlab/rng.hpp"
#include "actlab/tape.hpp"
#include "actlab/tensor.hpp"

namespace actlab {

enum class Norm { kLinf };

struct AttackBudget {
  Norm norm = Norm::kLinf;
  double epsilon = 0.031;
  double clamp_lo = 0.0;
  double clamp_hi = 1.0;

  void validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon))
      throw std::invalid_argument("attack budget: epsilon must be finite and >= 0");
    if (!(clamp_lo < clamp_hi))
      throw std::invalid_argument("attack budget: clamp range is empty");
  }
};

struct AttackConfig {
  AttackBudget budget;
  std::size_t steps = 10;
  double step_size = 0.007;
  bool random_init = true;
  std::size_t restarts = 1;
  std::uint64_t seed = 0;
  std::size_t restart_index = 0;  // which restart's noise stream pgd consumes

  void validate() const {
    budget.validate();
    if (!(step_size >= 0.0) || !std::isfinite(step_size))
      throw std::invalid_argument("attack config: step_size must be finite and >= 0");
    if (restarts < 1) throw std::invalid_argument("attack config: restarts must be >= 1");
  }
};

/// Builds a scalar objective (to maximize) from the adversarial batch.
using Objective = std::function<Var(Tape&, Var)>;

/// Clip delta into the epsilon ball, then pull x+delta into the clamp range.
inline Tensor project_linf(const Tensor& delta, const Tensor& x, const AttackBudget& budget) {
  budget.validate();
  ensure_same_shape(delta, x, "project_linf");
  double eps = budget.epsilon, lo = budget.clamp_lo, hi = budget.clamp_hi;
  Tensor out = delta;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    double d = out.data[i];
    if (d > eps) d = eps;
    if (d < -eps) d = -eps;
    double xi = x.data[i];
    if (xi + d > hi) {
      d = hi - xi;
      while (xi + d > hi) d = std::nextafter(d, -std::numeric_limits<double>::infinity());
    }
    if (xi + d < lo) {
      d = lo - xi;
      while (xi + d < lo) d = std::nextafter(d, std::numeric_limits<double>::infinity());
    }
    out.data[i] = d;
  }
  return out;
}

namespace detail {

inline Tensor add_tensors(const Tensor& a, const Tensor& b) {
  ensure_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

inline Tensor random_init_delta(const Tensor& x, const AttackConfig& cfg) {
  Tensor delta = Tensor::zeros(x.shape);
  std::size_t n = x.dim(0);
  std::size_t per = x.numel() / n;
  double eps = cfg.budget.epsilon;
  for (std::size_t i = 0; i < n; ++i) {
    rng::Stream s(rng::derive(cfg.seed, rng::kAttackInit, static_cast<std::uint64_t>(i),
                              static_cast<std::uint64_t>(cfg.restart_index)));
    for (std::size_t d = 0; d < per; ++d) delta.data[i * per + d] = s.uniform(-eps, eps);
  }
  return delta;
}

}  // namespace detail

/// K iterations of delta <- project(delta + step * sign(grad objective)).
inline Tensor pgd(const Objective& objective, const Tensor& x, const AttackConfig& cfg) {
  cfg.validate();
  if (x.rank() < 1 || x.dim(0) == 0)
    throw ShapeError("pgd: input needs a nonempty batch dimension");
  Tensor delta =
      cfg.random_init ? detail::random_init_delta(x, cfg) : Tensor::zeros(x.shape);
  delta = project_linf(delta, x, cfg.budget);
  for (std::size_t k = 0; k < cfg.steps; ++k) {
    Tape tape;
    Var adv = tape.leaf(detail::add_tensors(x, delta));
    Var obj = objective(tape, adv);
    if (obj.value().numel() != 1)
      throw std::invalid_argument("pgd: objective must be scalar, got " +
                                  shape_str(obj.value().shape));
    tape.backward(obj);
    Tensor g = tape.grad(adv);
    for (std::size_t i = 0; i < delta.data.size(); ++i) {
      double s = g.data[i] > 0.0 ? 1.0 : (g.data[i] < 0.0 ? -1.0 : 0.0);
      delta.data[i] += cfg.step_size * s;
    }
    delta = project_linf(delta, x, cfg.budget);
  }
  return delta;
}

/// One signed step of size epsilon from zero.
inline Tensor fgsm(const Objective& objective, const Tensor& x, const AttackBudget& budget) {
  AttackConfig cfg;
  cfg.budget = budget;
  cfg.steps = 1;
  cfg.step_size = budget.epsilon;
  cfg.random_init = false;
  return pgd(objective, x, cfg);
}

/// An attack objective bundled with its per-example view for tie-breaking.
struct AttackObjective {
  Objective batch;
  std::function<std::vector<double>(const Tensor& adv)> per_example;
};

using Forward = std::function<Tensor(const Tensor&)>;

inline Forward model_forward(const ModelParams& params, const ModelSpec& spec) {
  return [params, spec](const Tensor& x) { return forward(params, spec, x); };
}

/// Mean cross-entropy of the model on given labels; the standard evaluation
/// attack objective.
inline AttackObjective ce_attack_objective(const ModelParams& params, const ModelSpec& spec,
                                           Labels labels) {
  AttackObjective o;
  o.batch = [params, spec, labels](Tape& t, Var adv) {
    std::vector<Var> pv = stage_params(t, params, false);
    return cross_entropy(forward_on_tape(t, spec, pv, adv), labels).total;
  };
  o.per_example = [params, spec, labels](const Tensor& adv) {
    Tensor lp = log_softmax_values(forward(params, spec, adv));
    std::size_t c = lp.dim(1);
    std::vector<double> out(lp.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = -lp.data[i * c + labels[i]];
    return out;
  };
  return o;
}

struct AttackResult {
  Tensor delta;
  std::vector<bool> flipped;
  std::vector<double> objective;  // per-example objective of the kept restart
};

/// Worst case over restarts, per example: prefer perturbations that flip the
/// prediction; among equals, prefer the higher objective; ties keep the
/// earliest restart.
inline AttackResult multi_restart_attack(const AttackObjective& objective, const Forward& predict,
                                         const Tensor& x, const Labels& y,
                                         const AttackConfig& cfg) {
  cfg.validate();
  std::size_t n = x.dim(0);
  check_labels(y, n, std::numeric_limits<std::size_t>::max());
  AttackResult best;
  best.delta = Tensor::zeros(x.shape);
  best.flipped.assign(n, false);
  best.objective.assign(n, -std::numeric_limits<double>::infinity());
  std::size_t per = x.numel() / n;
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    AttackConfig rcfg = cfg;
    rcfg.restart_index = r;
    Tensor delta = pgd(objective.batch, x, rcfg);
    Tensor adv = detail::add_tensors(x, delta);
    std::vector<std::size_t> pred = argmax_rows(predict(adv));
    std::vector<double> obj = objective.per_example(adv);
    for (std::size_t i = 0; i < n; ++i) {
      bool flip = pred[i] != y[i];
      bool better = (flip && !best.flipped[i]) ||
                    (flip == best.flipped[i] && obj[i] > best.objective[i]);
      if (!better) continue;
      best.flipped[i] = flip;
      best.objective[i] = obj[i];
      for (std::size_t d = 0; d < per; ++d)
        best.delta.data[i * per + d] = delta.data[i * per + d];
    }
  }
  return best;
}

/// Evaluation runs chunk large batches to bound tape memory; per-chunk seeds
/// are derived from the chunk's start index so the split stays deterministic.
inline constexpr std::size_t kEvalChunk = 256;

/// Fraction of examples the model still classifies correctly after the
/// multi-restart attack.
inline double robust_fraction(const ModelParams& params, const ModelSpec& spec, const Tensor& x,
                              const Labels& y, const AttackConfig& cfg) {
  std::size_t n = x.dim(0);
  if (n == 0) throw std::invalid_argument("robust_fraction: empty batch");
  Forward predict = model_forward(params, spec);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    std::size_t stop = std::min(n, start + kEvalChunk);
    std::vector<std::size_t> rows(stop - start);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = start + i;
    Tensor cx = take_rows(x, rows);
    Labels cy(y.begin() + static_cast<std::ptrdiff_t>(start),
              y.begin() + static_cast<std::ptrdiff_t>(stop));
    AttackConfig ccfg = cfg;
    ccfg.seed = rng::derive(cfg.seed, rng::kEval, static_cast<std::uint64_t>(start));
    AttackObjective obj = ce_attack_objective(params, spec, cy);
    AttackResult r = multi_restart_attack(obj, predict, cx, cy, ccfg);
    for (bool f : r.flipped)
      if (!f) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

/// Marker for examples no attack within the search range could flip.
inline constexpr double kUnbounded = std::numeric_limits<double>::infinity();

/// Smallest epsilon at which the attack flips each example, by bisection down
/// to tol. Step size scales as 2.5*eps/K at every probed epsilon.
inline std::vector<double> min_perturbation(const ModelParams& params, const ModelSpec& spec,
                                            const Tensor& x, const Labels& y, double tol,
                                            double eps_hi, const AttackConfig& cfg_template) {
  if (!(tol > 0.0)) throw std::invalid_argument("min_perturbation: tol must be > 0");
  if (!(eps_hi > 0.0)) throw std::invalid_argument("min_perturbation: eps_hi must be > 0");
  std::size_t n = x.dim(0);
  check_labels(y, n, spec.num_classes);
  std::vector<std::size_t> clean_pred = argmax_rows(forward(params, spec, x));
  Forward predict = model_forward(params, spec);
  std::vector<double> out(n, kUnbounded);
  std::size_t steps = std::max<std::size_t>(cfg_template.steps, 1);

  for (std::size_t i = 0; i < n; ++i) {
    if (clean_pred[i] != y[i]) {
      out[i] = 0.0;
      continue;
    }
    Tensor xi = slice_example(x, i);
    Labels yi{y[i]};
    AttackObjective obj = ce_attack_objective(params, spec, yi);
    // Explicit bool return: flipped is a vector<bool>, whose operator[]
    // hands out a proxy into the temporary AttackResult. Converting inside
    // the lambda copies the bit out before the temporary dies.
    auto flips_at = [&](double eps) -> bool {
      AttackConfig c = cfg_template;
      c.steps = steps;
      c.budget.epsilon = eps;
      c.step_size = 2.5 * eps / static_cast<double>(steps);
      c.seed = rng::derive(cfg_template.seed, rng::kAttack, static_cast<std::uint64_t>(i));
      return multi_restart_attack(obj, predict, xi, yi, c).flipped[0];
    };
    if (!flips_at(eps_hi)) continue;  // stays kUnbounded
    double lo = 0.0, hi = eps_hi;
    while (hi - lo > tol) {
      double mid = 0.5 * (lo + hi);
      if (flips_at(mid)) hi = mid;
      else lo = mid;
    }
    out[i] = hi;
  }
  return out;
}

}  // namespace actlab
