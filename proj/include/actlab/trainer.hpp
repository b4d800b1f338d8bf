#pragma once

// The concurrent minimax training loop plus the Madry, TRADES, and standard
// baselines, all sharing one SGD-momentum optimizer and one schedule.
//
// RNG discipline: the robust model's init, the epoch shuffle, augmentation,
// and per-step attack seeds are derived from (run seed, purpose tag) and are
// consumed identically by every method. The natural model's init draws from
// its own tagged stream. Consequently the concurrent method at alpha = 0 sees
// exactly the draws plain adversarial training sees, and the mixing weight's
// zero-scaled mimicry terms contribute only exact signed zeros to gradients —
// the two parameter trajectories coincide bit for bit.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "actlab/attacks.hpp"
#include "actlab/data.hpp"
#include "actlab/models.hpp"
#include "actlab/objectives.hpp"
#include "actlab/rng.hpp"

namespace actlab {

enum class Method { kAct, kMadry, kTrades, kStandard };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::kAct: return "act";
    case Method::kMadry: return "madry";
    case Method::kTrades: return "trades";
    case Method::kStandard: return "standard";
  }
  throw std::logic_error("unreachable");
}

inline Method method_from_name(const std::string& s) {
  if (s == "act") return Method::kAct;
  if (s == "madry") return Method::kMadry;
  if (s == "trades") return Method::kTrades;
  if (s == "standard") return Method::kStandard;
  throw std::invalid_argument("unknown method '" + s +
                              "' (expected act, madry, trades, or standard)");
}

struct TrainPlan {
  Method method = Method::kAct;
  double alpha = 0.9;
  double inv_lambda = 5.0;
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  double lr0 = 0.1;
  double momentum = 0.9;
  std::vector<std::pair<std::size_t, double>> lr_milestones;  // (epoch, factor)
  AttackConfig attack;       // training-time
  AttackConfig eval_attack;  // periodic robust evaluation
  std::size_t eval_every = 0;  // epochs between robust evals; 0 disables
  std::size_t augment_pad = 0;
  bool augment_flip = false;
  std::vector<std::uint64_t> seeds{0};
  ModelSpec spec;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("plan: batch_size must be >= 1");
    if (!(lr0 > 0.0)) throw std::invalid_argument("plan: lr0 must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw std::invalid_argument("plan: momentum must lie in [0,1)");
    for (std::size_t i = 0; i < lr_milestones.size(); ++i) {
      if (i > 0 && lr_milestones[i].first <= lr_milestones[i - 1].first)
        throw std::invalid_argument("plan: lr milestones must be strictly increasing");
      double f = lr_milestones[i].second;
      if (!(f > 0.0 && f <= 1.0))
        throw std::invalid_argument("plan: lr factors must lie in (0,1]");
    }
    if (seeds.empty()) throw std::invalid_argument("plan: needs at least one seed");
    check_mix_weight(alpha);
    if (!(inv_lambda >= 0.0)) throw std::invalid_argument("plan: inv_lambda must be >= 0");
    attack.validate();
    eval_attack.validate();
  }
};

/// lr0 times the product of milestone factors whose epoch has been reached.
inline double lr_at(std::size_t epoch, const TrainPlan& plan) {
  double lr = plan.lr0;
  for (const auto& [at, factor] : plan.lr_milestones)
    if (at <= epoch) lr *= factor;
  return lr;
}

struct OptimizerState {
  std::vector<Tensor> velocity;
  double lr = 0.1;
  double momentum = 0.9;

  static OptimizerState mirror(const ModelParams& p, double lr, double momentum) {
    OptimizerState s;
    s.lr = lr;
    s.momentum = momentum;
    s.velocity.reserve(p.size());
    for (const Tensor& t : p.tensors) s.velocity.push_back(Tensor::zeros(t.shape));
    return s;
  }
};

/// v <- mu*v + g; p <- p - lr*v.
inline void sgd_momentum_step(ModelParams& params, const std::vector<Tensor>& grads,
                              OptimizerState& state) {
  if (grads.size() != params.size() || state.velocity.size() != params.size())
    throw std::invalid_argument("sgd step: parameter/gradient/velocity counts disagree");
  for (std::size_t i = 0; i < params.size(); ++i) {
    ensure_same_shape(params.tensors[i], grads[i], "sgd step");
    Tensor& v = state.velocity[i];
    Tensor& p = params.tensors[i];
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      v.data[k] = state.momentum * v.data[k] + grads[i].data[k];
      p.data[k] -= state.lr * v.data[k];
    }
    ensure_all_finite(p, "sgd step");
  }
}

struct StepMetrics {
  double loss_G = 0.0, task_G = 0.0, mimicry_G = 0.0;
  double loss_F = 0.0, task_F = 0.0, mimicry_F = 0.0;
};

namespace detail {

inline std::vector<Tensor> collect_grads(Tape& tape, const std::vector<Var>& vars) {
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (Var v : vars) out.push_back(tape.grad(v));
  return out;
}

}  // namespace detail

/// One concurrent step: a single inner maximization of the robust loss, then
/// simultaneous updates of both models (both gradients taken at the
/// pre-update parameters, against the same perturbation).
inline StepMetrics act_step(const Tensor& x, const Labels& y, ModelParams& G, ModelParams& F,
                            OptimizerState& sG, OptimizerState& sF, const TrainPlan& plan,
                            std::uint64_t attack_seed) {
  Tensor f_clean_logits = forward(F, plan.spec, x);
  Objective inner = [&](Tape& t, Var adv) {
    std::vector<Var> gv = stage_params(t, G, false);
    return act_loss_G(forward_on_tape(t, plan.spec, gv, adv), f_clean_logits, y, plan.alpha)
        .total;
  };
  AttackConfig cfg = plan.attack;
  cfg.seed = attack_seed;
  Tensor delta = pgd(inner, x, cfg);

  Tape t;
  std::vector<Var> gv = stage_params(t, G, true);
  std::vector<Var> fv = stage_params(t, F, true);
  Var g_adv = forward_on_tape(t, plan.spec, gv, t.constant(detail::add_tensors(x, delta)));
  Var f_clean = forward_on_tape(t, plan.spec, fv, t.constant(x));
  LossValue lg = act_loss_G(g_adv, f_clean.value(), y, plan.alpha);
  LossValue lf = act_loss_F(f_clean, g_adv.value(), y, plan.alpha);
  t.backward(t.add(lg.total, lf.total));
  std::vector<Tensor> grads_G = detail::collect_grads(t, gv);
  std::vector<Tensor> grads_F = detail::collect_grads(t, fv);
  sgd_momentum_step(G, grads_G, sG);
  sgd_momentum_step(F, grads_F, sF);
  return {lg.value(), lg.term("task"),    lg.term("mimicry"),
          lf.value(), lf.term("task"),    lf.term("mimicry")};
}

inline StepMetrics madry_step(const Tensor& x, const Labels& y, ModelParams& G,
                              OptimizerState& sG, const TrainPlan& plan,
                              std::uint64_t attack_seed) {
  Objective inner = [&](Tape& t, Var adv) {
    std::vector<Var> gv = stage_params(t, G, false);
    return cross_entropy(forward_on_tape(t, plan.spec, gv, adv), y).total;
  };
  AttackConfig cfg = plan.attack;
  cfg.seed = attack_seed;
  Tensor delta = pgd(inner, x, cfg);

  Tape t;
  std::vector<Var> gv = stage_params(t, G, true);
  Var g_adv = forward_on_tape(t, plan.spec, gv, t.constant(detail::add_tensors(x, delta)));
  LossValue loss = madry_loss(g_adv, y);
  t.backward(loss.total);
  std::vector<Tensor> grads = detail::collect_grads(t, gv);
  sgd_momentum_step(G, grads, sG);
  return {loss.value(), loss.term("task"), 0.0, 0.0, 0.0, 0.0};
}

inline StepMetrics trades_step(const Tensor& x, const Labels& y, ModelParams& G,
                               OptimizerState& sG, const TrainPlan& plan,
                               std::uint64_t attack_seed) {
  Tensor clean_logits = forward(G, plan.spec, x);
  Objective inner = [&](Tape& t, Var adv) {
    std::vector<Var> gv = stage_params(t, G, false);
    return kl_divergence(clean_logits, forward_on_tape(t, plan.spec, gv, adv)).total;
  };
  AttackConfig cfg = plan.attack;
  cfg.seed = attack_seed;
  Tensor delta = pgd(inner, x, cfg);

  Tape t;
  std::vector<Var> gv = stage_params(t, G, true);
  Var clean = forward_on_tape(t, plan.spec, gv, t.constant(x));
  Var adv = forward_on_tape(t, plan.spec, gv, t.constant(detail::add_tensors(x, delta)));
  LossValue loss = trades_loss(clean, adv, y, plan.inv_lambda);
  t.backward(loss.total);
  std::vector<Tensor> grads = detail::collect_grads(t, gv);
  sgd_momentum_step(G, grads, sG);
  return {loss.value(), loss.term("task"), loss.term("mimicry"), 0.0, 0.0, 0.0};
}

inline StepMetrics standard_step(const Tensor& x, const Labels& y, ModelParams& G,
                                 OptimizerState& sG, const TrainPlan& plan) {
  Tape t;
  std::vector<Var> gv = stage_params(t, G, true);
  LossValue loss = cross_entropy(forward_on_tape(t, plan.spec, gv, t.constant(x)), y);
  t.backward(loss.total);
  std::vector<Tensor> grads = detail::collect_grads(t, gv);
  sgd_momentum_step(G, grads, sG);
  return {loss.value(), loss.term("task"), 0.0, 0.0, 0.0, 0.0};
}

/// Accuracy of argmax predictions on clean inputs, evaluated in fixed chunks.
inline double clean_accuracy(const ModelParams& p, const ModelSpec& spec, const Tensor& x,
                             const Labels& y) {
  std::size_t n = x.dim(0);
  check_labels(y, n, spec.num_classes);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    std::size_t stop = std::min(n, start + kEvalChunk);
    std::vector<std::size_t> rows(stop - start);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = start + i;
    std::vector<std::size_t> pred = argmax_rows(forward(p, spec, take_rows(x, rows)));
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == y[start + i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

/// A robust accuracy of -1 means the epoch skipped the (optional) attack eval.
struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  StepMetrics mean;
  double clean_acc_G = 0.0;
  double clean_acc_F = -1.0;
  double robust_acc_G = -1.0;
};

struct TrainResult {
  ModelParams G;
  ModelParams F;
  bool has_F = false;
  std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

inline TrainResult train(const TrainPlan& plan, const Dataset& data, std::uint64_t seed,
                         const EpochCallback& on_epoch = nullptr) {
  plan.validate();
  data.validate();
  if (data.num_classes != plan.spec.num_classes)
    throw std::invalid_argument("train: dataset has " + std::to_string(data.num_classes) +
                                " classes, model expects " +
                                std::to_string(plan.spec.num_classes));
  TrainResult res;
  res.G = init(plan.spec, rng::derive(seed, rng::kInitRobust));
  res.has_F = plan.method == Method::kAct;
  if (res.has_F) res.F = init(plan.spec, rng::derive(seed, rng::kInitNatural));

  OptimizerState sG = OptimizerState::mirror(res.G, lr_at(0, plan), plan.momentum);
  OptimizerState sF =
      res.has_F ? OptimizerState::mirror(res.F, lr_at(0, plan), plan.momentum) : OptimizerState{};

  std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng::Stream shuffle_stream(rng::derive(seed, rng::kShuffle));

  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    double lr = lr_at(epoch, plan);
    sG.lr = lr;
    sF.lr = lr;
    rng::shuffle(order, shuffle_stream);

    StepMetrics sums;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < n; start += plan.batch_size, ++steps) {
      std::size_t stop = std::min(n, start + plan.batch_size);
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(stop));
      Tensor bx = take_rows(data.inputs, rows);
      Labels by;
      by.reserve(rows.size());
      for (std::size_t r : rows) by.push_back(data.labels[r]);
      if (plan.augment_pad > 0 || plan.augment_flip)
        bx = augment(bx, plan.augment_pad, plan.augment_flip,
                     rng::derive(seed, rng::kAugment, epoch, steps));

      std::uint64_t aseed = rng::derive(seed, rng::kAttack, epoch, steps);
      StepMetrics m;
      switch (plan.method) {
        case Method::kAct: m = act_step(bx, by, res.G, res.F, sG, sF, plan, aseed); break;
        case Method::kMadry: m = madry_step(bx, by, res.G, sG, plan, aseed); break;
        case Method::kTrades: m = trades_step(bx, by, res.G, sG, plan, aseed); break;
        case Method::kStandard: m = standard_step(bx, by, res.G, sG, plan); break;
      }
      sums.loss_G += m.loss_G;
      sums.task_G += m.task_G;
      sums.mimicry_G += m.mimicry_G;
      sums.loss_F += m.loss_F;
      sums.task_F += m.task_F;
      sums.mimicry_F += m.mimicry_F;
    }

    EpochStats es;
    es.epoch = epoch;
    es.lr = lr;
    double inv = 1.0 / static_cast<double>(steps);
    es.mean = {sums.loss_G * inv, sums.task_G * inv, sums.mimicry_G * inv,
               sums.loss_F * inv, sums.task_F * inv, sums.mimicry_F * inv};
    es.clean_acc_G = clean_accuracy(res.G, plan.spec, data.inputs, data.labels);
    if (res.has_F) es.clean_acc_F = clean_accuracy(res.F, plan.spec, data.inputs, data.labels);
    if (plan.eval_every > 0 && (epoch + 1) % plan.eval_every == 0) {
      AttackConfig ecfg = plan.eval_attack;
      ecfg.seed = rng::derive(seed, rng::kEval, epoch);
      es.robust_acc_G = robust_fraction(res.G, plan.spec, data.inputs, data.labels, ecfg);
    }
    res.history.push_back(es);
    if (on_epoch) on_epoch(es);
  }
  return res;
}

}  // namespace actlab
