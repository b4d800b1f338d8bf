#pragma once

// Training losses. Every loss returns its scalar on the tape plus a named
// decomposition of plain values for logging; the decomposition entries are
// read back from the actual tape nodes so they sum to the total exactly.
//
// KL terms always treat the reference distribution as a constant: the
// reference enters as a plain Tensor, never as a differentiable node. The
// learner-side term is computed with the same reduction order as the
// reference-side constant, so KL(p‖p) is exactly zero, and a mixing weight
// of zero contributes exact signed zeros to the backward pass (this is what
// makes the α=0 trajectory coincide with plain adversarial training bitwise).

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "actlab/tape.hpp"
#include "actlab/tensor.hpp"

namespace actlab {

using Labels = std::vector<std::size_t>;

struct LossValue {
  Var total;
  std::vector<std::pair<std::string, double>> terms;

  double value() const { return total.value().data[0]; }

  double term(const std::string& name) const {
    for (const auto& [n, v] : terms)
      if (n == name) return v;
    throw std::out_of_range("no loss term named " + name);
  }
};

/// Plain (off-tape) rowwise log-softmax; same max-shift algorithm as the tape
/// op so values agree bitwise.
inline Tensor log_softmax_values(const Tensor& logits) {
  if (logits.rank() != 2 || logits.dim(1) < 2)
    throw ShapeError("log_softmax: need [N,C] with C >= 2, got " + shape_str(logits.shape));
  std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor out = Tensor::zeros({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    double m = logits.data[i * c];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, logits.data[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(logits.data[i * c + j] - m);
    double lz = std::log(z);
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = logits.data[i * c + j] - m - lz;
  }
  return out;
}

inline Tensor softmax_values(const Tensor& logits) {
  Tensor p = log_softmax_values(logits);
  for (double& v : p.data) v = std::exp(v);
  return p;
}

inline std::vector<std::size_t> argmax_rows(const Tensor& rows) {
  if (rows.rank() != 2) throw ShapeError("argmax_rows: need rank 2, got " + shape_str(rows.shape));
  std::size_t n = rows.dim(0), c = rows.dim(1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (rows.data[i * c + j] > rows.data[i * c + best]) best = j;
    out[i] = best;
  }
  return out;
}

inline void check_labels(const Labels& labels, std::size_t n, std::size_t c) {
  if (labels.size() != n)
    throw std::invalid_argument("labels: expected " + std::to_string(n) + " entries, got " +
                                std::to_string(labels.size()));
  for (std::size_t y : labels)
    if (y >= c)
      throw std::invalid_argument("labels: class " + std::to_string(y) + " out of range [0," +
                                  std::to_string(c) + ")");
}

/// Mean over the batch of -log p(label).
inline LossValue cross_entropy(Var logits, const Labels& labels) {
  Tape& t = *logits.tape();
  const Tensor& L = logits.value();
  if (L.rank() != 2) throw ShapeError("cross_entropy: need [N,C], got " + shape_str(L.shape));
  check_labels(labels, L.dim(0), L.dim(1));
  // Copy the batch size now: recording ops below may grow the tape and move
  // the node storage L refers into.
  std::size_t n = L.dim(0);
  Var lp = t.log_softmax(logits);
  Var total = t.scale(t.sum(t.pick(lp, labels)), -1.0 / static_cast<double>(n));
  return LossValue{total, {{"task", total.value().data[0]}}};
}

/// Mean over the batch of sum_c p_ref (log p_ref - log p_learner). The
/// reference is constant; gradients reach only the learner logits.
inline LossValue kl_divergence(const Tensor& reference_logits, Var learner_logits) {
  Tape& t = *learner_logits.tape();
  const Tensor& Q = learner_logits.value();
  ensure_same_shape(reference_logits, Q, "kl_divergence");
  if (Q.rank() != 2) throw ShapeError("kl_divergence: need [N,C], got " + shape_str(Q.shape));
  std::size_t n = Q.dim(0), c = Q.dim(1);
  double inv_n = 1.0 / static_cast<double>(n);

  Tensor lp = log_softmax_values(reference_logits);
  Tensor p = lp;
  for (double& v : p.data) v = std::exp(v);

  // Reference entropy term, accumulated row-by-row exactly like the tape-side
  // rowdot/sum pair below so identical logits cancel to exactly zero.
  double ref_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += p.data[i * c + j] * lp.data[i * c + j];
    ref_sum += acc;
  }

  Var lq = t.log_softmax(learner_logits);
  Var cross = t.scale(t.sum(t.rowdot(lq, p)), -inv_n);
  Var total = t.add_const(cross, Tensor::scalar(ref_sum * inv_n));
  return LossValue{total, {{"mimicry", total.value().data[0]}}};
}

inline void check_mix_weight(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("alpha must lie in [0,1], got " + std::to_string(alpha));
}

namespace detail {

inline LossValue mix(Var a, double wa, const char* name_a, Var b, double wb, const char* name_b) {
  Tape& t = *a.tape();
  Var sa = t.scale(a, wa);
  Var sb = t.scale(b, wb);
  Var total = t.add(sa, sb);
  return LossValue{total, {{name_a, sa.value().data[0]}, {name_b, sb.value().data[0]}}};
}

}  // namespace detail

/// (1-α)·CE(G(x+δ), y) + α·KL(F(x) ‖ G(x+δ)); F's distribution is constant.
inline LossValue act_loss_G(Var g_adv_logits, const Tensor& f_clean_logits, const Labels& labels,
                            double alpha) {
  check_mix_weight(alpha);
  LossValue ce = cross_entropy(g_adv_logits, labels);
  LossValue kl = kl_divergence(f_clean_logits, g_adv_logits);
  return detail::mix(ce.total, 1.0 - alpha, "task", kl.total, alpha, "mimicry");
}

/// (1-α)·CE(F(x), y) + α·KL(G(x+δ) ‖ F(x)); G's distribution is constant.
inline LossValue act_loss_F(Var f_clean_logits, const Tensor& g_adv_logits, const Labels& labels,
                            double alpha) {
  check_mix_weight(alpha);
  LossValue ce = cross_entropy(f_clean_logits, labels);
  LossValue kl = kl_divergence(g_adv_logits, f_clean_logits);
  return detail::mix(ce.total, 1.0 - alpha, "task", kl.total, alpha, "mimicry");
}

/// Cross-entropy on adversarial logits.
inline LossValue madry_loss(Var g_adv_logits, const Labels& labels) {
  return cross_entropy(g_adv_logits, labels);
}

/// CE(clean, y) + inv_lambda·KL(clean ‖ adv); the clean distribution is the
/// constant reference of the KL while the clean CE term stays differentiable.
inline LossValue trades_loss(Var clean_logits, Var adv_logits, const Labels& labels,
                             double inv_lambda) {
  if (!(inv_lambda >= 0.0))
    throw std::invalid_argument("inv_lambda must be >= 0, got " + std::to_string(inv_lambda));
  LossValue ce = cross_entropy(clean_logits, labels);
  LossValue kl = kl_divergence(clean_logits.value(), adv_logits);
  return detail::mix(ce.total, 1.0, "task", kl.total, inv_lambda, "mimicry");
}

/// Mean over the batch of -sum_c p log p, in nats.
inline double posterior_entropy(const Tensor& logits) {
  Tensor lp = log_softmax_values(logits);
  std::size_t n = logits.dim(0), c = logits.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double h = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double l = lp.data[i * c + j];
      h -= std::exp(l) * l;
    }
    total += h;
  }
  return total / static_cast<double>(n);
}

}  // namespace actlab
