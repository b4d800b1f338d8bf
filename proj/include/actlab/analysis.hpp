#pragma once

// Evaluation battery: clean/robust accuracy, black-box transfer, the epsilon
// sweep and entropy diagnostics for gradient-obfuscation checks, Frobenius
// reporting, and the random-label compression probe.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "actlab/attacks.hpp"
#include "actlab/data.hpp"
#include "actlab/models.hpp"
#include "actlab/objectives.hpp"
#include "actlab/trainer.hpp"

namespace actlab {

/// Fraction of the dataset still classified correctly after the attack.
inline double robust_accuracy(const ModelParams& params, const ModelSpec& spec,
                              const Dataset& data, const AttackConfig& cfg) {
  data.validate();
  return robust_fraction(params, spec, data.inputs, data.labels, cfg);
}

struct TransferCell {
  std::string surrogate;
  std::string target;
  double success_rate = 0.0;
};

/// Adversarial examples crafted against the surrogate, scored on the target.
/// Success is counted over examples the target classifies correctly when
/// clean; surrogate == target reduces to the white-box success rate.
inline TransferCell blackbox_transfer(const ModelParams& surrogate, const ModelSpec& sur_spec,
                                      const std::string& surrogate_id, const ModelParams& target,
                                      const ModelSpec& tgt_spec, const std::string& target_id,
                                      const Dataset& data, const AttackConfig& cfg) {
  data.validate();
  if (sur_spec.num_classes != tgt_spec.num_classes)
    throw std::invalid_argument("transfer: surrogate has " +
                                std::to_string(sur_spec.num_classes) + " classes, target " +
                                std::to_string(tgt_spec.num_classes));
  if (sur_spec.input_shape != tgt_spec.input_shape)
    throw std::invalid_argument("transfer: surrogate input " + shape_str(sur_spec.input_shape) +
                                " does not match target input " + shape_str(tgt_spec.input_shape));
  std::size_t n = data.size();
  Forward sur_predict = model_forward(surrogate, sur_spec);
  std::size_t denom = 0, hits = 0;
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    std::size_t stop = std::min(n, start + kEvalChunk);
    std::vector<std::size_t> rows(stop - start);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = start + i;
    Tensor cx = take_rows(data.inputs, rows);
    Labels cy(data.labels.begin() + static_cast<std::ptrdiff_t>(start),
              data.labels.begin() + static_cast<std::ptrdiff_t>(stop));
    AttackConfig ccfg = cfg;
    ccfg.seed = rng::derive(cfg.seed, rng::kEval, static_cast<std::uint64_t>(start));
    AttackObjective obj = ce_attack_objective(surrogate, sur_spec, cy);
    AttackResult r = multi_restart_attack(obj, sur_predict, cx, cy, ccfg);
    std::vector<std::size_t> clean_pred = argmax_rows(forward(target, tgt_spec, cx));
    std::vector<std::size_t> adv_pred =
        argmax_rows(forward(target, tgt_spec, detail::add_tensors(cx, r.delta)));
    for (std::size_t i = 0; i < cy.size(); ++i) {
      if (clean_pred[i] != cy[i]) continue;
      ++denom;
      if (adv_pred[i] != cy[i]) ++hits;
    }
  }
  TransferCell cell{surrogate_id, target_id, 0.0};
  if (denom > 0) cell.success_rate = static_cast<double>(hits) / static_cast<double>(denom);
  return cell;
}

/// Robust accuracy at each epsilon; steps scale as 2.5*eps/K.
inline std::vector<std::pair<double, double>> epsilon_sweep(const ModelParams& params,
                                                            const ModelSpec& spec,
                                                            const Dataset& data,
                                                            const std::vector<double>& eps_list,
                                                            std::size_t K,
                                                            const AttackConfig& cfg_template) {
  for (std::size_t i = 1; i < eps_list.size(); ++i)
    if (!(eps_list[i] > eps_list[i - 1]))
      throw std::invalid_argument("epsilon_sweep: eps_list must be sorted ascending");
  std::size_t steps = std::max<std::size_t>(K, 1);
  std::vector<std::pair<double, double>> out;
  out.reserve(eps_list.size());
  for (double eps : eps_list) {
    if (!(eps >= 0.0)) throw std::invalid_argument("epsilon_sweep: negative epsilon");
    AttackConfig cfg = cfg_template;
    cfg.steps = K;
    cfg.budget.epsilon = eps;
    cfg.step_size = 2.5 * eps / static_cast<double>(steps);
    out.emplace_back(eps, robust_accuracy(params, spec, data, cfg));
  }
  return out;
}

/// Mean posterior entropy over every sample, in nats; lies in [0, ln C].
inline double entropy_report(const ModelParams& params, const ModelSpec& spec,
                             const Dataset& data) {
  data.validate();
  std::size_t n = data.size();
  double total = 0.0;
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    std::size_t stop = std::min(n, start + kEvalChunk);
    std::vector<std::size_t> rows(stop - start);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = start + i;
    Tensor lp = log_softmax_values(forward(params, spec, take_rows(data.inputs, rows)));
    std::size_t c = lp.dim(1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double h = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        double l = lp.data[i * c + j];
        h -= std::exp(l) * l;
      }
      total += h;
    }
  }
  return total / static_cast<double>(n);
}

struct ProbeConfig {
  std::vector<std::size_t> widths{400, 200};
  std::size_t epochs = 80;
  std::size_t batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  std::uint64_t label_seed = 0;
};

/// Fixed random binary labels from the probe's seed.
inline Labels random_binary_labels(std::size_t n, std::uint64_t label_seed) {
  rng::Stream s(rng::derive(label_seed, rng::kLabels));
  Labels y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = s.coin() ? 1 : 0;
  return y;
}

/// Probe over an explicit feature matrix [N, D]; the model-based overload
/// and tests share this path.
inline std::vector<double> compression_probe_on_features(const Tensor& feats,
                                                         const ProbeConfig& probe) {
  if (feats.rank() != 2)
    throw ShapeError("compression_probe: features must be [N,D], got " + shape_str(feats.shape));
  std::size_t n = feats.dim(0);
  Dataset probe_data;
  probe_data.inputs = feats;
  probe_data.labels = random_binary_labels(n, probe.label_seed);
  probe_data.num_classes = 2;
  probe_data.split = "probe";
  probe_data.provenance = "frozen-features";

  std::vector<std::size_t> widths;
  widths.push_back(feats.dim(1));
  widths.insert(widths.end(), probe.widths.begin(), probe.widths.end());
  widths.push_back(2);

  TrainPlan plan;
  plan.method = Method::kStandard;
  plan.epochs = probe.epochs;
  plan.batch_size = probe.batch_size;
  plan.lr0 = probe.lr;
  plan.momentum = probe.momentum;
  plan.spec = ModelSpec::mlp(widths);
  TrainResult run = train(plan, probe_data, rng::derive(probe.label_seed, rng::kProbe));
  std::vector<double> curve;
  curve.reserve(run.history.size());
  for (const EpochStats& es : run.history) curve.push_back(es.clean_acc_G);
  return curve;
}

/// Freeze the model's penultimate representation, assign seeded random binary
/// labels, fit a small MLP on them, and report the fit accuracy per epoch.
/// Lower final accuracy means the representation compresses away the
/// information needed to memorize noise.
inline std::vector<double> compression_probe(const ModelParams& params, const ModelSpec& spec,
                                             const Dataset& data, const ProbeConfig& probe) {
  data.validate();
  Tensor feats = features(params, spec, data.inputs);
  return compression_probe_on_features(feats, probe);
}

}  // namespace actlab
