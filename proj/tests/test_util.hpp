#pragma once

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "actlab/actlab.hpp"

namespace actlab::test {

inline Tensor random_tensor(const Shape& shape, rng::Stream& s, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.data) v = s.uniform(lo, hi);
  return t;
}

/// Random tensor with every coordinate at least `margin` away from zero, so
/// finite differences never straddle a relu kink.
inline Tensor random_tensor_away_from_zero(const Shape& shape, rng::Stream& s, double margin) {
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.data) {
    double mag = s.uniform(margin, 1.0);
    v = s.coin() ? mag : -mag;
  }
  return t;
}

inline bool bits_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    if (std::memcmp(&a.data[i], &b.data[i], sizeof(double)) != 0) return false;
  }
  return true;
}

inline bool bits_equal(const ModelParams& a, const ModelParams& b) {
  if (a.names != b.names) return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    if (!bits_equal(a.tensors[i], b.tensors[i])) return false;
  return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape == b.shape);
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

/// Well-separated 2-D blobs for quick end-to-end checks.
inline Dataset quick_blobs(std::size_t n_per_class, double sigma = 0.08,
                           std::uint64_t seed = 42) {
  return synth_gaussians(n_per_class, {{0.3, 0.3}, {0.7, 0.7}}, sigma, seed);
}

inline TrainPlan quick_plan(Method method, const ModelSpec& spec) {
  TrainPlan plan;
  plan.method = method;
  plan.spec = spec;
  plan.epochs = 10;
  plan.batch_size = 32;
  plan.lr0 = 0.1;
  plan.momentum = 0.9;
  plan.attack.budget.epsilon = 0.1;
  plan.attack.steps = 5;
  plan.attack.step_size = 0.05;
  plan.eval_attack.budget.epsilon = 0.1;
  plan.eval_attack.steps = 5;
  plan.eval_attack.step_size = 0.05;
  plan.eval_attack.restarts = 1;
  return plan;
}

}  // namespace actlab::test
