#pragma once

// Small classifier architectures: an MLP for low-dimensional data and a
// two-conv / two-dense ConvNet for square images. Parameters are named,
// ordered tensors so checkpoints and optimizer state can mirror them.

#include <cstdint>
#include <string>
#include <vector>

#include "actlab/rng.hpp"
#include "actlab/tape.hpp"
#include "actlab/tensor.hpp"

namespace actlab {

enum class Arch { kMlp, kSmallConvnet };

struct ModelSpec {
  Arch arch = Arch::kMlp;
  Shape input_shape;                        // per-example shape: {d} or {C,H,W}
  std::size_t num_classes = 2;
  std::vector<std::size_t> hidden;          // dense hidden widths
  std::vector<std::size_t> conv_channels;   // convnet conv output channels
  std::vector<std::size_t> kernel_sizes;    // convnet kernel sizes (odd)

  /// widths = [input, hidden..., classes]; at least input and output.
  static ModelSpec mlp(const std::vector<std::size_t>& widths) {
    if (widths.size() < 2) throw std::invalid_argument("mlp: need at least [in, out] widths");
    for (std::size_t w : widths)
      if (w == 0) throw std::invalid_argument("mlp: zero layer width");
    ModelSpec s;
    s.arch = Arch::kMlp;
    s.input_shape = {widths.front()};
    s.num_classes = widths.back();
    s.hidden.assign(widths.begin() + 1, widths.end() - 1);
    if (s.num_classes < 2) throw std::invalid_argument("mlp: need at least 2 classes");
    return s;
  }

  /// Conv(k, same-pad) -> relu -> pool2, repeated per channel entry, then
  /// dense hidden layers and the classifier head.
  static ModelSpec small_convnet(Shape input_shape, std::size_t num_classes,
                                 std::vector<std::size_t> conv_channels,
                                 std::vector<std::size_t> kernel_sizes,
                                 std::vector<std::size_t> dense_hidden) {
    if (input_shape.size() != 3)
      throw std::invalid_argument("small_convnet: input shape must be {C,H,W}");
    if (conv_channels.empty() || conv_channels.size() != kernel_sizes.size())
      throw std::invalid_argument("small_convnet: conv channel/kernel lists must match");
    std::size_t h = input_shape[1], w = input_shape[2];
    for (std::size_t k : kernel_sizes) {
      if (k == 0 || k % 2 == 0)
        throw std::invalid_argument("small_convnet: kernel sizes must be odd");
      if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("small_convnet: spatial dims must halve per block");
      h /= 2;
      w /= 2;
    }
    if (num_classes < 2) throw std::invalid_argument("small_convnet: need at least 2 classes");
    ModelSpec s;
    s.arch = Arch::kSmallConvnet;
    s.input_shape = std::move(input_shape);
    s.num_classes = num_classes;
    s.conv_channels = std::move(conv_channels);
    s.kernel_sizes = std::move(kernel_sizes);
    s.hidden = std::move(dense_hidden);
    return s;
  }

  std::size_t input_dim() const { return shape_numel(input_shape); }

  /// Flattened width entering the dense stack.
  std::size_t flat_after_convs() const {
    if (arch == Arch::kMlp) return input_dim();
    std::size_t h = input_shape[1], w = input_shape[2];
    for (std::size_t i = 0; i < conv_channels.size(); ++i) {
      h /= 2;
      w /= 2;
    }
    return conv_channels.back() * h * w;
  }

  std::size_t feature_dim() const {
    std::vector<std::size_t> widths = dense_widths();
    return widths[widths.size() - 2];
  }

  /// Dense-stack widths including the flattened input and the class count.
  std::vector<std::size_t> dense_widths() const {
    std::vector<std::size_t> w;
    w.push_back(flat_after_convs());
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(num_classes);
    return w;
  }
};

struct ModelParams {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;
  std::uint64_t rng_seed = 0;

  std::size_t size() const { return tensors.size(); }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw std::out_of_range("no parameter named " + name);
  }

  void add(std::string name, Tensor t) {
    for (const std::string& n : names)
      if (n == name) throw std::invalid_argument("duplicate parameter name " + name);
    names.push_back(std::move(name));
    tensors.push_back(std::move(t));
  }
};

namespace detail {

inline Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, rng::Stream& s) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.data) v = s.uniform(-bound, bound);
  return t;
}

}  // namespace detail

/// Kaiming-uniform fan-in weights, zero biases; draw order is fixed by the
/// parameter order so a given (spec, seed) always yields the same bits.
inline ModelParams init(const ModelSpec& spec, std::uint64_t seed) {
  rng::Stream s(rng::splitmix64(seed));
  ModelParams p;
  p.rng_seed = seed;
  if (spec.arch == Arch::kSmallConvnet) {
    std::size_t in_ch = spec.input_shape[0];
    for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
      std::size_t out_ch = spec.conv_channels[i], k = spec.kernel_sizes[i];
      std::string base = "conv" + std::to_string(i + 1);
      p.add(base + ".weight", detail::kaiming_uniform({out_ch, in_ch, k, k}, in_ch * k * k, s));
      p.add(base + ".bias", Tensor::zeros({out_ch}));
      in_ch = out_ch;
    }
  }
  std::vector<std::size_t> widths = spec.dense_widths();
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    std::string base = "fc" + std::to_string(i + 1);
    p.add(base + ".weight", detail::kaiming_uniform({widths[i + 1], widths[i]}, widths[i], s));
    p.add(base + ".bias", Tensor::zeros({widths[i + 1]}));
  }
  return p;
}

/// Put every parameter on a tape, in order.
inline std::vector<Var> stage_params(Tape& tape, const ModelParams& p, bool requires_grad) {
  std::vector<Var> vars;
  vars.reserve(p.size());
  for (const Tensor& t : p.tensors) vars.push_back(tape.leaf(t, requires_grad));
  return vars;
}

namespace detail {

inline Var batch_input(Tape& tape, const ModelSpec& spec, Var x) {
  const Tensor& X = x.value();
  if (X.rank() < 1) throw ShapeError("forward: input must have a batch dimension");
  std::size_t n = X.dim(0);
  std::size_t per = X.numel() / std::max<std::size_t>(n, 1);
  if (n == 0 || per != spec.input_dim())
    throw ShapeError("forward: input " + shape_str(X.shape) + " does not match example shape " +
                     shape_str(spec.input_shape));
  if (spec.arch == Arch::kMlp) {
    if (X.rank() == 2 && X.dim(1) == spec.input_dim()) return x;
    return tape.reshape(x, {n, spec.input_dim()});
  }
  Shape want = {n, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
  if (X.shape == want) return x;
  return tape.reshape(x, want);
}

inline Var forward_impl(Tape& tape, const ModelSpec& spec, const std::vector<Var>& params, Var x,
                        bool stop_before_head) {
  Var h = batch_input(tape, spec, x);
  std::size_t pi = 0;
  if (spec.arch == Arch::kSmallConvnet) {
    for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
      std::size_t pad = (spec.kernel_sizes[i] - 1) / 2;
      h = tape.conv2d(h, params[pi], 1, pad);
      h = tape.add_bias(h, params[pi + 1]);
      h = tape.relu(h);
      h = tape.maxpool2(h);
      pi += 2;
    }
    h = tape.reshape(h, {h.value().dim(0), spec.flat_after_convs()});
  }
  std::vector<std::size_t> widths = spec.dense_widths();
  std::size_t dense_layers = widths.size() - 1;
  for (std::size_t i = 0; i < dense_layers; ++i) {
    bool last = i + 1 == dense_layers;
    if (last && stop_before_head) return h;
    h = tape.matmul(h, tape.transpose(params[pi]));
    h = tape.add_bias(h, params[pi + 1]);
    pi += 2;
    if (!last) h = tape.relu(h);
  }
  return h;
}

}  // namespace detail

/// Logits [N, C] on the given tape; differentiable wrt both params and x.
inline Var forward_on_tape(Tape& tape, const ModelSpec& spec, const std::vector<Var>& params,
                           Var x) {
  return detail::forward_impl(tape, spec, params, x, false);
}

/// Convenience evaluation without gradient tracking.
inline Tensor forward(const ModelParams& p, const ModelSpec& spec, const Tensor& x) {
  Tape tape;
  std::vector<Var> params = stage_params(tape, p, false);
  return forward_on_tape(tape, spec, params, tape.constant(x)).value();
}

/// Penultimate activations (input to the classifier head), no gradients.
inline Tensor features(const ModelParams& p, const ModelSpec& spec, const Tensor& x) {
  Tape tape;
  std::vector<Var> params = stage_params(tape, p, false);
  return detail::forward_impl(tape, spec, params, tape.constant(x), true).value();
}

/// One (layer name, Frobenius norm) entry per weight tensor; biases excluded.
inline std::vector<std::pair<std::string, double>> frobenius_norms(const ModelParams& p) {
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const std::string& name = p.names[i];
    if (name.size() >= 7 && name.compare(name.size() - 7, 7, ".weight") == 0) {
      double sq = 0.0;
      for (double v : p.tensors[i].data) sq += v * v;
      out.emplace_back(name, std::sqrt(sq));
    }
  }
  return out;
}

}  // namespace actlab
