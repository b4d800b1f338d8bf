#pragma once

// Datasets: synthetic Gaussian blobs for the 2-D toy suite, IDX image files
// for everything else, and the reflect-pad/crop/flip augmentation.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "actlab/ioutil.hpp"
#include "actlab/objectives.hpp"
#include "actlab/rng.hpp"
#include "actlab/tensor.hpp"

namespace actlab {

struct Dataset {
  Tensor inputs;  // [N, ...]
  Labels labels;
  std::size_t num_classes = 2;
  std::string split;
  std::string provenance;

  std::size_t size() const { return inputs.rank() == 0 ? 0 : inputs.dim(0); }

  void validate() const {
    if (inputs.rank() < 1 || inputs.dim(0) == 0)
      throw std::invalid_argument("dataset: needs at least one example");
    check_labels(labels, inputs.dim(0), num_classes);
  }

  /// Loaders call this; derived feature sets (unbounded values) do not.
  void validate_unit_range() const {
    validate();
    for (double v : inputs.data)
      if (!(v >= 0.0 && v <= 1.0))
        throw std::invalid_argument("dataset: input value " + format_double(v) +
                                    " outside [0,1]");
  }

  Dataset take(const std::vector<std::size_t>& rows) const {
    Dataset d;
    d.inputs = take_rows(inputs, rows);
    d.labels.reserve(rows.size());
    for (std::size_t r : rows) d.labels.push_back(labels.at(r));
    d.num_classes = num_classes;
    d.split = split;
    d.provenance = provenance;
    return d;
  }
};

/// Seeded 2-D Gaussian blobs, one per mean, clipped to the unit square.
inline Dataset synth_gaussians(std::size_t n_per_class,
                               const std::vector<std::pair<double, double>>& means, double sigma,
                               std::uint64_t seed) {
  if (n_per_class == 0) throw std::invalid_argument("synth_gaussians: n_per_class must be >= 1");
  if (means.size() < 2) throw std::invalid_argument("synth_gaussians: need at least 2 classes");
  if (!(sigma >= 0.0)) throw std::invalid_argument("synth_gaussians: sigma must be >= 0");
  for (std::size_t a = 0; a < means.size(); ++a)
    for (std::size_t b = a + 1; b < means.size(); ++b)
      if (means[a] == means[b])
        throw std::invalid_argument("synth_gaussians: class means must be distinct");
  std::size_t n = n_per_class * means.size();
  Dataset d;
  d.inputs = Tensor::zeros({n, 2});
  d.labels.resize(n);
  d.num_classes = means.size();
  rng::Stream s(rng::derive(seed, rng::kData));
  std::size_t row = 0;
  for (std::size_t k = 0; k < means.size(); ++k) {
    for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
      double x = means[k].first + sigma * s.normal();
      double y = means[k].second + sigma * s.normal();
      d.inputs.data[row * 2] = std::min(1.0, std::max(0.0, x));
      d.inputs.data[row * 2 + 1] = std::min(1.0, std::max(0.0, y));
      d.labels[row] = k;
    }
  }
  d.provenance = "synth_gaussians(n_per_class=" + std::to_string(n_per_class) +
                 ",sigma=" + format_double(sigma) + ",seed=" + std::to_string(seed) + ")";
  d.validate_unit_range();
  return d;
}

namespace detail {

inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  // Mirror without repeating the edge sample: -1 -> 1, n -> n-2.
  if (i < 0) i = -i;
  if (i >= static_cast<std::ptrdiff_t>(n)) i = 2 * static_cast<std::ptrdiff_t>(n) - 2 - i;
  return static_cast<std::size_t>(i);
}

}  // namespace detail

/// Reflect-pad, random-crop back to size, and (optionally) flip horizontally
/// with probability 1/2. One seeded stream, examples in order.
inline Tensor augment(const Tensor& batch, std::size_t pad, bool flip_enabled,
                      std::uint64_t seed) {
  if (batch.rank() != 4)
    throw ShapeError("augment: need [N,C,H,W] images, got " + shape_str(batch.shape));
  std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  if (pad >= h || pad >= w)
    throw std::invalid_argument("augment: pad " + std::to_string(pad) +
                                " must be smaller than image dims " + shape_str(batch.shape));
  Tensor out = Tensor::zeros(batch.shape);
  rng::Stream s(rng::derive(seed, rng::kAugment));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t oy = pad == 0 ? 0 : s.below(2 * pad + 1);
    std::size_t ox = pad == 0 ? 0 : s.below(2 * pad + 1);
    bool flip = flip_enabled && s.coin();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y) {
        std::size_t sy = detail::reflect_index(
            static_cast<std::ptrdiff_t>(y + oy) - static_cast<std::ptrdiff_t>(pad), h);
        for (std::size_t x = 0; x < w; ++x) {
          std::size_t xx = flip ? w - 1 - x : x;
          std::size_t sx = detail::reflect_index(
              static_cast<std::ptrdiff_t>(xx + ox) - static_cast<std::ptrdiff_t>(pad), w);
          out.data[((i * c + ch) * h + y) * w + x] = batch.data[((i * c + ch) * h + sy) * w + sx];
        }
      }
  }
  return out;
}

// IDX container: big-endian magic, dimension sizes, raw uint8 payload.
// Images use magic 0x00000803 with dims (N, H, W); labels 0x00000801 with (N).

namespace detail {

inline std::uint32_t read_be32(const std::string& bytes, std::size_t& off, const char* what) {
  if (off + 4 > bytes.size()) throw IoError(std::string("truncated IDX file reading ") + what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[off + i]);
  off += 4;
  return v;
}

inline void append_be32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Pixels scaled to [0,1] by /255; result shape [N,1,H,W].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::string img = read_file(images_path);
  std::string lab = read_file(labels_path);

  std::size_t off = 0;
  if (detail::read_be32(img, off, "images magic") != kIdxImagesMagic)
    throw IoError(images_path + ": bad IDX images magic");
  std::uint32_t n = detail::read_be32(img, off, "image count");
  std::uint32_t h = detail::read_be32(img, off, "image rows");
  std::uint32_t w = detail::read_be32(img, off, "image cols");
  if (n == 0 || h == 0 || w == 0) throw IoError(images_path + ": empty IDX dimensions");
  std::size_t need = static_cast<std::size_t>(n) * h * w;
  if (img.size() - off != need)
    throw IoError(images_path + ": payload holds " + std::to_string(img.size() - off) +
                  " bytes, header promises " + std::to_string(need));

  std::size_t loff = 0;
  if (detail::read_be32(lab, loff, "labels magic") != kIdxLabelsMagic)
    throw IoError(labels_path + ": bad IDX labels magic");
  std::uint32_t ln = detail::read_be32(lab, loff, "label count");
  if (ln != n)
    throw IoError(labels_path + ": " + std::to_string(ln) + " labels for " + std::to_string(n) +
                  " images");
  if (lab.size() - loff != ln) throw IoError(labels_path + ": truncated label payload");

  Dataset d;
  d.inputs = Tensor::zeros({n, 1, h, w});
  for (std::size_t i = 0; i < need; ++i)
    d.inputs.data[i] = static_cast<unsigned char>(img[off + i]) / 255.0;
  d.labels.resize(n);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = static_cast<unsigned char>(lab[loff + i]);
    max_label = std::max(max_label, d.labels[i]);
  }
  d.num_classes = std::max<std::size_t>(max_label + 1, 2);
  d.provenance = "idx:" + hex64(fnv1a64(img)) + ":" + hex64(fnv1a64(lab));
  d.validate_unit_range();
  return d;
}

/// Inverse of load_idx; values are written as round(v*255).
inline void save_idx(const Dataset& d, const std::string& images_path,
                     const std::string& labels_path) {
  if (d.inputs.rank() != 4 || d.inputs.dim(1) != 1)
    throw ShapeError("save_idx: need [N,1,H,W] inputs, got " + shape_str(d.inputs.shape));
  std::uint32_t n = static_cast<std::uint32_t>(d.inputs.dim(0));
  std::uint32_t h = static_cast<std::uint32_t>(d.inputs.dim(2));
  std::uint32_t w = static_cast<std::uint32_t>(d.inputs.dim(3));

  std::string img;
  detail::append_be32(img, kIdxImagesMagic);
  detail::append_be32(img, n);
  detail::append_be32(img, h);
  detail::append_be32(img, w);
  for (double v : d.inputs.data) {
    double clipped = std::min(1.0, std::max(0.0, v));
    img.push_back(static_cast<char>(static_cast<unsigned char>(std::llround(clipped * 255.0))));
  }

  std::string lab;
  detail::append_be32(lab, kIdxLabelsMagic);
  detail::append_be32(lab, n);
  for (std::size_t y : d.labels) {
    if (y > 255) throw IoError("save_idx: label " + std::to_string(y) + " exceeds uint8");
    lab.push_back(static_cast<char>(static_cast<unsigned char>(y)));
  }

  write_file_atomic(images_path, img);
  write_file_atomic(labels_path, lab);
}

}  // namespace actlab
