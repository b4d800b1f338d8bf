#pragma once

// Checkpoint container, bit-exact by construction:
//
//   magic "ACTLABCK" | u32 version | spec json | meta json
//   | u32 tensor count | per tensor: name, dtype, shape, f64 payload
//   | u64 FNV-1a digest of everything above
//
// All scalars little-endian; length-prefixed strings; payloads are the raw
// IEEE-754 bits, so save/load/save reproduces files byte for byte.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "actlab/ioutil.hpp"
#include "actlab/models.hpp"

namespace actlab {

inline constexpr char kCheckpointMagic[8] = {'A', 'C', 'T', 'L', 'A', 'B', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string method;       // act / madry / trades / standard
  std::string role;         // robust / natural
  std::string plan_digest;  // hex digest of the originating config
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
};

struct Checkpoint {
  ModelSpec spec;
  ModelParams params;
  CheckpointMeta meta;
};

inline nlohmann::json spec_to_json(const ModelSpec& s) {
  nlohmann::json j;
  j["arch"] = s.arch == Arch::kMlp ? "mlp" : "small_convnet";
  j["input_shape"] = s.input_shape;
  j["num_classes"] = s.num_classes;
  j["hidden"] = s.hidden;
  j["conv_channels"] = s.conv_channels;
  j["kernel_sizes"] = s.kernel_sizes;
  return j;
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  std::string arch = j.at("arch").get<std::string>();
  if (arch == "mlp") s.arch = Arch::kMlp;
  else if (arch == "small_convnet") s.arch = Arch::kSmallConvnet;
  else throw IoError("unknown architecture '" + arch + "' in checkpoint");
  s.input_shape = j.at("input_shape").get<Shape>();
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  s.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
  s.kernel_sizes = j.at("kernel_sizes").get<std::vector<std::size_t>>();
  return s;
}

namespace detail {

inline void append_string(std::string& out, const std::string& s) {
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

inline std::string read_string(const std::string& bytes, std::size_t& off, const char* what) {
  std::uint32_t len = read_le<std::uint32_t>(bytes, off, what);
  if (off + len > bytes.size()) throw IoError(std::string("truncated file while reading ") + what);
  std::string s = bytes.substr(off, len);
  off += len;
  return s;
}

}  // namespace detail

inline std::string checkpoint_bytes(const Checkpoint& c) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  append_le<std::uint32_t>(out, kCheckpointVersion);
  detail::append_string(out, spec_to_json(c.spec).dump());
  nlohmann::json meta;
  meta["method"] = c.meta.method;
  meta["role"] = c.meta.role;
  meta["plan_digest"] = c.meta.plan_digest;
  meta["seed"] = c.meta.seed;
  meta["epoch"] = c.meta.epoch;
  meta["init_seed"] = c.params.rng_seed;
  detail::append_string(out, meta.dump());
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.params.size()));
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    detail::append_string(out, c.params.names[i]);
    detail::append_string(out, "f64");
    const Tensor& t = c.params.tensors[i];
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape) append_le<std::uint64_t>(out, d);
    for (double v : t.data) append_le<double>(out, v);
  }
  append_le<std::uint64_t>(out, fnv1a64(out));
  return out;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  write_file_atomic(path, checkpoint_bytes(c));
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < sizeof(kCheckpointMagic) + 12)
    throw IoError(origin + ": too short to be a checkpoint");
  if (bytes.compare(0, sizeof(kCheckpointMagic), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw IoError(origin + ": bad checkpoint magic");

  std::size_t digest_off = bytes.size() - 8;
  std::size_t tmp = digest_off;
  std::uint64_t stored = read_le<std::uint64_t>(bytes, tmp, "digest");
  std::uint64_t actual = fnv1a64(bytes.data(), digest_off);
  if (stored != actual)
    throw IoError(origin + ": digest mismatch (stored " + hex64(stored) + ", computed " +
                  hex64(actual) + ") — file corrupted");

  std::size_t off = sizeof(kCheckpointMagic);
  std::uint32_t version = read_le<std::uint32_t>(bytes, off, "version");
  if (version != kCheckpointVersion)
    throw IoError(origin + ": checkpoint version " + std::to_string(version) + ", expected " +
                  std::to_string(kCheckpointVersion));

  Checkpoint c;
  nlohmann::json spec_j = nlohmann::json::parse(detail::read_string(bytes, off, "spec"));
  c.spec = spec_from_json(spec_j);
  nlohmann::json meta = nlohmann::json::parse(detail::read_string(bytes, off, "meta"));
  c.meta.method = meta.at("method").get<std::string>();
  c.meta.role = meta.at("role").get<std::string>();
  c.meta.plan_digest = meta.at("plan_digest").get<std::string>();
  c.meta.seed = meta.at("seed").get<std::uint64_t>();
  c.meta.epoch = meta.at("epoch").get<std::uint64_t>();
  c.params.rng_seed = meta.at("init_seed").get<std::uint64_t>();

  std::uint32_t count = read_le<std::uint32_t>(bytes, off, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = detail::read_string(bytes, off, "tensor name");
    std::string dtype = detail::read_string(bytes, off, "dtype");
    if (dtype != "f64") throw IoError(origin + ": unsupported dtype '" + dtype + "'");
    std::uint32_t rank = read_le<std::uint32_t>(bytes, off, "rank");
    Shape shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d)
      shape[d] = read_le<std::uint64_t>(bytes, off, "dimension");
    std::size_t numel = shape_numel(shape);
    std::vector<double> data(numel);
    for (std::size_t k = 0; k < numel; ++k) data[k] = read_le<double>(bytes, off, "payload");
    c.params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (off != digest_off)
    throw IoError(origin + ": " + std::to_string(digest_off - off) +
                  " unexpected trailing bytes before digest");
  return c;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_file(path), path);
}

}  // namespace actlab
