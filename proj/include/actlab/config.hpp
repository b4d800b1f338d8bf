#pragma once

// Flat key = value experiment configuration. Every key must be in the
// documented registry — unknown keys are an error, never silently ignored —
// and defaults apply only when a key is absent.

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "actlab/analysis.hpp"
#include "actlab/data.hpp"
#include "actlab/ioutil.hpp"
#include "actlab/trainer.hpp"

namespace actlab {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys = {
      // training
      "method", "alpha", "inv_lambda", "epochs", "batch_size", "lr0", "momentum",
      "lr_milestones", "seeds", "eval_every",
      // model
      "model", "mlp_widths", "input_shape", "num_classes", "conv_channels", "kernel_sizes",
      "dense_hidden",
      // dataset
      "dataset", "synth_n_per_class", "synth_eval_n_per_class", "synth_means", "synth_sigma",
      "data_seed", "idx_images", "idx_labels", "idx_eval_images", "idx_eval_labels",
      "augment_pad", "augment_flip",
      // training-time attack
      "train_eps", "train_step", "train_steps", "train_random_init", "train_restarts",
      // evaluation attack
      "eval_eps", "eval_step", "eval_steps", "eval_random_init", "eval_restarts",
      "clamp_lo", "clamp_hi",
      // analysis protocols
      "alpha_list", "eps_list", "minpert_tol", "minpert_eps_hi", "minpert_max_examples",
      "attack_max_examples", "probe_widths", "probe_epochs", "probe_batch", "probe_lr",
      "probe_label_seed",
      // checkpoint inputs
      "checkpoint", "checkpoints",
  };
  return keys;
}

class ExperimentConfig {
 public:
  static ExperimentConfig parse(const std::string& text, const std::string& origin = "<config>") {
    ExperimentConfig cfg;
    cfg.digest_ = hex64(fnv1a64(text));
    std::vector<std::string> lines = split(text, '\n');
    for (std::size_t no = 0; no < lines.size(); ++no) {
      std::string line = lines[no];
      std::size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      std::size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(no + 1) +
                          ": expected 'key = value', got '" + line + "'");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (!config_keys().count(key))
        throw ConfigError(origin + ":" + std::to_string(no + 1) + ": unknown key '" + key + "'");
      if (cfg.kv_.count(key))
        throw ConfigError(origin + ":" + std::to_string(no + 1) + ": duplicate key '" + key +
                          "'");
      if (value.empty())
        throw ConfigError(origin + ":" + std::to_string(no + 1) + ": empty value for '" + key +
                          "'");
      cfg.kv_[key] = value;
    }
    return cfg;
  }

  static ExperimentConfig load(const std::string& path) {
    std::string text;
    try {
      text = read_file(path);
    } catch (const IoError& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    return parse(text, path);
  }

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  /// Hex digest of the raw config text; stamped into checkpoints.
  const std::string& digest() const { return digest_; }

  void set(const std::string& key, const std::string& value) {
    if (!config_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
    kv_[key] = value;
  }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("config is missing required key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
      return parse_double(it->second);
    } catch (const IoError&) {
      throw ConfigError("config key '" + key + "': expected a number, got '" + it->second + "'");
    }
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
      return parse_u64(it->second);
    } catch (const IoError&) {
      throw ConfigError("config key '" + key + "': expected a nonnegative integer, got '" +
                        it->second + "'");
    }
  }

  std::size_t get_size(const std::string& key, std::size_t fallback) const {
    return static_cast<std::size_t>(get_u64(key, fallback));
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + it->second + "'");
  }

  std::vector<double> get_doubles(const std::string& key, const std::string& fallback) const {
    std::vector<double> out;
    for (const std::string& tok : split(get(key, fallback), ','))
      out.push_back(parse_double(trim(tok)));
    return out;
  }

  std::vector<std::size_t> get_sizes(const std::string& key, const std::string& fallback) const {
    std::vector<std::size_t> out;
    for (const std::string& tok : split(get(key, fallback), ','))
      out.push_back(static_cast<std::size_t>(parse_u64(trim(tok))));
    return out;
  }

  std::vector<std::uint64_t> get_u64s(const std::string& key, const std::string& fallback) const {
    std::vector<std::uint64_t> out;
    for (const std::string& tok : split(get(key, fallback), ','))
      out.push_back(parse_u64(trim(tok)));
    return out;
  }

  std::vector<std::string> get_strings(const std::string& key) const {
    std::vector<std::string> out;
    if (!has(key)) return out;
    for (const std::string& tok : split(require(key), ','))
      out.push_back(trim(tok));
    return out;
  }

 private:
  std::map<std::string, std::string> kv_;
  std::string digest_ = hex64(fnv1a64(std::string()));
};

inline ModelSpec spec_from_config(const ExperimentConfig& cfg) {
  std::string model = cfg.get("model", "mlp");
  if (model == "mlp") {
    return ModelSpec::mlp(cfg.get_sizes("mlp_widths", "2,32,32,2"));
  }
  if (model == "small_convnet") {
    std::vector<std::size_t> ishape = cfg.get_sizes("input_shape", "1,28,28");
    return ModelSpec::small_convnet(Shape(ishape.begin(), ishape.end()),
                                    cfg.get_size("num_classes", 10),
                                    cfg.get_sizes("conv_channels", "8,16"),
                                    cfg.get_sizes("kernel_sizes", "5,5"),
                                    cfg.get_sizes("dense_hidden", "64"));
  }
  throw ConfigError("config key 'model': expected mlp or small_convnet, got '" + model + "'");
}

namespace detail {

inline AttackConfig attack_from_config(const ExperimentConfig& cfg, const std::string& prefix,
                                       double def_eps, double def_step, std::size_t def_steps,
                                       std::size_t def_restarts) {
  AttackConfig a;
  a.budget.epsilon = cfg.get_double(prefix + "_eps", def_eps);
  a.budget.clamp_lo = cfg.get_double("clamp_lo", 0.0);
  a.budget.clamp_hi = cfg.get_double("clamp_hi", 1.0);
  a.step_size = cfg.get_double(prefix + "_step", def_step);
  a.steps = cfg.get_size(prefix + "_steps", def_steps);
  a.random_init = cfg.get_bool(prefix + "_random_init", true);
  a.restarts = cfg.get_size(prefix + "_restarts", def_restarts);
  a.validate();
  return a;
}

}  // namespace detail

inline AttackConfig train_attack_from_config(const ExperimentConfig& cfg) {
  return detail::attack_from_config(cfg, "train", 0.031, 0.007, 10, 1);
}

inline AttackConfig eval_attack_from_config(const ExperimentConfig& cfg) {
  return detail::attack_from_config(cfg, "eval", 0.031, 0.003, 20, 5);
}

inline TrainPlan plan_from_config(const ExperimentConfig& cfg) {
  TrainPlan plan;
  plan.method = method_from_name(cfg.get("method", "act"));
  plan.alpha = cfg.get_double("alpha", 0.9);
  plan.inv_lambda = cfg.get_double("inv_lambda", 5.0);
  plan.epochs = cfg.get_size("epochs", 100);
  plan.batch_size = cfg.get_size("batch_size", 128);
  plan.lr0 = cfg.get_double("lr0", 0.1);
  plan.momentum = cfg.get_double("momentum", 0.9);
  plan.lr_milestones.clear();
  std::string ms = cfg.get("lr_milestones", "60:0.2,120:0.2,150:0.2");
  if (ms != "none") {
    for (const std::string& tok : split(ms, ',')) {
      std::vector<std::string> parts = split(trim(tok), ':');
      if (parts.size() != 2)
        throw ConfigError("config key 'lr_milestones': expected epoch:factor, got '" + tok + "'");
      plan.lr_milestones.emplace_back(static_cast<std::size_t>(parse_u64(trim(parts[0]))),
                                      parse_double(trim(parts[1])));
    }
  }
  plan.attack = train_attack_from_config(cfg);
  plan.eval_attack = eval_attack_from_config(cfg);
  plan.eval_every = cfg.get_size("eval_every", 0);
  plan.augment_pad = cfg.get_size("augment_pad", 0);
  plan.augment_flip = cfg.get_bool("augment_flip", false);
  plan.seeds = cfg.get_u64s("seeds", "0");
  plan.spec = spec_from_config(cfg);
  plan.validate();
  return plan;
}

/// Means are written "x,y;x,y;..." — one 2-D mean per class.
inline std::vector<std::pair<double, double>> parse_means(const std::string& text) {
  std::vector<std::pair<double, double>> means;
  for (const std::string& tok : split(text, ';')) {
    std::vector<std::string> xy = split(trim(tok), ',');
    if (xy.size() != 2)
      throw ConfigError("config key 'synth_means': expected x,y pairs separated by ';', got '" +
                        tok + "'");
    means.emplace_back(parse_double(trim(xy[0])), parse_double(trim(xy[1])));
  }
  return means;
}

/// split is "train" or "eval"; synthetic eval data draws from a stream
/// disjoint from the training draw.
inline Dataset dataset_from_config(const ExperimentConfig& cfg, const std::string& split) {
  if (split != "train" && split != "eval")
    throw ConfigError("dataset split must be train or eval, got '" + split + "'");
  std::string kind = cfg.get("dataset", "synth");
  if (kind == "synth") {
    std::vector<std::pair<double, double>> means =
        parse_means(cfg.get("synth_means", "0.35,0.35;0.65,0.65"));
    double sigma = cfg.get_double("synth_sigma", 0.10607);
    std::uint64_t seed = cfg.get_u64("data_seed", 0);
    std::size_t n = cfg.get_size("synth_n_per_class", 100);
    if (split == "eval") {
      n = cfg.get_size("synth_eval_n_per_class", 5 * n);
      seed = rng::derive(seed, rng::kData, 0xe);
    }
    Dataset d = synth_gaussians(n, means, sigma, seed);
    d.split = split;
    return d;
  }
  if (kind == "idx") {
    std::string imgs, labs;
    if (split == "train") {
      imgs = cfg.require("idx_images");
      labs = cfg.require("idx_labels");
    } else {
      imgs = cfg.get("idx_eval_images", cfg.require("idx_images"));
      labs = cfg.get("idx_eval_labels", cfg.require("idx_labels"));
    }
    Dataset d;
    try {
      d = load_idx(imgs, labs);
    } catch (const IoError& e) {
      throw ConfigError(std::string("dataset: ") + e.what());
    }
    d.split = split;
    return d;
  }
  throw ConfigError("config key 'dataset': expected synth or idx, got '" + kind + "'");
}

inline ProbeConfig probe_from_config(const ExperimentConfig& cfg) {
  ProbeConfig p;
  p.widths = cfg.get_sizes("probe_widths", "400,200");
  p.epochs = cfg.get_size("probe_epochs", 80);
  p.batch_size = cfg.get_size("probe_batch", 64);
  p.lr = cfg.get_double("probe_lr", 0.05);
  p.label_seed = cfg.get_u64("probe_label_seed", 1);
  return p;
}

}  // namespace actlab
