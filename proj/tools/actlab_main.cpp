// actlab: train and interrogate small robust classifiers from the command
// line. Subcommands cover training (concurrent/madry/trades/standard),
// attack generation, evaluation, the diagnostic battery, and the alpha /
// epsilon / transfer sweep protocols.
//
// Exit codes: 0 success, 1 usage error, 2 data or configuration error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "actlab/actlab.hpp"

namespace {

using namespace actlab;

struct CommonOpts {
  std::string config_path;
  std::string out_dir = ".";
  std::string format = "csv";
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "experiment config file (key = value lines)");
  cmd->add_option("--seed", o.seed, "override the config's seed list with a single seed");
  cmd->add_option("--out", o.out_dir, "output directory")->capture_default_str();
  cmd->add_option("--format", o.format, "metrics format: csv or jsonl")
      ->check(CLI::IsMember({"csv", "jsonl"}))
      ->capture_default_str();
}

ExperimentConfig load_config(const CommonOpts& o) {
  ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig::parse("")
                                               : ExperimentConfig::load(o.config_path);
  if (o.seed) cfg.set("seeds", std::to_string(*o.seed));
  return cfg;
}

std::filesystem::path ensure_out_dir(const CommonOpts& o) {
  std::filesystem::path dir(o.out_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string checkpoint_name(Method method, std::uint64_t seed, const std::string& role) {
  return method_name(method) + "_seed" + std::to_string(seed) + "_" + role + ".ckpt";
}

void save_model(const std::filesystem::path& dir, const ModelSpec& spec, const ModelParams& p,
                const TrainPlan& plan, std::uint64_t seed, const std::string& role,
                const std::string& digest) {
  Checkpoint ck;
  ck.spec = spec;
  ck.params = p;
  ck.meta.method = method_name(plan.method);
  ck.meta.role = role;
  ck.meta.plan_digest = digest;
  ck.meta.seed = seed;
  ck.meta.epoch = plan.epochs;
  save_checkpoint(ck, (dir / checkpoint_name(plan.method, seed, role)).string());
}

MetricsRecord epoch_record(const TrainPlan& plan, std::uint64_t seed, const EpochStats& es) {
  MetricsRecord r;
  r.add("method", method_name(plan.method));
  r.add_u64("seed", seed);
  r.add("epoch", es.epoch);
  r.add("lr", es.lr);
  r.add("loss_G", es.mean.loss_G);
  r.add("task_G", es.mean.task_G);
  r.add("mimicry_G", es.mean.mimicry_G);
  r.add("clean_acc_G", es.clean_acc_G);
  r.add("robust_acc_G", es.robust_acc_G);
  if (plan.method == Method::kAct) {
    r.add("loss_F", es.mean.loss_F);
    r.add("task_F", es.mean.task_F);
    r.add("mimicry_F", es.mean.mimicry_F);
    r.add("clean_acc_F", es.clean_acc_F);
  }
  return r;
}

int cmd_train(const CommonOpts& o) {
  ExperimentConfig cfg = load_config(o);
  TrainPlan plan = plan_from_config(cfg);
  Dataset data = dataset_from_config(cfg, "train");
  std::filesystem::path dir = ensure_out_dir(o);
  for (std::uint64_t seed : plan.seeds) {
    TrainResult run = train(plan, data, seed);
    std::vector<MetricsRecord> records;
    records.reserve(run.history.size());
    for (const EpochStats& es : run.history) records.push_back(epoch_record(plan, seed, es));
    std::string stem = "train_" + method_name(plan.method) + "_seed" + std::to_string(seed);
    std::string path = write_metrics(dir, stem, o.format, records);
    save_model(dir, plan.spec, run.G, plan, seed, "robust", cfg.digest());
    if (run.has_F) save_model(dir, plan.spec, run.F, plan, seed, "natural", cfg.digest());
    const EpochStats& last = run.history.empty() ? EpochStats{} : run.history.back();
    std::cout << method_name(plan.method) << " seed " << seed << ": clean_acc "
              << format_double(last.clean_acc_G) << ", metrics " << path << "\n";
  }
  return 0;
}

Checkpoint load_one_checkpoint(const ExperimentConfig& cfg) {
  return load_checkpoint(cfg.require("checkpoint"));
}

int cmd_evaluate(const CommonOpts& o) {
  ExperimentConfig cfg = load_config(o);
  Checkpoint ck = load_one_checkpoint(cfg);
  Dataset data = dataset_from_config(cfg, "eval");
  AttackConfig ecfg = eval_attack_from_config(cfg);
  ecfg.seed = cfg.get_u64s("seeds", "0").front();
  double a_nat = clean_accuracy(ck.params, ck.spec, data.inputs, data.labels);
  double a_rob = robust_accuracy(ck.params, ck.spec, data, ecfg);
  double entropy = entropy_report(ck.params, ck.spec, data);

  MetricsRecord r;
  r.add("checkpoint", cfg.require("checkpoint"));
  r.add("method", ck.meta.method);
  r.add("role", ck.meta.role);
  r.add("a_nat", a_nat);
  r.add("a_rob", a_rob);
  r.add("eps", ecfg.budget.epsilon);
  r.add("steps", ecfg.steps);
  r.add("restarts", ecfg.restarts);
  r.add("entropy", entropy);
  std::string path = write_metrics(ensure_out_dir(o), "evaluate", o.format, {r});
  std::cout << "a_nat " << format_double(a_nat) << ", a_rob " << format_double(a_rob)
            << " (eps " << format_double(ecfg.budget.epsilon) << ", " << ecfg.steps
            << " steps, " << ecfg.restarts << " restarts), entropy " << format_double(entropy)
            << "\n"
            << "wrote " << path << "\n";
  return 0;
}

int cmd_attack(const CommonOpts& o) {
  ExperimentConfig cfg = load_config(o);
  Checkpoint ck = load_one_checkpoint(cfg);
  Dataset data = dataset_from_config(cfg, "eval");
  AttackConfig ecfg = eval_attack_from_config(cfg);
  ecfg.seed = cfg.get_u64s("seeds", "0").front();

  std::size_t limit = cfg.get_size("attack_max_examples", 200);
  std::size_t n = std::min<std::size_t>(data.size(), limit == 0 ? data.size() : limit);
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  Dataset subset = data.take(rows);

  AttackObjective obj = ce_attack_objective(ck.params, ck.spec, subset.labels);
  AttackResult res = multi_restart_attack(obj, model_forward(ck.params, ck.spec), subset.inputs,
                                          subset.labels, ecfg);
  Tensor adv = subset.inputs;
  for (std::size_t i = 0; i < adv.data.size(); ++i) adv.data[i] += res.delta.data[i];
  std::vector<std::size_t> clean_pred = argmax_rows(forward(ck.params, ck.spec, subset.inputs));
  std::vector<std::size_t> adv_pred = argmax_rows(forward(ck.params, ck.spec, adv));

  std::size_t minpert_n = std::min(n, cfg.get_size("minpert_max_examples", 50));
  std::vector<std::size_t> mrows(minpert_n);
  for (std::size_t i = 0; i < minpert_n; ++i) mrows[i] = i;
  Dataset msub = subset.take(mrows);
  AttackConfig mp_cfg = ecfg;
  std::vector<double> eps_star =
      min_perturbation(ck.params, ck.spec, msub.inputs, msub.labels,
                       cfg.get_double("minpert_tol", 1e-3), cfg.get_double("minpert_eps_hi", 0.5),
                       mp_cfg);

  std::size_t per = subset.inputs.numel() / n;
  std::vector<MetricsRecord> ex_rows;
  for (std::size_t i = 0; i < n; ++i) {
    double linf = 0.0;
    for (std::size_t d = 0; d < per; ++d)
      linf = std::max(linf, std::abs(res.delta.data[i * per + d]));
    MetricsRecord r;
    r.add("index", i);
    r.add("label", subset.labels[i]);
    r.add("clean_pred", clean_pred[i]);
    r.add("adv_pred", adv_pred[i]);
    r.add("flipped", static_cast<std::size_t>(res.flipped[i] ? 1 : 0));
    r.add("objective", res.objective[i]);
    r.add("linf", linf);
    ex_rows.push_back(std::move(r));
  }
  std::filesystem::path dir = ensure_out_dir(o);
  std::string ex_path = write_metrics(dir, "attack_examples", o.format, ex_rows);

  // -1 marks examples that never flipped within the search range.
  std::vector<MetricsRecord> mp_rows;
  for (std::size_t i = 0; i < minpert_n; ++i) {
    MetricsRecord r;
    r.add("index", i);
    r.add("eps_star", eps_star[i] == kUnbounded ? -1.0 : eps_star[i]);
    mp_rows.push_back(std::move(r));
  }
  std::string mp_path = write_metrics(dir, "min_perturbation", o.format, mp_rows);

  std::string adv_note;
  if (adv.rank() == 4 && adv.dim(1) == 1) {
    Dataset advset = subset;
    advset.inputs = adv;
    save_idx(advset, (dir / "adv_images.idx").string(), (dir / "adv_labels.idx").string());
    adv_note = ", adversarial images in adv_images.idx";
  } else {
    std::vector<MetricsRecord> pts;
    for (std::size_t i = 0; i < n; ++i) {
      MetricsRecord r;
      r.add("index", i);
      for (std::size_t d = 0; d < per; ++d)
        r.add("c" + std::to_string(d), adv.data[i * per + d]);
      pts.push_back(std::move(r));
    }
    adv_note = ", adversarial points in " + write_metrics(dir, "adv_points", o.format, pts);
  }

  std::size_t flips = 0;
  for (bool f : res.flipped)
    if (f) ++flips;
  std::cout << flips << "/" << n << " flipped at eps " << format_double(ecfg.budget.epsilon)
            << "; wrote " << ex_path << " and " << mp_path << adv_note << "\n";
  return 0;
}

int cmd_analyze(const CommonOpts& o) {
  ExperimentConfig cfg = load_config(o);
  Checkpoint ck = load_one_checkpoint(cfg);
  Dataset data = dataset_from_config(cfg, "train");
  std::filesystem::path dir = ensure_out_dir(o);

  std::vector<MetricsRecord> frob_rows;
  for (const auto& [layer, norm] : frobenius_norms(ck.params)) {
    MetricsRecord r;
    r.add("layer", layer);
    r.add("frobenius", norm);
    frob_rows.push_back(std::move(r));
  }
  std::string frob_path = write_metrics(dir, "frobenius", o.format, frob_rows);

  double entropy = entropy_report(ck.params, ck.spec, data);
  MetricsRecord ent;
  ent.add("checkpoint", cfg.require("checkpoint"));
  ent.add("split", data.split);
  ent.add("entropy", entropy);
  ent.add("max_entropy", std::log(static_cast<double>(ck.spec.num_classes)));
  std::string ent_path = write_metrics(dir, "entropy", o.format, {ent});

  ProbeConfig probe = probe_from_config(cfg);
  std::vector<double> curve = compression_probe(ck.params, ck.spec, data, probe);
  std::vector<MetricsRecord> probe_rows;
  for (std::size_t e = 0; e < curve.size(); ++e) {
    MetricsRecord r;
    r.add("epoch", e);
    r.add("fit_accuracy", curve[e]);
    probe_rows.push_back(std::move(r));
  }
  std::string probe_path = write_metrics(dir, "probe", o.format, probe_rows);

  std::cout << "entropy " << format_double(entropy) << " (max "
            << format_double(std::log(static_cast<double>(ck.spec.num_classes)))
            << "), probe final fit " << format_double(curve.empty() ? 0.0 : curve.back())
            << "; wrote " << frob_path << ", " << ent_path << ", " << probe_path << "\n";
  return 0;
}

int cmd_sweep_alpha(const CommonOpts& o) {
  ExperimentConfig cfg = load_config(o);
  TrainPlan plan = plan_from_config(cfg);
  plan.method = Method::kAct;
  Dataset train_data = dataset_from_config(cfg, "train");
  Dataset eval_data = dataset_from_config(cfg, "eval");
  AttackConfig ecfg = eval_attack_from_config(cfg);
  std::vector<double> alphas = cfg.get_doubles("alpha_list", "0.1,0.5,0.9");

  std::vector<MetricsRecord> rows;
  for (double alpha : alphas) {
    plan.alpha = alpha;
    plan.validate();
    for (std::uint64_t seed : plan.seeds) {
      TrainResult run = train(plan, train_data, seed);
      AttackConfig e = ecfg;
      e.seed = seed;
      MetricsRecord r;
      r.add("alpha", alpha);
      r.add_u64("seed", seed);
      r.add("a_nat_G", clean_accuracy(run.G, plan.spec, eval_data.inputs, eval_data.labels));
      r.add("a_rob_G", robust_accuracy(run.G, plan.spec, eval_data, e));
      r.add("a_nat_F", clean_accuracy(run.F, plan.spec, eval_data.inputs, eval_data.labels));
      r.add("a_rob_F", robust_accuracy(run.F, plan.spec, eval_data, e));
      rows.push_back(std::move(r));
      std::cout << "alpha " << format_double(alpha) << " seed " << seed << ": a_rob_G "
                << rows.back().text("a_rob_G") << "\n";
    }
  }
  std::string path = write_metrics(ensure_out_dir(o), "alpha_sweep", o.format, rows);
  std::cout << "wrote " << path << "\n";
  return 0;
}

int cmd_sweep_epsilon(const CommonOpts& o) {
  ExperimentConfig cfg = load_config(o);
  Checkpoint ck = load_one_checkpoint(cfg);
  Dataset data = dataset_from_config(cfg, "eval");
  AttackConfig ecfg = eval_attack_from_config(cfg);
  ecfg.seed = cfg.get_u64s("seeds", "0").front();
  std::vector<double> eps_list = cfg.get_doubles("eps_list", "0.025,0.05,0.075,0.1,0.15,0.2");

  std::vector<std::pair<double, double>> sweep =
      epsilon_sweep(ck.params, ck.spec, data, eps_list, ecfg.steps, ecfg);
  std::vector<MetricsRecord> rows;
  for (const auto& [eps, acc] : sweep) {
    MetricsRecord r;
    r.add("eps", eps);
    r.add("robust_acc", acc);
    rows.push_back(std::move(r));
    std::cout << "eps " << format_double(eps) << ": robust_acc " << format_double(acc) << "\n";
  }
  std::string path = write_metrics(ensure_out_dir(o), "epsilon_sweep", o.format, rows);
  std::cout << "wrote " << path << "\n";
  return 0;
}

int cmd_transfer(const CommonOpts& o) {
  ExperimentConfig cfg = load_config(o);
  std::vector<std::string> paths = cfg.get_strings("checkpoints");
  if (paths.size() < 2)
    throw ConfigError("transfer needs config key 'checkpoints' with at least two paths");
  Dataset data = dataset_from_config(cfg, "eval");
  AttackConfig ecfg = eval_attack_from_config(cfg);
  ecfg.seed = cfg.get_u64s("seeds", "0").front();

  std::vector<Checkpoint> cks;
  std::vector<std::string> ids;
  for (const std::string& p : paths) {
    cks.push_back(load_checkpoint(p));
    ids.push_back(std::filesystem::path(p).stem().string());
  }
  std::vector<MetricsRecord> rows;
  for (std::size_t s = 0; s < cks.size(); ++s)
    for (std::size_t t = 0; t < cks.size(); ++t) {
      TransferCell cell =
          blackbox_transfer(cks[s].params, cks[s].spec, ids[s], cks[t].params, cks[t].spec,
                            ids[t], data, ecfg);
      MetricsRecord r;
      r.add("surrogate", cell.surrogate);
      r.add("target", cell.target);
      r.add("success_rate", cell.success_rate);
      rows.push_back(std::move(r));
      std::cout << cell.surrogate << " -> " << cell.target << ": "
                << format_double(cell.success_rate) << "\n";
    }
  std::string path = write_metrics(ensure_out_dir(o), "transfer", o.format, rows);
  std::cout << "wrote " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale adversarial robustness laboratory"};
  app.require_subcommand(1);

  CommonOpts train_o, attack_o, eval_o, analyze_o, salpha_o, seps_o, transfer_o;
  CLI::App* c_train = app.add_subcommand("train", "train a model per the config");
  add_common(c_train, train_o);
  CLI::App* c_attack =
      app.add_subcommand("attack", "write adversarial examples and min-perturbations");
  add_common(c_attack, attack_o);
  CLI::App* c_eval = app.add_subcommand("evaluate", "clean and robust accuracy of a checkpoint");
  add_common(c_eval, eval_o);
  CLI::App* c_analyze =
      app.add_subcommand("analyze", "frobenius / entropy / compression-probe diagnostics");
  add_common(c_analyze, analyze_o);
  CLI::App* c_salpha = app.add_subcommand("sweep-alpha", "train and evaluate across alphas");
  add_common(c_salpha, salpha_o);
  CLI::App* c_seps = app.add_subcommand("sweep-epsilon", "robust accuracy across epsilons");
  add_common(c_seps, seps_o);
  CLI::App* c_transfer = app.add_subcommand("transfer", "black-box transfer matrix");
  add_common(c_transfer, transfer_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (c_train->parsed()) return cmd_train(train_o);
    if (c_attack->parsed()) return cmd_attack(attack_o);
    if (c_eval->parsed()) return cmd_evaluate(eval_o);
    if (c_analyze->parsed()) return cmd_analyze(analyze_o);
    if (c_salpha->parsed()) return cmd_sweep_alpha(salpha_o);
    if (c_seps->parsed()) return cmd_sweep_epsilon(seps_o);
    if (c_transfer->parsed()) return cmd_transfer(transfer_o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
