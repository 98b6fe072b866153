// calicausal: simulate ad logs, train the multi-objective ranker, evaluate,
// and run the ablation / transfer experiment protocols.
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "calicausal/config.hpp"
#include "calicausal/csv.hpp"
#include "calicausal/report.hpp"
#include "calicausal/rng.hpp"
#include "calicausal/simulator.hpp"
#include "calicausal/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace calicausal;

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 1;
constexpr int kExitRuntimeError = 2;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed_override = -1;
  bool force = false;
};

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Manifest {
  std::string subcommand;
  std::string config_path;
  std::string config_hash;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;
};

void write_manifest(const fs::path& dir, const Manifest& m) {
  json j;
  j["subcommand"] = m.subcommand;
  j["config_path"] = m.config_path;
  j["config_hash"] = m.config_hash;
  j["out_dir"] = m.out_dir;
  j["seed"] = m.seed;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  write_text_file(dir / "manifest.json", j.dump(1) + "\n");
}

std::optional<Manifest> read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) return std::nullopt;
  const auto j = json::parse(read_text_file(path));
  Manifest m;
  m.subcommand = j.at("subcommand").get<std::string>();
  m.config_path = j.at("config_path").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.out_dir = j.at("out_dir").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.started_at = j.at("started_at").get<std::string>();
  m.finished_at = j.value("finished_at", "");
  return m;
}

// Returns the manifest to run under, or nullopt when an identical finished
// run already occupies the directory (idempotent no-op).
std::optional<Manifest> begin_run(const std::string& subcommand, const CommonOpts& opts,
                                  const std::string& config_hash, std::uint64_t seed,
                                  const fs::path& out) {
  if (auto existing = read_manifest(out)) {
    const bool identical = existing->subcommand == subcommand &&
                           existing->config_hash == config_hash && existing->seed == seed;
    if (identical && !existing->finished_at.empty() && !opts.force) {
      std::cout << "run already complete at " << out.string() << " (identical manifest); "
                << "use --force to rerun\n";
      return std::nullopt;
    }
    if (!identical && !opts.force) {
      throw std::invalid_argument("output directory " + out.string() +
                                  " holds a different run; refusing to overwrite without --force");
    }
  }
  fs::create_directories(out);
  Manifest m;
  m.subcommand = subcommand;
  m.config_path = opts.config_path;
  m.config_hash = config_hash;
  m.out_dir = out.string();
  m.seed = seed;
  m.started_at = iso_now();
  write_manifest(out, m);  // written before any computation
  return m;
}

void finish_run(const fs::path& out, Manifest m) {
  m.finished_at = iso_now();
  write_manifest(out, m);
}

AppConfig load_with_seed(const CommonOpts& opts) {
  AppConfig cfg = load_config(opts.config_path);
  if (opts.seed_override >= 0) {
    cfg.seed = static_cast<std::uint64_t>(opts.seed_override);
    if (cfg.simulate) cfg.simulate->sim.seed = cfg.seed;
    if (cfg.train) cfg.train->seed = cfg.seed;
  }
  return cfg;
}

fs::path resolve_out(const std::string& subcommand, const CommonOpts& opts,
                     const std::string& hash, std::uint64_t seed) {
  if (!opts.out_dir.empty()) return opts.out_dir;
  return fs::path("runs") / (subcommand + "-" + hash.substr(0, 8) + "-s" + std::to_string(seed));
}

std::vector<double> logging_policy_scores(const std::vector<Example>& examples,
                                          const SimulateSettings& settings,
                                          std::uint64_t seed) {
  Rng rng(derive_seed(seed, "simulate/policy"));
  std::vector<double> scores(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (settings.logging_policy == LoggingPolicy::kRandom) {
      scores[i] = rng.uniform01();
    } else {
      scores[i] = examples[i].true_ctr + settings.policy_noise * rng.normal();
    }
  }
  return scores;
}

int cmd_simulate(const CommonOpts& opts) {
  const AppConfig cfg = load_with_seed(opts);
  if (!cfg.simulate) throw std::invalid_argument("config: simulate section is required");
  cfg.simulate->sim.validate();

  const std::string hash = config_fingerprint(opts.config_path);
  const fs::path out = resolve_out("simulate", opts, hash, cfg.seed);
  auto manifest = begin_run("simulate", opts, hash, cfg.seed, out);
  if (!manifest) return kExitOk;

  const SimulatorConfig& sim = cfg.simulate->sim;
  const GroundTruth gt = make_ground_truth(sim);
  const auto examples = generate_examples(sim.n, sim.seed, sim.clusters);
  const auto policy = logging_policy_scores(examples, *cfg.simulate, cfg.seed);

  SlateLogParams params;
  params.n_slates = sim.n_slates;
  params.slate_size = sim.slate_size;
  params.candidates_per_slate = sim.candidates_per_slate;
  params.randomized_fraction = sim.randomized_fraction;
  const auto log = simulate_slate_log(examples, policy, gt, params,
                                      derive_seed(cfg.seed, "simulate/log"));

  write_examples_csv(out / "examples.csv", examples);
  write_impressions_csv(out / "impressions.csv", log);

  json gt_json;
  gt_json["examination"] = gt.examination;
  gt_json["base_conversion_rate"] = gt.base_conversion_rate;
  gt_json["eta"] = sim.eta;
  gt_json["bid_params"] = json::array();
  for (const auto& bp : gt.bid_params) {
    gt_json["bid_params"].push_back({{"mu", bp.mu}, {"sigma", bp.sigma}});
  }
  gt_json["logging_policy"] =
      cfg.simulate->logging_policy == LoggingPolicy::kRandom ? "random" : "noisy_oracle";
  write_text_file(out / "ground_truth.json", gt_json.dump(1) + "\n");

  finish_run(out, *manifest);
  std::cout << "simulate: wrote " << examples.size() << " examples, " << log.size()
            << " impressions to " << out.string() << "\n";
  return kExitOk;
}

Dataset load_dataset(const DataPaths& paths) {
  return Dataset::from(read_examples_csv(paths.examples), read_impressions_csv(paths.impressions));
}

void write_train_outputs(const fs::path& out, const Dataset& data, const TrainResult& result,
                         const TrainConfig& cfg, const std::string& hash) {
  save_checkpoint(out / "checkpoint.json", result.params);
  write_history_csv(out / "history.csv", result.history);
  write_constraint_trace_csv(out / "constraint_trace.csv", result.history);
  write_propensity_csv(out / "propensities.csv", result.table);
  write_bucket_report_csv(out / "bucket_report.csv",
                          eval_bucket_stats(result.params, data, result.eval_impressions,
                                            result.bucket_key));
  EvalReport report = result.report;
  report.config_fingerprint = hash;
  write_eval_report_json(out / "eval_report.json", report);
  write_estimate_json(out / "utility_estimate.json", report.utility, cfg.epsilon_min);
}

int cmd_train(const CommonOpts& opts) {
  const AppConfig cfg = load_with_seed(opts);
  if (!cfg.data || !cfg.train) {
    throw std::invalid_argument("config: data and train sections are required");
  }
  cfg.train->validate();

  const std::string hash = config_fingerprint(opts.config_path);
  const fs::path out = resolve_out("train", opts, hash, cfg.seed);
  auto manifest = begin_run("train", opts, hash, cfg.seed, out);
  if (!manifest) return kExitOk;

  const Dataset data = load_dataset(*cfg.data);
  write_text_file(out / "config.json", read_text_file(opts.config_path));

  try {
    const TrainResult result = train(data, *cfg.train);
    write_train_outputs(out, data, result, *cfg.train, hash);
  } catch (const DivergenceError& e) {
    write_history_csv(out / "history.csv", e.history);
    write_constraint_trace_csv(out / "constraint_trace.csv", e.history);
    throw;
  }

  finish_run(out, *manifest);
  std::cout << "train: run complete at " << out.string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const CommonOpts& opts) {
  const AppConfig cfg = load_with_seed(opts);
  if (!cfg.evaluate_run) throw std::invalid_argument("config: evaluate section is required");

  const fs::path run_dir = *cfg.evaluate_run;
  const auto run_manifest = read_manifest(run_dir);
  if (!run_manifest) {
    throw std::invalid_argument("evaluate: no manifest.json under " + run_dir.string());
  }
  AppConfig train_cfg_file = load_config(run_dir / "config.json");
  if (!train_cfg_file.data || !train_cfg_file.train) {
    throw std::invalid_argument("evaluate: stored config lacks data/train sections");
  }
  TrainConfig train_cfg = *train_cfg_file.train;
  train_cfg.seed = run_manifest->seed;

  const std::string hash = config_fingerprint(opts.config_path);
  const fs::path out = resolve_out("evaluate", opts, hash, cfg.seed);
  auto manifest = begin_run("evaluate", opts, hash, cfg.seed, out);
  if (!manifest) return kExitOk;

  const Dataset data = load_dataset(*train_cfg_file.data);
  const ModelParams params = load_checkpoint(run_dir / "checkpoint.json");
  PropensityTable table = read_propensity_csv(run_dir / "propensities.csv");
  table.epsilon_min = train_cfg.epsilon_min;

  const auto slates = group_slates(data.impressions);
  const SlateSplit split = split_slates(slates.size(), train_cfg);
  std::vector<LoggedImpression> eval_imps;
  for (std::size_t s : split.eval_ids) {
    for (std::size_t i = slates[s].begin; i < slates[s].end; ++i) {
      eval_imps.push_back(data.impressions[i]);
    }
  }

  EvalReport report = evaluate_model(params, data, eval_imps, table, train_cfg);
  report.config_fingerprint = config_fingerprint(run_dir / "config.json");
  write_eval_report_json(out / "eval_report.json", report);

  finish_run(out, *manifest);
  std::cout << comparison_table_text({{run_dir.filename().string(), report}});
  return kExitOk;
}

int cmd_ablate(const CommonOpts& opts) {
  const AppConfig cfg = load_with_seed(opts);
  if (!cfg.data || !cfg.train) {
    throw std::invalid_argument("config: data and train sections are required");
  }
  cfg.train->validate();

  const std::string hash = config_fingerprint(opts.config_path);
  const fs::path out = resolve_out("ablate", opts, hash, cfg.seed);
  auto manifest = begin_run("ablate", opts, hash, cfg.seed, out);
  if (!manifest) return kExitOk;

  const Dataset data = load_dataset(*cfg.data);
  const auto variants = run_ablation(data, *cfg.train, out);

  std::vector<NamedReport> rows;
  for (const auto& v : variants) rows.push_back({v.name, v.report});
  const std::string table = comparison_table_text(rows);
  write_text_file(out / "ablation_table.txt", table);
  write_comparison_table_csv(out / "ablation_table.csv", rows);

  json hashes;
  for (const auto& v : variants) hashes[v.name] = v.batch_hashes;
  write_text_file(out / "batch_hashes.json", hashes.dump(1) + "\n");

  finish_run(out, *manifest);
  std::cout << table;
  return kExitOk;
}

int cmd_transfer(const CommonOpts& opts) {
  const AppConfig cfg = load_with_seed(opts);
  if (!cfg.simulate || !cfg.train || !cfg.transfer) {
    throw std::invalid_argument("config: simulate, train and transfer sections are required");
  }

  const std::string hash = config_fingerprint(opts.config_path);
  const fs::path out = resolve_out("transfer", opts, hash, cfg.seed);
  auto manifest = begin_run("transfer", opts, hash, cfg.seed, out);
  if (!manifest) return kExitOk;

  TransferConfig tcfg;
  tcfg.sim = cfg.simulate->sim;
  tcfg.train = *cfg.train;
  tcfg.train_cluster_count = cfg.transfer->train_cluster_count;
  tcfg.eval_cluster_count = cfg.transfer->eval_cluster_count;
  tcfg.seeds = cfg.transfer->seeds;
  const TransferResult result = run_transfer(tcfg);

  json j;
  j["rows"] = json::array();
  for (const auto& row : result.rows) {
    j["rows"].push_back({{"seed", row.seed},
                         {"auc_in", row.auc_in},
                         {"auc_cross", row.auc_cross},
                         {"retention", row.retention}});
  }
  j["mean_retention"] = result.mean_retention;
  j["std_retention"] = result.std_retention;
  write_text_file(out / "transfer_report.json", j.dump(1) + "\n");

  char line[160];
  std::snprintf(line, sizeof(line), "retention: %.4f +/- %.4f over %zu seeds\n",
                result.mean_retention, result.std_retention, result.rows.size());
  std::string text(line);
  for (const auto& row : result.rows) {
    std::snprintf(line, sizeof(line), "  seed %llu: in %.4f cross %.4f retention %.4f\n",
                  static_cast<unsigned long long>(row.seed), row.auc_in, row.auc_cross,
                  row.retention);
    text += line;
  }
  write_text_file(out / "transfer_report.txt", text);

  finish_run(out, *manifest);
  std::cout << text;
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  if (run_dirs.empty()) throw std::invalid_argument("report: need at least one run directory");
  std::vector<NamedReport> rows;
  std::vector<std::string> missing;
  for (const auto& dir : run_dirs) {
    const fs::path path = fs::path(dir) / "eval_report.json";
    if (!fs::exists(path)) {
      missing.push_back(dir);
      continue;
    }
    rows.push_back({fs::path(dir).filename().string(), read_eval_report_json(path)});
  }
  for (const auto& dir : missing) {
    std::cerr << "report: missing eval_report.json under " << dir << ", skipping\n";
  }
  if (rows.empty()) throw std::runtime_error("report: no readable eval reports");

  const fs::path out = out_dir.empty() ? fs::path("runs") / "report" : fs::path(out_dir);
  fs::create_directories(out);
  const std::string table = comparison_table_text(rows);
  write_text_file(out / "report.txt", table);
  write_comparison_table_csv(out / "report.csv", rows);
  write_text_file(out / "report.svg", comparison_chart_svg(rows));
  std::cout << table;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"calicausal: calibrated constraint-aware counterfactual ranking lab"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::vector<std::string> report_dirs;
  std::string report_out;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* copt = cmd->add_option("--config", opts.config_path, "path to the JSON config");
    if (needs_config) copt->required();
    cmd->add_option("--out", opts.out_dir, "output directory (default runs/<cmd>-<hash>-s<seed>)");
    cmd->add_option("--seed", opts.seed_override, "override the config seed");
    cmd->add_flag("--force", opts.force, "rerun even if an identical manifest exists");
  };

  auto* simulate = app.add_subcommand("simulate", "generate a synthetic dataset and click log");
  add_common(simulate, true);
  auto* train = app.add_subcommand("train", "train the multi-task ranker");
  add_common(train, true);
  auto* evaluate = app.add_subcommand("evaluate", "re-evaluate a saved checkpoint");
  add_common(evaluate, true);
  auto* ablate = app.add_subcommand("ablate", "train the full model and single-component ablations");
  add_common(ablate, true);
  auto* transfer = app.add_subcommand("transfer", "cross-segment transfer protocol over seeds");
  add_common(transfer, true);
  auto* report = app.add_subcommand("report", "comparison table and chart from run directories");
  report->add_option("dirs", report_dirs, "run directories")->required();
  report->add_option("--out", report_out, "output directory (default runs/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(opts);
    if (train->parsed()) return cmd_train(opts);
    if (evaluate->parsed()) return cmd_evaluate(opts);
    if (ablate->parsed()) return cmd_ablate(opts);
    if (transfer->parsed()) return cmd_transfer(opts);
    if (report->parsed()) return cmd_report(report_dirs, report_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
  return kExitConfigError;
}
