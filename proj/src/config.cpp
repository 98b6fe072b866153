#include "calicausal/config.hpp"

#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "calicausal/csv.hpp"
#include "calicausal/rng.hpp"

namespace calicausal {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& path,
                    const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw std::invalid_argument("config: unknown field '" + path + key + "'");
    }
  }
}

template <typename T>
T get_or(const json& obj, const std::string& path, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config: field '" + path + key + "' has the wrong type");
  }
}

SimulateSettings parse_simulate(const json& obj) {
  const std::string path = "simulate.";
  reject_unknown(obj, path,
                 {"n", "clusters", "eta", "randomized_fraction", "slate_size",
                  "candidates_per_slate", "n_slates", "bid_params", "logging_policy",
                  "policy_noise"});
  SimulateSettings s;
  s.sim.n = get_or<std::int64_t>(obj, path, "n", s.sim.n);
  s.sim.clusters = get_or<int>(obj, path, "clusters", s.sim.clusters);
  s.sim.eta = get_or<double>(obj, path, "eta", s.sim.eta);
  s.sim.randomized_fraction =
      get_or<double>(obj, path, "randomized_fraction", s.sim.randomized_fraction);
  s.sim.slate_size = get_or<int>(obj, path, "slate_size", s.sim.slate_size);
  s.sim.candidates_per_slate =
      get_or<int>(obj, path, "candidates_per_slate", s.sim.candidates_per_slate);
  s.sim.n_slates = get_or<std::int64_t>(obj, path, "n_slates", s.sim.n_slates);
  if (obj.contains("bid_params")) {
    for (const auto& bp : obj.at("bid_params")) {
      reject_unknown(bp, path + "bid_params.", {"mu", "sigma"});
      BidParams p;
      p.mu = get_or<double>(bp, path + "bid_params.", "mu", 0.0);
      p.sigma = get_or<double>(bp, path + "bid_params.", "sigma", 0.0);
      s.sim.bid_params.push_back(p);
    }
  }
  const std::string policy = get_or<std::string>(obj, path, "logging_policy", "noisy_oracle");
  if (policy == "noisy_oracle") {
    s.logging_policy = LoggingPolicy::kNoisyOracle;
  } else if (policy == "random") {
    s.logging_policy = LoggingPolicy::kRandom;
  } else {
    throw std::invalid_argument("config: simulate.logging_policy must be noisy_oracle or random");
  }
  s.policy_noise = get_or<double>(obj, path, "policy_noise", s.policy_noise);
  if (s.policy_noise < 0.0) {
    throw std::invalid_argument("config: simulate.policy_noise must be >= 0");
  }
  return s;
}

ModelConfig parse_model(const json& obj, CombinerWeights* combiner) {
  const std::string path = "model.";
  reject_unknown(obj, path, {"embedding_dim", "hidden", "combiner"});
  ModelConfig m;
  m.embedding_dim = get_or<int>(obj, path, "embedding_dim", m.embedding_dim);
  m.hidden = get_or<std::vector<int>>(obj, path, "hidden", m.hidden);
  if (obj.contains("combiner")) {
    const auto& c = obj.at("combiner");
    reject_unknown(c, path + "combiner.", {"rel", "rev", "risk"});
    combiner->rel = get_or<double>(c, path + "combiner.", "rel", combiner->rel);
    combiner->rev = get_or<double>(c, path + "combiner.", "rev", combiner->rev);
    combiner->risk = get_or<double>(c, path + "combiner.", "risk", combiner->risk);
  }
  return m;
}

TrainConfig parse_train(const json& obj, const ModelConfig& model,
                        const CombinerWeights& combiner) {
  const std::string path = "train.";
  reject_unknown(obj, path,
                 {"learning_rate", "batch_size", "epochs", "K", "w_cal", "w_cf", "alpha", "tau",
                  "top_k", "reward", "epsilon_min", "min_count", "eval_fraction", "patience",
                  "lambda_fairness", "ndcg_label", "dual", "ablation"});
  TrainConfig t;
  t.model = model;
  t.combiner = combiner;
  t.learning_rate = get_or<double>(obj, path, "learning_rate", t.learning_rate);
  t.batch_size = get_or<int>(obj, path, "batch_size", t.batch_size);
  t.epochs = get_or<int>(obj, path, "epochs", t.epochs);
  t.K = get_or<int>(obj, path, "K", t.K);
  t.w_cal = get_or<double>(obj, path, "w_cal", t.w_cal);
  t.w_cf = get_or<double>(obj, path, "w_cf", t.w_cf);
  t.alpha = get_or<double>(obj, path, "alpha", t.alpha);
  t.tau = get_or<double>(obj, path, "tau", t.tau);
  t.top_k = get_or<int>(obj, path, "top_k", t.top_k);
  const std::string reward = get_or<std::string>(obj, path, "reward", "revenue");
  if (reward == "revenue") {
    t.reward = RewardKind::kRevenue;
  } else if (reward == "click") {
    t.reward = RewardKind::kClick;
  } else {
    throw std::invalid_argument("config: train.reward must be revenue or click");
  }
  t.epsilon_min = get_or<double>(obj, path, "epsilon_min", t.epsilon_min);
  t.min_count = get_or<std::int64_t>(obj, path, "min_count", t.min_count);
  t.eval_fraction = get_or<double>(obj, path, "eval_fraction", t.eval_fraction);
  t.patience = get_or<int>(obj, path, "patience", t.patience);
  t.lambda_fairness = get_or<double>(obj, path, "lambda_fairness", t.lambda_fairness);
  const std::string ndcg = get_or<std::string>(obj, path, "ndcg_label", "click");
  if (ndcg == "click") {
    t.ndcg_label = NdcgLabel::kClick;
  } else if (ndcg == "reward") {
    t.ndcg_label = NdcgLabel::kReward;
  } else {
    throw std::invalid_argument("config: train.ndcg_label must be click or reward");
  }
  if (obj.contains("dual")) {
    const auto& d = obj.at("dual");
    reject_unknown(d, path + "dual.", {"c_max", "r_max", "eta", "lambda_init", "mode"});
    t.dual.c_max = get_or<double>(d, path + "dual.", "c_max", t.dual.c_max);
    t.dual.r_max = get_or<double>(d, path + "dual.", "r_max", t.dual.r_max);
    t.dual.eta = get_or<double>(d, path + "dual.", "eta", t.dual.eta);
    t.dual.lambda_init = get_or<double>(d, path + "dual.", "lambda_init", t.dual.lambda_init);
    const std::string mode = get_or<std::string>(d, path + "dual.", "mode", "ascent");
    if (mode == "ascent") {
      t.dual.frozen = false;
    } else if (mode == "frozen") {
      t.dual.frozen = true;
    } else {
      throw std::invalid_argument("config: train.dual.mode must be ascent or frozen");
    }
  }
  if (obj.contains("ablation")) {
    const auto& a = obj.at("ablation");
    reject_unknown(a, path + "ablation.",
                   {"no_calibration", "no_constraints", "no_counterfactual"});
    t.ablation.no_calibration =
        get_or<bool>(a, path + "ablation.", "no_calibration", false);
    t.ablation.no_constraints =
        get_or<bool>(a, path + "ablation.", "no_constraints", false);
    t.ablation.no_counterfactual =
        get_or<bool>(a, path + "ablation.", "no_counterfactual", false);
  }
  return t;
}

TransferSettings parse_transfer(const json& obj) {
  const std::string path = "transfer.";
  reject_unknown(obj, path, {"train_cluster_count", "eval_cluster_count", "seeds"});
  TransferSettings t;
  t.train_cluster_count = get_or<int>(obj, path, "train_cluster_count", t.train_cluster_count);
  t.eval_cluster_count = get_or<int>(obj, path, "eval_cluster_count", t.eval_cluster_count);
  t.seeds = get_or<std::vector<std::uint64_t>>(obj, path, "seeds", t.seeds);
  return t;
}

}  // namespace

AppConfig load_config(const std::filesystem::path& path) {
  json root;
  try {
    root = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: cannot parse " + path.string() + ": " + e.what());
  }
  if (!root.is_object()) throw std::invalid_argument("config: top level must be an object");
  reject_unknown(root, "", {"seed", "simulate", "data", "model", "train", "transfer", "evaluate"});

  AppConfig cfg;
  cfg.seed = get_or<std::uint64_t>(root, "", "seed", cfg.seed);

  CombinerWeights combiner;
  ModelConfig model;
  if (root.contains("model")) model = parse_model(root.at("model"), &combiner);

  if (root.contains("simulate")) {
    cfg.simulate = parse_simulate(root.at("simulate"));
    cfg.simulate->sim.seed = cfg.seed;
  }
  if (root.contains("data")) {
    const auto& d = root.at("data");
    reject_unknown(d, "data.", {"examples", "impressions"});
    DataPaths paths;
    paths.examples = get_or<std::string>(d, "data.", "examples", "");
    paths.impressions = get_or<std::string>(d, "data.", "impressions", "");
    if (paths.examples.empty() || paths.impressions.empty()) {
      throw std::invalid_argument("config: data.examples and data.impressions are required");
    }
    cfg.data = paths;
  }
  if (root.contains("train")) {
    cfg.train = parse_train(root.at("train"), model, combiner);
    cfg.train->seed = cfg.seed;
  }
  if (root.contains("transfer")) cfg.transfer = parse_transfer(root.at("transfer"));
  if (root.contains("evaluate")) {
    const auto& e = root.at("evaluate");
    reject_unknown(e, "evaluate.", {"run"});
    const std::string run = get_or<std::string>(e, "evaluate.", "run", "");
    if (run.empty()) throw std::invalid_argument("config: evaluate.run is required");
    cfg.evaluate_run = run;
  }
  return cfg;
}

std::string config_fingerprint(const std::filesystem::path& path) {
  const std::string bytes = read_text_file(path);
  const std::uint64_t h = fnv1a64(bytes);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace calicausal
