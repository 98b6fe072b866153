#include "calicausal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "calicausal/csv.hpp"

namespace calicausal {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: size mismatch");
  std::int64_t n_pos = 0, n_neg = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("auc: labels must be 0 or 1");
    y == 1 ? ++n_pos : ++n_neg;
  }
  if (n_pos == 0 || n_neg == 0) {
    throw std::invalid_argument("auc: both classes must be present");
  }

  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average ranks over tie groups, then the Mann-Whitney U statistic.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) rank_sum_pos += avg_rank;
    }
    i = j + 1;
  }
  const double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double ndcg_at_k(std::span<const double> ranked_relevances, int k) {
  if (k < 1) throw std::invalid_argument("ndcg_at_k: k must be >= 1");
  for (double r : ranked_relevances) {
    if (r < 0.0) throw std::invalid_argument("ndcg_at_k: relevances must be nonnegative");
  }
  const auto depth = std::min<std::size_t>(static_cast<std::size_t>(k), ranked_relevances.size());
  double dcg = 0.0;
  for (std::size_t i = 0; i < depth; ++i) {
    dcg += ranked_relevances[i] / std::log2(static_cast<double>(i) + 2.0);
  }
  std::vector<double> ideal(ranked_relevances.begin(), ranked_relevances.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double idcg = 0.0;
  for (std::size_t i = 0; i < depth; ++i) {
    idcg += ideal[i] / std::log2(static_cast<double>(i) + 2.0);
  }
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

UtilityEstimate utility_at_k_scored(
    const std::function<double(const Example&)>& scorer, const std::vector<Example>& examples,
    const std::unordered_map<std::int64_t, std::size_t>& example_index,
    const std::vector<LoggedImpression>& impressions, const PropensityTable& table, int k,
    RewardKind reward) {
  if (k < 1) throw std::invalid_argument("utility_at_k: k must be >= 1");
  const auto slates = group_slates(impressions);
  std::vector<LoggedImpression> kept;
  for (const auto& slate : slates) {
    std::vector<double> scores;
    std::vector<std::int64_t> ids;
    scores.reserve(slate.size());
    for (std::size_t i = slate.begin; i < slate.end; ++i) {
      const auto it = example_index.find(impressions[i].example_id);
      if (it == example_index.end()) {
        throw std::invalid_argument("utility_at_k: impression references unknown example " +
                                    std::to_string(impressions[i].example_id));
      }
      scores.push_back(scorer(examples[it->second]));
      ids.push_back(impressions[i].example_id);
    }
    const auto order = rank_order(scores, ids);
    const auto depth = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
    for (std::size_t r = 0; r < depth; ++r) {
      kept.push_back(impressions[slate.begin + order[r]]);
    }
  }
  if (kept.empty()) {
    throw std::runtime_error("utility_at_k: empty top-k intersection with the log");
  }
  return snips_estimate(kept, table, reward);
}

UtilityEstimate utility_at_k(const ModelParams& params, const CombinerWeights& combiner,
                             const std::vector<Example>& examples,
                             const std::unordered_map<std::int64_t, std::size_t>& example_index,
                             const std::vector<LoggedImpression>& impressions,
                             const PropensityTable& table, int k, RewardKind reward) {
  return utility_at_k_scored(
      [&](const Example& ex) { return final_ranking_score(forward(params, ex), combiner); },
      examples, example_index, impressions, table, k, reward);
}

namespace {

nlohmann::json estimate_to_json(const UtilityEstimate& est) {
  return {{"estimator", est.estimator}, {"value", est.value},    {"variance", est.variance},
          {"ess", est.ess},             {"n", est.n}};
}

UtilityEstimate estimate_from_json(const nlohmann::json& j) {
  UtilityEstimate est;
  est.estimator = j.at("estimator").get<std::string>();
  est.value = j.at("value").get<double>();
  est.variance = j.at("variance").get<double>();
  est.ess = j.at("ess").get<double>();
  est.n = j.at("n").get<std::int64_t>();
  return est;
}

}  // namespace

void write_eval_report_json(const std::filesystem::path& path, const EvalReport& report) {
  nlohmann::json j;
  j["auc"] = {{"rel", report.auc_rel}};
  j["auc"]["rev"] = report.auc_rev ? nlohmann::json(*report.auc_rev) : nlohmann::json(nullptr);
  j["ndcg_at_k"] = report.ndcg_at_k;
  j["ece"] = {{"rel", report.ece_rel}};
  j["ece"]["rev"] = report.ece_rev ? nlohmann::json(*report.ece_rev) : nlohmann::json(nullptr);
  j["utility_at_k"] = estimate_to_json(report.utility);
  j["k"] = report.k;
  j["ece_bins"] = report.ece_bins;
  j["reward_kind"] = report.reward_kind;
  j["config_fingerprint"] = report.config_fingerprint;
  j["seed"] = report.seed;
  write_text_file(path, j.dump(1) + "\n");
}

EvalReport read_eval_report_json(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(read_text_file(path));
  EvalReport r;
  r.auc_rel = j.at("auc").at("rel").get<double>();
  if (!j.at("auc").at("rev").is_null()) r.auc_rev = j.at("auc").at("rev").get<double>();
  r.ndcg_at_k = j.at("ndcg_at_k").get<double>();
  r.ece_rel = j.at("ece").at("rel").get<double>();
  if (!j.at("ece").at("rev").is_null()) r.ece_rev = j.at("ece").at("rev").get<double>();
  r.utility = estimate_from_json(j.at("utility_at_k"));
  r.k = j.at("k").get<int>();
  r.ece_bins = j.at("ece_bins").get<int>();
  r.reward_kind = j.at("reward_kind").get<std::string>();
  r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

namespace {

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::string format_report_header(int k) {
  return pad("run", 24) + pad("AUC", 12) + pad("NDCG@" + std::to_string(k), 12) +
         pad("ECE(down)", 12) + pad("Utility@" + std::to_string(k), 12);
}

std::string format_report_row(const std::string& name, const EvalReport& report) {
  return pad(name, 24) + pad(fixed6(report.auc_rel), 12) + pad(fixed6(report.ndcg_at_k), 12) +
         pad(fixed6(report.ece_rel), 12) + pad(fixed6(report.utility.value), 12);
}

}  // namespace calicausal
