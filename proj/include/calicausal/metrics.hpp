#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "calicausal/counterfactual.hpp"
#include "calicausal/model.hpp"
#include "calicausal/types.hpp"

namespace calicausal {

// Rank-based (Mann-Whitney) AUC; tied scores receive half credit.
// Throws when only one class is present.
double auc(std::span<const double> scores, std::span<const int> labels);

// Gain is the raw relevance, discount 1/log2(pos+1), normalized by the ideal
// ordering. An all-zero list scores 0.
double ndcg_at_k(std::span<const double> ranked_relevances, int k);

// Which relevance feeds NDCG.
enum class NdcgLabel { kClick, kReward };

// SNIPS utility over the impressions the model ranks into each slate's hard
// top k (ties broken by example id).
UtilityEstimate utility_at_k(const ModelParams& params, const CombinerWeights& combiner,
                             const std::vector<Example>& examples,
                             const std::unordered_map<std::int64_t, std::size_t>& example_index,
                             const std::vector<LoggedImpression>& impressions,
                             const PropensityTable& table, int k,
                             RewardKind reward = RewardKind::kRevenue);

// Same selection rule with an arbitrary per-example scorer; the model variant
// delegates here and oracle rankers plug in directly.
UtilityEstimate utility_at_k_scored(
    const std::function<double(const Example&)>& scorer, const std::vector<Example>& examples,
    const std::unordered_map<std::int64_t, std::size_t>& example_index,
    const std::vector<LoggedImpression>& impressions, const PropensityTable& table, int k,
    RewardKind reward = RewardKind::kRevenue);

struct EvalReport {
  double auc_rel = 0.0;
  std::optional<double> auc_rev;  // absent when the clicked subset is single-class
  double ndcg_at_k = 0.0;
  double ece_rel = 0.0;
  std::optional<double> ece_rev;
  UtilityEstimate utility;
  int k = 10;
  int ece_bins = 10;
  std::string reward_kind;
  std::string config_fingerprint;
  std::uint64_t seed = 0;
};

void write_eval_report_json(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_eval_report_json(const std::filesystem::path& path);

// One row of the comparison table, Table-style column order:
// AUC, NDCG@k, ECE (lower better), Utility@k.
std::string format_report_row(const std::string& name, const EvalReport& report);
std::string format_report_header(int k);

}  // namespace calicausal
