#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "calicausal/types.hpp"

namespace calicausal {

struct PropensityEntry {
  int position = 1;
  double propensity = 1.0;       // clipped to [epsilon_min, 1]
  double clicks = 0.0;
  double expected_clicks = 0.0;  // sum of reference full-examination CTRs
  std::int64_t count = 0;
};

// Per-position examination propensities, normalized so position 1 is 1.
struct PropensityTable {
  double epsilon_min = 0.01;
  std::vector<PropensityEntry> rows;  // positions contiguous from 1

  double at(int position) const;  // throws on uncovered position
  int max_position() const { return static_cast<int>(rows.size()); }
};

// Builds a table with exact values; positions run 1..values.size().
PropensityTable exact_propensity_table(std::span<const double> values,
                                       double epsilon_min = 0.0);

inline constexpr double kDefaultEpsilonMin = 0.01;
inline constexpr std::int64_t kDefaultMinCount = 50;

// Examination propensities from the randomized slice: observed clicks over
// expected full-examination clicks per position, normalized to position 1 and
// clipped to [epsilon_min, 1]. Under a uniformly shuffled slice the reference
// model's overall scale cancels in the normalization, so a constant reference
// is valid; a per-example CTR reference reduces variance.
PropensityTable estimate_propensities(
    const std::vector<LoggedImpression>& randomized_impressions,
    const std::function<double(std::int64_t example_id)>& reference_ctr,
    double epsilon_min = kDefaultEpsilonMin, std::int64_t min_count = kDefaultMinCount);

struct UtilityEstimate {
  double value = 0.0;
  double variance = 0.0;  // delta-method for SNIPS, weighted-term variance for IPS
  double ess = 0.0;       // (sum w)^2 / sum w^2
  std::int64_t n = 0;
  std::string estimator;  // "IPS" or "SNIPS"
};

// Core estimators over explicit (reward, weight) arrays with w = 1/propensity.
UtilityEstimate ips_core(std::span<const double> rewards, std::span<const double> weights);
UtilityEstimate snips_core(std::span<const double> rewards, std::span<const double> weights);

UtilityEstimate ips_estimate(const std::vector<LoggedImpression>& impressions,
                             const PropensityTable& table,
                             RewardKind reward = RewardKind::kRevenue);
UtilityEstimate snips_estimate(const std::vector<LoggedImpression>& impressions,
                               const PropensityTable& table,
                               RewardKind reward = RewardKind::kRevenue);

// Variance-regularized counterfactual loss -U + alpha*Var(U) where U is the
// SNIPS estimate of the batch after each impression's reward is scaled by the
// model's soft probability of ranking it into the slate top k (temperature-tau
// softmax, weight k*softmax capped at 1). Returns the gradient with respect to
// each impression's combiner score.
struct CfLossResult {
  double loss = 0.0;
  UtilityEstimate weighted_estimate;
  std::vector<double> d_score;  // per impression
};

struct CfLossConfig {
  double alpha = 0.1;
  int top_k = 10;
  double tau = 0.1;
  RewardKind reward = RewardKind::kRevenue;
};

CfLossResult cf_loss(const std::vector<LoggedImpression>& impressions,
                     const std::vector<SlateSpan>& slates, std::span<const double> scores,
                     const PropensityTable& table, const CfLossConfig& cfg);

void write_propensity_csv(const std::filesystem::path& path, const PropensityTable& table);
PropensityTable read_propensity_csv(const std::filesystem::path& path);

void write_estimate_json(const std::filesystem::path& path, const UtilityEstimate& est,
                         double epsilon_min);

}  // namespace calicausal
