#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "calicausal/calibration.hpp"
#include "calicausal/constraints.hpp"
#include "calicausal/counterfactual.hpp"
#include "calicausal/metrics.hpp"
#include "calicausal/model.hpp"
#include "calicausal/simulator.hpp"
#include "calicausal/types.hpp"

namespace calicausal {

struct DualConfig {
  double c_max = std::numeric_limits<double>::quiet_NaN();  // required, no default
  double r_max = std::numeric_limits<double>::quiet_NaN();  // required, no default
  double eta = 0.01;
  double lambda_init = 0.5;
  bool frozen = false;  // keep multipliers fixed instead of dual ascent
};

struct AblationFlags {
  bool no_calibration = false;
  bool no_constraints = false;
  bool no_counterfactual = false;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 128;  // slates per batch
  int epochs = 30;
  int K = 20;            // calibration buckets
  double w_cal = 1.0;
  double w_cf = 1.0;
  double alpha = 0.1;    // variance regularization
  double tau = 0.1;      // soft top-k temperature
  int top_k = 10;
  RewardKind reward = RewardKind::kRevenue;
  double epsilon_min = kDefaultEpsilonMin;
  std::int64_t min_count = kDefaultMinCount;
  double eval_fraction = 0.2;
  int patience = 5;
  std::uint64_t seed = 1;
  double lambda_fairness = 0.0;  // optional exposure hinge, off by default
  NdcgLabel ndcg_label = NdcgLabel::kClick;
  DualConfig dual;
  AblationFlags ablation;
  ModelConfig model;
  CombinerWeights combiner;

  void validate() const;
};

struct Dataset {
  std::vector<Example> examples;
  std::unordered_map<std::int64_t, std::size_t> index;  // example id -> offset
  std::vector<LoggedImpression> impressions;

  static Dataset from(std::vector<Example> ex, std::vector<LoggedImpression> log);
};

struct LossBreakdown {
  double total = 0.0;
  double point = 0.0;  // BCE: rel vs clicks, rev vs conversions on clicks
  double cal = 0.0;    // unweighted bucket L1
  double con = 0.0;    // hinge penalty
  double cf = 0.0;     // unweighted counterfactual loss
  double cpc = 0.0;
  double mean_risk = 0.0;
  double srel_sum = 0.0;
  double bid_srel_sum = 0.0;
};

// Shared loss inputs that stay frozen across an epoch.
struct LossContext {
  const Dataset* data = nullptr;
  const BucketKey* bucket_key = nullptr;
  const PropensityTable* table = nullptr;
  CombinerWeights combiner;
};

// L = L_point + w_cal*L_cal + L_con + w_cf*L_cf over one batch of whole
// slates. Throws with component attribution when any term is non-finite.
std::pair<LossBreakdown, GradientBundle> total_loss(const std::vector<LoggedImpression>& batch,
                                                    const ModelParams& params,
                                                    const DualState& duals,
                                                    const TrainConfig& cfg,
                                                    const LossContext& ctx);

struct EpochRecord {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_point = 0.0;
  double loss_cal = 0.0;
  double loss_con = 0.0;
  double loss_cf = 0.0;
  double cpc = 0.0;
  double cpc_violation = 0.0;
  double mean_risk = 0.0;
  double risk_violation = 0.0;
  double lambda_c = 0.0;
  double lambda_r = 0.0;
  double eval_auc_rel = 0.0;
  double eval_ece_rel = 0.0;
  std::uint64_t batch_hash = 0;  // order-sensitive hash of the epoch's batches
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, TrainHistory history)
      : std::runtime_error(what), history(std::move(history)) {}
  TrainHistory history;
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
  PropensityTable table;
  BucketKey bucket_key;
  EvalReport report;
  std::vector<LoggedImpression> eval_impressions;
};

// Deterministic slate-level split; both train() and re-evaluation reconstruct
// the same held-out set from the seed.
struct SlateSplit {
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> eval_ids;
};

SlateSplit split_slates(std::size_t n_slates, const TrainConfig& cfg);

TrainResult train(const Dataset& data, const TrainConfig& cfg);

std::vector<BucketStat> eval_bucket_stats(const ModelParams& params, const Dataset& data,
                                          const std::vector<LoggedImpression>& impressions,
                                          const BucketKey& key);

// Evaluation on an explicit impression set; used for the held-out split at
// train time and for cross-segment evaluation.
EvalReport evaluate_model(const ModelParams& params, const Dataset& data,
                          const std::vector<LoggedImpression>& impressions,
                          const PropensityTable& table, const TrainConfig& cfg);

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);
void write_constraint_trace_csv(const std::filesystem::path& path, const TrainHistory& history);

struct AblationVariant {
  std::string name;
  AblationFlags flags;
  EvalReport report;
  std::vector<std::uint64_t> batch_hashes;  // per epoch
};

// Trains the full model plus the three single-component-removed variants on
// identical data, seed and batch order.
std::vector<AblationVariant> run_ablation(const Dataset& data, const TrainConfig& base,
                                          const std::filesystem::path& out_dir = {});

struct TransferConfig {
  SimulatorConfig sim;        // transfer worlds default to 10 clusters
  TrainConfig train;
  int train_cluster_count = 7;
  int eval_cluster_count = 3;
  std::vector<std::uint64_t> seeds = {101, 102, 103, 104, 105};
};

struct TransferSeedResult {
  std::uint64_t seed = 0;
  double auc_in = 0.0;
  double auc_cross = 0.0;
  double retention = 0.0;
};

struct TransferResult {
  std::vector<TransferSeedResult> rows;
  double mean_retention = 0.0;
  double std_retention = 0.0;
};

TransferResult run_transfer(const TransferConfig& cfg);

// Number of worker threads: CALICAUSAL_THREADS when set, otherwise the
// hardware concurrency.
int thread_cap();

}  // namespace calicausal
