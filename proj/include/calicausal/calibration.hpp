#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "calicausal/types.hpp"

namespace calicausal {

// Context-bucket assignment for training-time scale calibration. The default
// key is (segment id, within-segment quantile of the first dense feature).
struct BucketAssignment {
  int K = 1;
  std::vector<int> bucket;  // one id in [0, K) per input row
  std::string key_desc;
  std::vector<int> counts;  // per bucket

  std::vector<int> empty_buckets() const;
};

// Thresholds that reproduce the assignment on new rows with the same key.
struct BucketKey {
  int K = 1;
  int bins_per_segment = 1;
  std::vector<std::vector<double>> thresholds;  // per segment, ascending

  int bucket_of(int segment, double first_dense) const;
};

BucketKey make_bucket_key(const std::vector<Example>& examples, int K);

BucketAssignment assign_buckets(const std::vector<Example>& examples, int K);
BucketAssignment assign_with_key(const std::vector<Example>& examples, const BucketKey& key);

// L1 bucket loss: sum over tasks and buckets of |mean prediction - empirical
// rate|, empty buckets skipped. The subgradient at zero gap is zero; each
// prediction in bucket k receives sign(gap) / |B_k|.
struct CalibrationResult {
  double loss = 0.0;
  std::vector<std::vector<double>> dpred;  // same layout as predictions
};

CalibrationResult calibration_loss(const std::vector<std::vector<double>>& predictions,
                                   const std::vector<std::vector<double>>& labels,
                                   const std::vector<std::vector<int>>& buckets, int K);

struct BucketStat {
  std::string task;
  int bucket = 0;
  std::int64_t count = 0;
  double mean_pred = 0.0;
  double empirical_rate = 0.0;
  double abs_gap = 0.0;
};

std::vector<BucketStat> bucket_stats(const std::vector<std::string>& task_names,
                                     const std::vector<std::vector<double>>& predictions,
                                     const std::vector<std::vector<double>>& labels,
                                     const std::vector<std::vector<int>>& buckets, int K);

void write_bucket_report_csv(const std::filesystem::path& path,
                             const std::vector<BucketStat>& stats);

// Expected calibration error over equal-width bins on [0, 1]. Bins are
// right-closed, so a prediction of exactly 1.0 lands in the last bin.
double ece(const std::vector<double>& predictions, const std::vector<double>& labels, int n_bins);

// Fixed bin count used for all reported ECE numbers.
inline constexpr int kReportEceBins = 10;

}  // namespace calicausal
