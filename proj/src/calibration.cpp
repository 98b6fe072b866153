#include "calicausal/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "calicausal/csv.hpp"

namespace calicausal {

std::vector<int> BucketAssignment::empty_buckets() const {
  std::vector<int> out;
  for (int k = 0; k < K; ++k) {
    if (counts[static_cast<std::size_t>(k)] == 0) out.push_back(k);
  }
  return out;
}

int BucketKey::bucket_of(int segment, double first_dense) const {
  const int S = static_cast<int>(thresholds.size());
  if (segment < 0) throw std::invalid_argument("bucket_of: negative segment");
  if (segment >= S && bins_per_segment == 1) {
    // More segments than buckets: fold by modulus.
    return segment % K;
  }
  if (segment >= S) throw std::invalid_argument("bucket_of: segment beyond key range");
  const auto& t = thresholds[static_cast<std::size_t>(segment)];
  const int bin = static_cast<int>(std::upper_bound(t.begin(), t.end(), first_dense) - t.begin());
  return std::min(segment * bins_per_segment + bin, K - 1);
}

BucketKey make_bucket_key(const std::vector<Example>& examples, int K) {
  if (K < 1) throw std::invalid_argument("make_bucket_key: K must be >= 1");
  int max_segment = 0;
  for (const auto& ex : examples) max_segment = std::max(max_segment, ex.segment);
  const int S = max_segment + 1;

  BucketKey key;
  key.K = K;
  if (S > K) {
    // Not enough buckets for one per segment; only the segment id is used.
    key.bins_per_segment = 1;
    key.thresholds.clear();
    return key;
  }
  const int Q = std::max(1, K / S);
  key.bins_per_segment = Q;
  key.thresholds.assign(static_cast<std::size_t>(S), {});
  if (Q == 1) return key;

  std::vector<std::vector<double>> values(static_cast<std::size_t>(S));
  for (const auto& ex : examples) {
    values[static_cast<std::size_t>(ex.segment)].push_back(ex.dense[0]);
  }
  for (int s = 0; s < S; ++s) {
    auto& v = values[static_cast<std::size_t>(s)];
    std::sort(v.begin(), v.end());
    auto& t = key.thresholds[static_cast<std::size_t>(s)];
    for (int q = 1; q < Q; ++q) {
      if (v.empty()) break;
      const std::size_t rank =
          std::min(v.size() - 1, static_cast<std::size_t>(v.size() * static_cast<std::size_t>(q) /
                                                          static_cast<std::size_t>(Q)));
      t.push_back(v[rank]);
    }
  }
  return key;
}

BucketAssignment assign_with_key(const std::vector<Example>& examples, const BucketKey& key) {
  BucketAssignment a;
  a.K = key.K;
  a.key_desc = "(segment, quantile of dense_0 within segment)";
  a.bucket.reserve(examples.size());
  a.counts.assign(static_cast<std::size_t>(key.K), 0);
  for (const auto& ex : examples) {
    const int b = key.bucket_of(ex.segment, ex.dense[0]);
    a.bucket.push_back(b);
    ++a.counts[static_cast<std::size_t>(b)];
  }
  return a;
}

BucketAssignment assign_buckets(const std::vector<Example>& examples, int K) {
  return assign_with_key(examples, make_bucket_key(examples, K));
}

CalibrationResult calibration_loss(const std::vector<std::vector<double>>& predictions,
                                   const std::vector<std::vector<double>>& labels,
                                   const std::vector<std::vector<int>>& buckets, int K) {
  if (predictions.size() != labels.size() || predictions.size() != buckets.size()) {
    throw std::invalid_argument("calibration_loss: task count mismatch");
  }
  CalibrationResult res;
  res.dpred.resize(predictions.size());
  for (std::size_t t = 0; t < predictions.size(); ++t) {
    const auto& pred = predictions[t];
    const auto& lab = labels[t];
    const auto& bkt = buckets[t];
    if (pred.size() != lab.size() || pred.size() != bkt.size()) {
      throw std::invalid_argument("calibration_loss: length mismatch in task " +
                                  std::to_string(t));
    }
    res.dpred[t].assign(pred.size(), 0.0);

    std::vector<double> sum_pred(static_cast<std::size_t>(K), 0.0);
    std::vector<double> sum_label(static_cast<std::size_t>(K), 0.0);
    std::vector<std::int64_t> count(static_cast<std::size_t>(K), 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const int b = bkt[i];
      if (b < 0 || b >= K) throw std::invalid_argument("calibration_loss: bucket id out of range");
      sum_pred[static_cast<std::size_t>(b)] += pred[i];
      sum_label[static_cast<std::size_t>(b)] += lab[i];
      ++count[static_cast<std::size_t>(b)];
    }

    std::vector<double> grad_per_member(static_cast<std::size_t>(K), 0.0);
    for (int k = 0; k < K; ++k) {
      const auto c = count[static_cast<std::size_t>(k)];
      if (c == 0) continue;  // empty buckets contribute nothing
      const double gap = (sum_pred[static_cast<std::size_t>(k)] -
                          sum_label[static_cast<std::size_t>(k)]) / static_cast<double>(c);
      res.loss += std::abs(gap);
      // Subgradient at the kink is zero; gaps at rounding-noise scale count
      // as the kink.
      const double sign = gap > 1e-12 ? 1.0 : (gap < -1e-12 ? -1.0 : 0.0);
      grad_per_member[static_cast<std::size_t>(k)] = sign / static_cast<double>(c);
    }
    for (std::size_t i = 0; i < pred.size(); ++i) {
      res.dpred[t][i] = grad_per_member[static_cast<std::size_t>(bkt[i])];
    }
  }
  return res;
}

std::vector<BucketStat> bucket_stats(const std::vector<std::string>& task_names,
                                     const std::vector<std::vector<double>>& predictions,
                                     const std::vector<std::vector<double>>& labels,
                                     const std::vector<std::vector<int>>& buckets, int K) {
  if (task_names.size() != predictions.size()) {
    throw std::invalid_argument("bucket_stats: task name count mismatch");
  }
  std::vector<BucketStat> out;
  for (std::size_t t = 0; t < predictions.size(); ++t) {
    std::vector<double> sum_pred(static_cast<std::size_t>(K), 0.0);
    std::vector<double> sum_label(static_cast<std::size_t>(K), 0.0);
    std::vector<std::int64_t> count(static_cast<std::size_t>(K), 0);
    for (std::size_t i = 0; i < predictions[t].size(); ++i) {
      const auto b = static_cast<std::size_t>(buckets[t][i]);
      sum_pred[b] += predictions[t][i];
      sum_label[b] += labels[t][i];
      ++count[b];
    }
    for (int k = 0; k < K; ++k) {
      BucketStat s;
      s.task = task_names[t];
      s.bucket = k;
      s.count = count[static_cast<std::size_t>(k)];
      if (s.count > 0) {
        s.mean_pred = sum_pred[static_cast<std::size_t>(k)] / static_cast<double>(s.count);
        s.empirical_rate = sum_label[static_cast<std::size_t>(k)] / static_cast<double>(s.count);
        s.abs_gap = std::abs(s.mean_pred - s.empirical_rate);
      }
      out.push_back(s);
    }
  }
  return out;
}

void write_bucket_report_csv(const std::filesystem::path& path,
                             const std::vector<BucketStat>& stats) {
  CsvTable t;
  t.header = {"task", "bucket", "count", "mean_pred", "empirical_rate", "abs_gap"};
  for (const auto& s : stats) {
    t.rows.push_back({s.task, std::to_string(s.bucket), std::to_string(s.count),
                      format_double(s.mean_pred), format_double(s.empirical_rate),
                      format_double(s.abs_gap)});
  }
  write_csv(path, t);
}

double ece(const std::vector<double>& predictions, const std::vector<double>& labels,
           int n_bins) {
  if (predictions.empty()) throw std::invalid_argument("ece: empty input");
  if (predictions.size() != labels.size()) throw std::invalid_argument("ece: length mismatch");
  if (n_bins < 1) throw std::invalid_argument("ece: n_bins must be >= 1");

  std::vector<double> sum_pred(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> sum_label(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<std::int64_t> count(static_cast<std::size_t>(n_bins), 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double p = predictions[i];
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("ece: prediction outside [0, 1]");
    int b = static_cast<int>(std::ceil(p * n_bins)) - 1;
    b = std::clamp(b, 0, n_bins - 1);
    sum_pred[static_cast<std::size_t>(b)] += p;
    sum_label[static_cast<std::size_t>(b)] += labels[i];
    ++count[static_cast<std::size_t>(b)];
  }
  const double n = static_cast<double>(predictions.size());
  double acc = 0.0;
  for (int b = 0; b < n_bins; ++b) {
    const auto c = count[static_cast<std::size_t>(b)];
    if (c == 0) continue;
    const double conf = sum_pred[static_cast<std::size_t>(b)] / static_cast<double>(c);
    const double rate = sum_label[static_cast<std::size_t>(b)] / static_cast<double>(c);
    acc += (static_cast<double>(c) / n) * std::abs(rate - conf);
  }
  return acc;
}

}  // namespace calicausal
