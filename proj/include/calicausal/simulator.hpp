#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <utility>
#include <vector>

#include "calicausal/rng.hpp"
#include "calicausal/types.hpp"

namespace calicausal {

struct BidParams {
  double mu = 0.0;
  double sigma = 0.4;
};

// Fixed behavioral ground truth of one synthetic world. Everything here is
// hidden from the learner and available to oracle checks.
struct GroundTruth {
  std::vector<double> examination;   // e*(pos), index 0 == position 1
  std::vector<BidParams> bid_params; // per cluster
  double base_conversion_rate = 0.10;

  double examination_at(int position) const;  // throws if position uncovered
};

// Hidden linear-in-features behavior model. Latent category values and the
// weight vectors are drawn once per world seed.
class LatentModel {
 public:
  explicit LatentModel(std::uint64_t seed);

  double ctr(const Example& x) const;   // sigmoid of hidden linear score
  double cvr(const Example& x) const;   // base rate attained at score zero
  double risk(const Example& x) const;

  // Feature map shared by the three scores: centered dense features followed
  // by per-slot latent category values.
  std::vector<double> phi(const Example& x) const;

 private:
  double dot_phi(const std::vector<double>& w, const Example& x) const;

  std::vector<double> cat_latent_;  // [slot * kVocabPerSlot + value]
  std::vector<double> ctr_w_, cvr_w_, risk_w_;
  double ctr_bias_ = 0.0;
};

struct SimulatorConfig {
  std::int64_t n = 20000;
  std::uint64_t seed = 1;
  int clusters = 4;
  double eta = 1.0;                   // e*(pos) = pos^-eta
  double randomized_fraction = 0.05;  // uniformly shuffled slates
  int slate_size = 16;                // shown positions per slate
  int candidates_per_slate = 16;
  std::int64_t n_slates = 2000;
  std::vector<BidParams> bid_params;  // empty -> per-cluster defaults

  void validate() const;  // throws std::invalid_argument with the bad field
};

GroundTruth make_ground_truth(const SimulatorConfig& cfg);

// Draws n examples deterministically from (seed, n_clusters). Features are
// i.i.d. per example; segments come from a balanced k-means over the dense
// features, so cluster sizes are even to within one.
std::vector<Example> generate_examples(std::int64_t n, std::uint64_t seed, int n_clusters);

// Conversion happens only on the clicked subset.
bool synthesize_cvr(const Example& x, bool clicked, Rng& rng);

double assign_bid(const Example& x, const GroundTruth& gt, Rng& rng);

struct SlateLogParams {
  std::int64_t n_slates = 2000;
  int slate_size = 16;
  int candidates_per_slate = 16;
  double randomized_fraction = 0.05;
};

// Simulates the logging policy: per slate, candidates are sampled from the
// pool and ranked by policy score (or uniformly shuffled for the randomized
// slice), then clicks factorize as examination x relevance.
std::vector<LoggedImpression> simulate_slate_log(const std::vector<Example>& examples,
                                                 const std::vector<double>& policy_scores,
                                                 const GroundTruth& gt,
                                                 const SlateLogParams& params,
                                                 std::uint64_t seed);

// Partition by segment id. Cluster sets must be disjoint and nonempty.
std::pair<std::vector<Example>, std::vector<Example>> cluster_split(
    const std::vector<Example>& examples, const std::vector<int>& train_clusters,
    const std::vector<int>& eval_clusters);

// CSV schemas are fixed; see README for column lists.
void write_examples_csv(const std::filesystem::path& path, const std::vector<Example>& examples);
std::vector<Example> read_examples_csv(const std::filesystem::path& path);

void write_impressions_csv(const std::filesystem::path& path,
                           const std::vector<LoggedImpression>& log);
std::vector<LoggedImpression> read_impressions_csv(const std::filesystem::path& path);

}  // namespace calicausal
