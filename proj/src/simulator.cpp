#include "calicausal/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "calicausal/csv.hpp"

namespace calicausal {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Latent CTR scale: weights sized so the hidden score has stddev near 1.1 and
// the population mean CTR lands around 0.3, which keeps desk-scale logs dense
// enough in clicks to train on.
constexpr double kCtrWeightSigma = 0.674;
constexpr double kCtrBias = -1.03;
constexpr double kCvrWeightSigma = 0.6;
constexpr double kRiskWeightSigma = 0.8;
constexpr double kRevenueLogSigma = 0.3;

}  // namespace

double GroundTruth::examination_at(int position) const {
  if (position < 1 || static_cast<std::size_t>(position) > examination.size()) {
    throw std::invalid_argument("GroundTruth: no examination probability for position " +
                                std::to_string(position));
  }
  return examination[static_cast<std::size_t>(position - 1)];
}

LatentModel::LatentModel(std::uint64_t seed) {
  const int dim = kDenseDim + kCatSlots;
  Rng lat(derive_seed(seed, "latent/cats"));
  cat_latent_.resize(kVocab);
  for (auto& v : cat_latent_) v = lat.uniform(-1.0, 1.0);

  Rng wrng(derive_seed(seed, "latent/weights"));
  ctr_w_.resize(dim);
  cvr_w_.resize(dim);
  risk_w_.resize(dim);
  for (auto& w : ctr_w_) w = wrng.normal(0.0, kCtrWeightSigma);
  for (auto& w : cvr_w_) w = wrng.normal(0.0, kCvrWeightSigma);
  for (auto& w : risk_w_) w = wrng.normal(0.0, kRiskWeightSigma);
  ctr_bias_ = kCtrBias;
}

std::vector<double> LatentModel::phi(const Example& x) const {
  std::vector<double> out(kDenseDim + kCatSlots);
  for (int i = 0; i < kDenseDim; ++i) out[static_cast<std::size_t>(i)] = x.dense[static_cast<std::size_t>(i)] - 0.5;
  for (int j = 0; j < kCatSlots; ++j) {
    const int c = x.cats[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(kDenseDim + j)] = cat_latent_[static_cast<std::size_t>(j * kVocabPerSlot + c)];
  }
  return out;
}

double LatentModel::dot_phi(const std::vector<double>& w, const Example& x) const {
  double acc = 0.0;
  for (int i = 0; i < kDenseDim; ++i) {
    acc += w[static_cast<std::size_t>(i)] * (x.dense[static_cast<std::size_t>(i)] - 0.5);
  }
  for (int j = 0; j < kCatSlots; ++j) {
    const int c = x.cats[static_cast<std::size_t>(j)];
    acc += w[static_cast<std::size_t>(kDenseDim + j)] *
           cat_latent_[static_cast<std::size_t>(j * kVocabPerSlot + c)];
  }
  return acc;
}

double LatentModel::ctr(const Example& x) const { return sigmoid(dot_phi(ctr_w_, x) + ctr_bias_); }

double LatentModel::cvr(const Example& x) const {
  const double p = 0.10 * 2.0 * sigmoid(dot_phi(cvr_w_, x));
  return std::clamp(p, 0.0, 1.0);
}

double LatentModel::risk(const Example& x) const { return sigmoid(dot_phi(risk_w_, x)); }

void SimulatorConfig::validate() const {
  if (n < 1) throw std::invalid_argument("simulate.n: must be >= 1");
  if (clusters < 2) throw std::invalid_argument("simulate.clusters: must be >= 2");
  if (eta < 0.0) throw std::invalid_argument("simulate.eta: must be >= 0");
  if (randomized_fraction < 0.0 || randomized_fraction > 1.0) {
    throw std::invalid_argument("simulate.randomized_fraction: must be in [0, 1]");
  }
  if (slate_size < 1) throw std::invalid_argument("simulate.slate_size: must be >= 1");
  if (candidates_per_slate < slate_size) {
    throw std::invalid_argument("simulate.candidates_per_slate: must be >= slate_size");
  }
  if (candidates_per_slate > n) {
    throw std::invalid_argument("simulate.candidates_per_slate: exceeds example count");
  }
  if (n_slates < 1) throw std::invalid_argument("simulate.n_slates: must be >= 1");
  if (!bid_params.empty() && bid_params.size() != static_cast<std::size_t>(clusters)) {
    throw std::invalid_argument("simulate.bid_params: need one {mu, sigma} per cluster");
  }
  for (const auto& bp : bid_params) {
    if (bp.sigma < 0.0) throw std::invalid_argument("simulate.bid_params: sigma must be >= 0");
  }
}

GroundTruth make_ground_truth(const SimulatorConfig& cfg) {
  cfg.validate();
  GroundTruth gt;
  gt.examination.resize(static_cast<std::size_t>(cfg.slate_size));
  for (int p = 1; p <= cfg.slate_size; ++p) {
    gt.examination[static_cast<std::size_t>(p - 1)] = std::pow(static_cast<double>(p), -cfg.eta);
  }
  if (cfg.bid_params.empty()) {
    // Cluster-dependent bid levels so CPC has structure the model can act on.
    gt.bid_params.resize(static_cast<std::size_t>(cfg.clusters));
    for (int k = 0; k < cfg.clusters; ++k) {
      gt.bid_params[static_cast<std::size_t>(k)] = {-0.3 + 0.15 * k, 0.4};
    }
  } else {
    gt.bid_params = cfg.bid_params;
  }
  gt.base_conversion_rate = 0.10;
  return gt;
}

namespace {

// Balanced k-means over dense features: a few Lloyd iterations, then a
// capacity-constrained nearest-centroid pass so cluster sizes are even.
std::vector<int> segment_examples(std::vector<Example>& examples, int n_clusters,
                                  std::uint64_t seed) {
  const std::size_t n = examples.size();
  const std::size_t k = static_cast<std::size_t>(n_clusters);
  Rng rng(derive_seed(seed, "kmeans"));

  std::vector<std::array<double, kDenseDim>> centroids(k);
  {
    auto picks = rng.sample_without_replacement(n, std::min(n, k));
    for (std::size_t c = 0; c < k; ++c) {
      centroids[c] = examples[picks[c % picks.size()]].dense;
    }
  }

  auto dist2 = [](const std::array<double, kDenseDim>& a, const std::array<double, kDenseDim>& b) {
    double acc = 0.0;
    for (int i = 0; i < kDenseDim; ++i) {
      const double d = a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)];
      acc += d * d;
    }
    return acc;
  };

  std::vector<int> assign(n, 0);
  for (int iter = 0; iter < 5; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d = dist2(examples[i].dense, centroids[c]);
        if (d < best) {
          best = d;
          arg = static_cast<int>(c);
        }
      }
      assign[i] = arg;
    }
    std::vector<std::array<double, kDenseDim>> sums(k, std::array<double, kDenseDim>{});
    std::vector<std::int64_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(assign[i]);
      ++counts[c];
      for (int d = 0; d < kDenseDim; ++d) {
        sums[c][static_cast<std::size_t>(d)] += examples[i].dense[static_cast<std::size_t>(d)];
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (int d = 0; d < kDenseDim; ++d) {
        centroids[c][static_cast<std::size_t>(d)] =
            sums[c][static_cast<std::size_t>(d)] / static_cast<double>(counts[c]);
      }
    }
  }

  // Final balanced pass in id order.
  const std::int64_t cap = static_cast<std::int64_t>((n + k - 1) / k);
  std::vector<std::int64_t> load(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = -1;
    for (std::size_t c = 0; c < k; ++c) {
      if (load[c] >= cap) continue;
      const double d = dist2(examples[i].dense, centroids[c]);
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    assign[i] = arg;
    ++load[static_cast<std::size_t>(arg)];
  }
  return assign;
}

}  // namespace

std::vector<Example> generate_examples(std::int64_t n, std::uint64_t seed, int n_clusters) {
  if (n < 1) throw std::invalid_argument("generate_examples: n must be >= 1");
  if (n_clusters < 2) throw std::invalid_argument("generate_examples: n_clusters must be >= 2");

  const LatentModel latent(seed);
  std::vector<Example> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, "example", static_cast<std::uint64_t>(i)));
    Example& ex = out[static_cast<std::size_t>(i)];
    ex.id = i;
    for (int d = 0; d < kDenseDim; ++d) ex.dense[static_cast<std::size_t>(d)] = rng.uniform01();
    for (int j = 0; j < kCatSlots; ++j) {
      ex.cats[static_cast<std::size_t>(j)] = static_cast<int>(rng.uniform_int(kVocabPerSlot));
    }
    ex.true_ctr = latent.ctr(ex);
    ex.true_cvr = latent.cvr(ex);
    ex.true_risk = latent.risk(ex);
    ex.true_revenue = rng.lognormal(0.0, kRevenueLogSigma);
  }

  auto segs = segment_examples(out, n_clusters, seed);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].segment = segs[i];
  return out;
}

bool synthesize_cvr(const Example& x, bool clicked, Rng& rng) {
  if (!clicked) return false;
  return rng.bernoulli(x.true_cvr);
}

double assign_bid(const Example& x, const GroundTruth& gt, Rng& rng) {
  if (x.segment < 0 || static_cast<std::size_t>(x.segment) >= gt.bid_params.size()) {
    throw std::invalid_argument("assign_bid: segment " + std::to_string(x.segment) +
                                " has no bid parameters");
  }
  const auto& bp = gt.bid_params[static_cast<std::size_t>(x.segment)];
  return rng.lognormal(bp.mu, bp.sigma);
}

std::vector<LoggedImpression> simulate_slate_log(const std::vector<Example>& examples,
                                                 const std::vector<double>& policy_scores,
                                                 const GroundTruth& gt,
                                                 const SlateLogParams& params,
                                                 std::uint64_t seed) {
  if (examples.size() != policy_scores.size()) {
    throw std::invalid_argument("simulate_slate_log: policy_scores size mismatch");
  }
  if (params.slate_size < 1 || params.slate_size > params.candidates_per_slate) {
    throw std::invalid_argument(
        "simulate_slate_log: slate_size must be in [1, candidates_per_slate]");
  }
  if (static_cast<std::size_t>(params.candidates_per_slate) > examples.size()) {
    throw std::invalid_argument("simulate_slate_log: candidates_per_slate exceeds pool size");
  }
  if (params.randomized_fraction < 0.0 || params.randomized_fraction > 1.0) {
    throw std::invalid_argument("simulate_slate_log: randomized_fraction must be in [0, 1]");
  }
  if (static_cast<int>(gt.examination.size()) < params.slate_size) {
    throw std::invalid_argument("simulate_slate_log: examination curve shorter than slate");
  }

  std::vector<LoggedImpression> log;
  log.reserve(static_cast<std::size_t>(params.n_slates) *
              static_cast<std::size_t>(params.slate_size));

  for (std::int64_t s = 0; s < params.n_slates; ++s) {
    // Independent stream per slate; slates are safe to generate in parallel.
    Rng rng(derive_seed(seed, "slate", static_cast<std::uint64_t>(s)));
    auto cand = rng.sample_without_replacement(
        examples.size(), static_cast<std::size_t>(params.candidates_per_slate));

    const bool randomized = rng.bernoulli(params.randomized_fraction);
    if (randomized) {
      rng.shuffle(cand);
    } else {
      std::sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
        if (policy_scores[a] != policy_scores[b]) return policy_scores[a] > policy_scores[b];
        return examples[a].id < examples[b].id;
      });
    }

    for (int pos = 1; pos <= params.slate_size; ++pos) {
      const Example& ex = examples[cand[static_cast<std::size_t>(pos - 1)]];
      LoggedImpression imp;
      imp.example_id = ex.id;
      imp.position = pos;
      imp.randomized = randomized;
      imp.examined = rng.bernoulli(gt.examination_at(pos));
      imp.clicked = imp.examined && rng.bernoulli(ex.true_ctr);
      imp.converted = synthesize_cvr(ex, imp.clicked, rng);
      imp.bid = assign_bid(ex, gt, rng);
      imp.reward = imp.converted ? ex.true_revenue : 0.0;
      log.push_back(imp);
    }
  }
  return log;
}

std::pair<std::vector<Example>, std::vector<Example>> cluster_split(
    const std::vector<Example>& examples, const std::vector<int>& train_clusters,
    const std::vector<int>& eval_clusters) {
  if (train_clusters.empty() || eval_clusters.empty()) {
    throw std::invalid_argument("cluster_split: cluster sets must be nonempty");
  }
  std::unordered_set<int> train_set(train_clusters.begin(), train_clusters.end());
  for (int c : eval_clusters) {
    if (train_set.count(c)) {
      throw std::invalid_argument("cluster_split: cluster " + std::to_string(c) +
                                  " appears in both sets");
    }
  }
  std::unordered_set<int> eval_set(eval_clusters.begin(), eval_clusters.end());
  std::pair<std::vector<Example>, std::vector<Example>> out;
  for (const auto& ex : examples) {
    if (train_set.count(ex.segment)) {
      out.first.push_back(ex);
    } else if (eval_set.count(ex.segment)) {
      out.second.push_back(ex);
    }
  }
  return out;
}

void write_examples_csv(const std::filesystem::path& path, const std::vector<Example>& examples) {
  CsvTable t;
  t.header = {"id"};
  for (int d = 0; d < kDenseDim; ++d) t.header.push_back("dense_" + std::to_string(d));
  for (int j = 0; j < kCatSlots; ++j) t.header.push_back("cat_" + std::to_string(j));
  t.header.insert(t.header.end(),
                  {"segment", "true_ctr", "true_cvr", "true_risk", "true_revenue"});
  t.rows.reserve(examples.size());
  for (const auto& ex : examples) {
    std::vector<std::string> row;
    row.reserve(t.header.size());
    row.push_back(std::to_string(ex.id));
    for (double v : ex.dense) row.push_back(format_double(v));
    for (int c : ex.cats) row.push_back(std::to_string(c));
    row.push_back(std::to_string(ex.segment));
    row.push_back(format_double(ex.true_ctr));
    row.push_back(format_double(ex.true_cvr));
    row.push_back(format_double(ex.true_risk));
    row.push_back(format_double(ex.true_revenue));
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

std::vector<Example> read_examples_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t expected = 1 + kDenseDim + kCatSlots + 5;
  if (t.header.size() != expected) {
    throw std::runtime_error("read_examples_csv: unexpected column count in " + path.string());
  }
  std::vector<Example> out;
  out.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    Example ex;
    std::size_t c = 0;
    ex.id = parse_int(row[c++]);
    for (int d = 0; d < kDenseDim; ++d) ex.dense[static_cast<std::size_t>(d)] = parse_double(row[c++]);
    for (int j = 0; j < kCatSlots; ++j) ex.cats[static_cast<std::size_t>(j)] = static_cast<int>(parse_int(row[c++]));
    ex.segment = static_cast<int>(parse_int(row[c++]));
    ex.true_ctr = parse_double(row[c++]);
    ex.true_cvr = parse_double(row[c++]);
    ex.true_risk = parse_double(row[c++]);
    ex.true_revenue = parse_double(row[c++]);
    out.push_back(ex);
  }
  return out;
}

void write_impressions_csv(const std::filesystem::path& path,
                           const std::vector<LoggedImpression>& log) {
  CsvTable t;
  t.header = {"example_id", "position", "clicked", "converted", "bid", "randomized", "reward"};
  t.rows.reserve(log.size());
  for (const auto& imp : log) {
    t.rows.push_back({std::to_string(imp.example_id), std::to_string(imp.position),
                      imp.clicked ? "1" : "0", imp.converted ? "1" : "0", format_double(imp.bid),
                      imp.randomized ? "1" : "0", format_double(imp.reward)});
  }
  write_csv(path, t);
}

std::vector<LoggedImpression> read_impressions_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const std::vector<std::string> expected = {"example_id", "position",   "clicked", "converted",
                                             "bid",        "randomized", "reward"};
  if (t.header != expected) {
    throw std::runtime_error("read_impressions_csv: unexpected header in " + path.string());
  }
  std::vector<LoggedImpression> out;
  out.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    LoggedImpression imp;
    imp.example_id = parse_int(row[0]);
    imp.position = static_cast<int>(parse_int(row[1]));
    imp.clicked = parse_int(row[2]) != 0;
    imp.converted = parse_int(row[3]) != 0;
    imp.bid = parse_double(row[4]);
    imp.randomized = parse_int(row[5]) != 0;
    imp.reward = parse_double(row[6]);
    // The examined flag is simulator-private and not exported; clicks imply it.
    imp.examined = imp.clicked;
    out.push_back(imp);
  }
  return out;
}

}  // namespace calicausal
