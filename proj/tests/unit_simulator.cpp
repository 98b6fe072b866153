#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include "calicausal/csv.hpp"
#include "calicausal/rng.hpp"
#include "calicausal/simulator.hpp"

using namespace calicausal;

namespace {

SimulatorConfig small_config() {
  SimulatorConfig cfg;
  cfg.n = 2000;
  cfg.seed = 11;
  cfg.clusters = 4;
  cfg.eta = 1.0;
  cfg.slate_size = 5;
  cfg.candidates_per_slate = 8;
  cfg.n_slates = 400;
  cfg.randomized_fraction = 0.1;
  return cfg;
}

}  // namespace

TEST_CASE("generate_examples populates every field in range") {
  const auto ex = generate_examples(1, 0, 2);
  REQUIRE(ex.size() == 1);
  CHECK(ex[0].id == 0);
  for (double d : ex[0].dense) {
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
  }
  for (int c : ex[0].cats) {
    CHECK(c >= 0);
    CHECK(c < kVocabPerSlot);
  }
  CHECK(ex[0].true_ctr > 0.0);
  CHECK(ex[0].true_ctr < 1.0);
  CHECK(ex[0].true_cvr >= 0.0);
  CHECK(ex[0].true_cvr <= 1.0);
  CHECK(ex[0].true_risk > 0.0);
  CHECK(ex[0].true_risk < 1.0);
  CHECK(ex[0].true_revenue > 0.0);
  CHECK(ex[0].segment >= 0);
  CHECK(ex[0].segment < 2);
}

TEST_CASE("mean true_ctr matches a Monte Carlo integration of the latent model") {
  const auto ex = generate_examples(10000, 7, 4);
  double mean = 0.0;
  for (const auto& e : ex) mean += e.true_ctr;
  mean /= static_cast<double>(ex.size());

  // Independent integration over the feature distribution with the same
  // latent weights; fresh RNG stream, one million draws.
  const LatentModel latent(7);
  Rng rng(derive_seed(0xfeed, "ctr-oracle"));
  double oracle = 0.0;
  const int n = 1000000;
  Example probe;
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < kDenseDim; ++d) probe.dense[static_cast<std::size_t>(d)] = rng.uniform01();
    for (int j = 0; j < kCatSlots; ++j) {
      probe.cats[static_cast<std::size_t>(j)] = static_cast<int>(rng.uniform_int(kVocabPerSlot));
    }
    oracle += latent.ctr(probe);
  }
  oracle /= n;
  CHECK(std::abs(mean - oracle) < 0.02);
}

TEST_CASE("generate_examples is deterministic") {
  const auto a = generate_examples(500, 3, 4);
  const auto b = generate_examples(500, 3, 4);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].dense == b[i].dense);
    CHECK(a[i].cats == b[i].cats);
    CHECK(a[i].true_ctr == b[i].true_ctr);
    CHECK(a[i].true_cvr == b[i].true_cvr);
    CHECK(a[i].true_risk == b[i].true_risk);
    CHECK(a[i].true_revenue == b[i].true_revenue);
    CHECK(a[i].segment == b[i].segment);
  }
}

TEST_CASE("balanced segments") {
  const auto ex = generate_examples(10000, 21, 10);
  std::map<int, int> counts;
  for (const auto& e : ex) ++counts[e.segment];
  REQUIRE(counts.size() == 10);
  for (const auto& [seg, count] : counts) {
    CHECK(count >= 900);
    CHECK(count <= 1100);
  }
}

TEST_CASE("synthesize_cvr forces false on non-clicked") {
  Rng rng(1);
  Example ex;
  ex.true_cvr = 0.9;
  for (int i = 0; i < 100; ++i) CHECK(synthesize_cvr(ex, false, rng) == false);
}

TEST_CASE("synthesize_cvr hits the base rate at latent score zero") {
  // cvr = 0.10 * 2 * sigmoid(w . phi); at w . phi = 0 that is exactly 0.10.
  Example ex;
  ex.true_cvr = 0.10;
  Rng rng(77);
  int hits = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) hits += synthesize_cvr(ex, true, rng) ? 1 : 0;
  CHECK(std::abs(static_cast<double>(hits) / n - 0.10) < 0.004);
}

TEST_CASE("population conversion rate matches the latent expectation") {
  const auto ex = generate_examples(100000, 5, 4);
  double expected = 0.0;
  for (const auto& e : ex) expected += e.true_cvr;
  expected /= static_cast<double>(ex.size());

  Rng rng(31);
  double rate = 0.0;
  for (const auto& e : ex) rate += synthesize_cvr(e, true, rng) ? 1.0 : 0.0;
  rate /= static_cast<double>(ex.size());
  CHECK(std::abs(rate - expected) < 0.01);
  CHECK(expected > 0.0);
  CHECK(expected <= 0.2);  // 0.10 * 2 * sigmoid is capped at 0.2
}

TEST_CASE("assign_bid degenerate and moment checks") {
  GroundTruth gt;
  gt.examination = {1.0};
  gt.bid_params = {{0.7, 0.0}, {0.0, 0.5}};

  Example ex;
  ex.segment = 0;
  Rng rng(13);
  CHECK(assign_bid(ex, gt, rng) == std::exp(0.7));

  ex.segment = 1;
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double b = assign_bid(ex, gt, rng);
    REQUIRE(b > 0.0);
    sum += b;
  }
  const double mean = sum / n;
  const double closed_form = std::exp(0.5 * 0.5 / 2.0);
  CHECK(std::abs(mean - closed_form) / closed_form < 0.02);

  ex.segment = 7;
  CHECK_THROWS_AS(assign_bid(ex, gt, rng), std::invalid_argument);
}

TEST_CASE("full examination makes position CTR match item quality") {
  SimulatorConfig cfg = small_config();
  cfg.eta = 0.0;  // e* == 1 everywhere
  cfg.n_slates = 20000;
  cfg.randomized_fraction = 1.0;
  const auto gt = make_ground_truth(cfg);
  const auto ex = generate_examples(cfg.n, cfg.seed, cfg.clusters);
  std::vector<double> policy(ex.size(), 0.0);
  SlateLogParams params{cfg.n_slates, cfg.slate_size, cfg.candidates_per_slate,
                        cfg.randomized_fraction};
  const auto log = simulate_slate_log(ex, policy, gt, params, 91);

  std::map<int, std::pair<double, double>> by_pos;  // clicks, ctr mass
  std::map<int, int> count;
  for (const auto& imp : log) {
    by_pos[imp.position].first += imp.clicked ? 1.0 : 0.0;
    by_pos[imp.position].second += ex[static_cast<std::size_t>(imp.example_id)].true_ctr;
    ++count[imp.position];
  }
  double pooled = 0.0;
  for (const auto& imp : log) pooled += imp.clicked ? 1.0 : 0.0;
  pooled /= static_cast<double>(log.size());

  for (const auto& [pos, acc] : by_pos) {
    const double n = count[pos];
    const double rate = acc.first / n;
    const double quality = acc.second / n;
    CHECK(std::abs(rate - quality) < 5.0 * std::sqrt(quality * (1.0 - quality) / n));
    // Flat curve: every position rate stays within binomial noise of pooled.
    CHECK(std::abs(rate - pooled) < 5.0 * std::sqrt(pooled * (1.0 - pooled) / n));
  }
}

TEST_CASE("harmonic examination curve shows up in position CTR") {
  SimulatorConfig cfg = small_config();
  cfg.eta = 1.0;
  cfg.n_slates = 100000;
  cfg.randomized_fraction = 1.0;
  const auto gt = make_ground_truth(cfg);
  const auto ex = generate_examples(cfg.n, cfg.seed, cfg.clusters);
  double mean_ctr = 0.0;
  for (const auto& e : ex) mean_ctr += e.true_ctr;
  mean_ctr /= static_cast<double>(ex.size());

  std::vector<double> policy(ex.size(), 0.0);
  SlateLogParams params{cfg.n_slates, cfg.slate_size, cfg.candidates_per_slate,
                        cfg.randomized_fraction};
  const auto log = simulate_slate_log(ex, policy, gt, params, 17);

  std::map<int, std::pair<double, double>> by_pos;  // clicks, count
  for (const auto& imp : log) {
    by_pos[imp.position].first += imp.clicked ? 1.0 : 0.0;
    by_pos[imp.position].second += 1.0;
  }
  for (const auto& [pos, acc] : by_pos) {
    const double rate = acc.first / acc.second;
    const double predicted = mean_ctr / pos;
    CHECK(std::abs(rate - predicted) / predicted < 0.10);
  }
}

TEST_CASE("randomized_fraction one flags everything") {
  SimulatorConfig cfg = small_config();
  cfg.randomized_fraction = 1.0;
  const auto gt = make_ground_truth(cfg);
  const auto ex = generate_examples(cfg.n, cfg.seed, cfg.clusters);
  std::vector<double> policy(ex.size(), 0.5);
  SlateLogParams params{cfg.n_slates, cfg.slate_size, cfg.candidates_per_slate, 1.0};
  const auto log = simulate_slate_log(ex, policy, gt, params, 3);
  for (const auto& imp : log) CHECK(imp.randomized);
}

TEST_CASE("conversion implies click implies examination") {
  SimulatorConfig cfg = small_config();
  const auto gt = make_ground_truth(cfg);
  const auto ex = generate_examples(cfg.n, cfg.seed, cfg.clusters);
  Rng prng(55);
  std::vector<double> policy(ex.size());
  for (auto& p : policy) p = prng.uniform01();
  SlateLogParams params{cfg.n_slates, cfg.slate_size, cfg.candidates_per_slate,
                        cfg.randomized_fraction};
  const auto log = simulate_slate_log(ex, policy, gt, params, 29);
  for (const auto& imp : log) {
    if (imp.converted) CHECK(imp.clicked);
    if (imp.clicked) CHECK(imp.examined);
    if (imp.converted) CHECK(imp.reward > 0.0);
    if (!imp.converted) CHECK(imp.reward == 0.0);
    CHECK(imp.bid > 0.0);
  }
}

TEST_CASE("slate log generation is deterministic") {
  SimulatorConfig cfg = small_config();
  const auto gt = make_ground_truth(cfg);
  const auto ex = generate_examples(cfg.n, cfg.seed, cfg.clusters);
  std::vector<double> policy(ex.size(), 0.25);
  SlateLogParams params{cfg.n_slates, cfg.slate_size, cfg.candidates_per_slate,
                        cfg.randomized_fraction};
  const auto a = simulate_slate_log(ex, policy, gt, params, 123);
  const auto b = simulate_slate_log(ex, policy, gt, params, 123);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].example_id == b[i].example_id);
    CHECK(a[i].position == b[i].position);
    CHECK(a[i].clicked == b[i].clicked);
    CHECK(a[i].converted == b[i].converted);
    CHECK(a[i].bid == b[i].bid);
    CHECK(a[i].randomized == b[i].randomized);
    CHECK(a[i].reward == b[i].reward);
  }
}

TEST_CASE("oversized slate is rejected") {
  SimulatorConfig cfg = small_config();
  const auto gt = make_ground_truth(cfg);
  const auto ex = generate_examples(cfg.n, cfg.seed, cfg.clusters);
  std::vector<double> policy(ex.size(), 0.0);
  SlateLogParams params{10, 9, 8, 0.0};  // slate_size > candidates
  CHECK_THROWS_AS(simulate_slate_log(ex, policy, gt, params, 1), std::invalid_argument);
}

TEST_CASE("cluster_split partitions and validates") {
  const auto ex = generate_examples(10000, 9, 4);
  const auto [train, eval] = cluster_split(ex, {0, 1}, {2, 3});
  CHECK(train.size() + eval.size() == ex.size());
  std::set<std::int64_t> train_ids;
  for (const auto& e : train) train_ids.insert(e.id);
  for (const auto& e : eval) CHECK(train_ids.count(e.id) == 0);

  CHECK_THROWS_AS(cluster_split(ex, {0, 1}, {1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(cluster_split(ex, {}, {1}), std::invalid_argument);

  const auto [train2, eval2] = cluster_split(ex, {0, 1}, {2, 3});
  CHECK(train2.size() == train.size());
  for (std::size_t i = 0; i < train.size(); ++i) CHECK(train2[i].id == train[i].id);
}

TEST_CASE("70/30 cluster weighting lands near 0.70") {
  const auto ex = generate_examples(10000, 41, 10);
  const auto [train, eval] = cluster_split(ex, {0, 1, 2, 3, 4, 5, 6}, {7, 8, 9});
  const double frac = static_cast<double>(train.size()) / static_cast<double>(ex.size());
  CHECK(std::abs(frac - 0.70) < 0.05);
}

TEST_CASE("example and impression CSV round-trips") {
  const auto dir = std::filesystem::temp_directory_path() / "calicausal_sim_test";
  std::filesystem::create_directories(dir);
  const auto ex = generate_examples(200, 77, 4);
  write_examples_csv(dir / "examples.csv", ex);
  const auto ex2 = read_examples_csv(dir / "examples.csv");
  REQUIRE(ex2.size() == ex.size());
  for (std::size_t i = 0; i < ex.size(); ++i) {
    CHECK(ex2[i].id == ex[i].id);
    CHECK(ex2[i].dense == ex[i].dense);
    CHECK(ex2[i].cats == ex[i].cats);
    CHECK(ex2[i].true_ctr == ex[i].true_ctr);
    CHECK(ex2[i].true_revenue == ex[i].true_revenue);
    CHECK(ex2[i].segment == ex[i].segment);
  }

  SimulatorConfig cfg = small_config();
  cfg.n = 200;
  cfg.n_slates = 50;
  const auto gt = make_ground_truth(cfg);
  std::vector<double> policy(ex.size(), 0.0);
  SlateLogParams params{cfg.n_slates, cfg.slate_size, cfg.candidates_per_slate, 0.5};
  const auto log = simulate_slate_log(ex, policy, gt, params, 1);
  write_impressions_csv(dir / "impressions.csv", log);
  const auto log2 = read_impressions_csv(dir / "impressions.csv");
  REQUIRE(log2.size() == log.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(log2[i].example_id == log[i].example_id);
    CHECK(log2[i].position == log[i].position);
    CHECK(log2[i].clicked == log[i].clicked);
    CHECK(log2[i].converted == log[i].converted);
    CHECK(log2[i].bid == log[i].bid);
    CHECK(log2[i].randomized == log[i].randomized);
    CHECK(log2[i].reward == log[i].reward);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("examination curve obeys its invariants") {
  SimulatorConfig cfg = small_config();
  for (double eta : {0.0, 0.5, 1.0, 2.0}) {
    cfg.eta = eta;
    const auto gt = make_ground_truth(cfg);
    CHECK(gt.examination[0] == 1.0);
    for (std::size_t p = 1; p < gt.examination.size(); ++p) {
      CHECK(gt.examination[p] <= gt.examination[p - 1]);
    }
  }
}
