#include "doctest.h"

#include <cmath>
#include <map>
#include <vector>

#include "calicausal/counterfactual.hpp"
#include "calicausal/rng.hpp"
#include "calicausal/simulator.hpp"

using namespace calicausal;

namespace {

std::vector<LoggedImpression> randomized_log(double eta, std::int64_t n_slates, int slate_size,
                                             std::uint64_t seed,
                                             std::vector<Example>* examples_out = nullptr) {
  SimulatorConfig cfg;
  cfg.n = 5000;
  cfg.seed = seed;
  cfg.clusters = 4;
  cfg.eta = eta;
  cfg.slate_size = slate_size;
  cfg.candidates_per_slate = slate_size + 3;
  cfg.n_slates = n_slates;
  cfg.randomized_fraction = 1.0;
  const auto gt = make_ground_truth(cfg);
  auto examples = generate_examples(cfg.n, cfg.seed, cfg.clusters);
  std::vector<double> policy(examples.size(), 0.0);
  SlateLogParams params{cfg.n_slates, cfg.slate_size, cfg.candidates_per_slate, 1.0};
  auto log = simulate_slate_log(examples, policy, gt, params, derive_seed(seed, "log"));
  if (examples_out) *examples_out = std::move(examples);
  return log;
}

LoggedImpression imp_at(int position, bool clicked, double reward, bool randomized = true) {
  LoggedImpression imp;
  imp.position = position;
  imp.examined = clicked;
  imp.clicked = clicked;
  imp.converted = reward > 0.0;
  imp.reward = reward;
  imp.randomized = randomized;
  imp.bid = 1.0;
  return imp;
}

}  // namespace

TEST_CASE("propensity recovery under the harmonic curve") {
  std::vector<Example> examples;
  const auto log = randomized_log(1.0, 20000, 5, 77, &examples);
  const auto table = estimate_propensities(
      log, [&](std::int64_t id) { return examples[static_cast<std::size_t>(id)].true_ctr; });
  for (int p = 1; p <= 5; ++p) {
    CHECK(std::abs(table.at(p) - 1.0 / p) < 0.05);
  }
}

TEST_CASE("flat examination estimates near one everywhere") {
  std::vector<Example> examples;
  const auto log = randomized_log(0.0, 8000, 5, 13, &examples);
  const auto table = estimate_propensities(
      log, [&](std::int64_t id) { return examples[static_cast<std::size_t>(id)].true_ctr; });
  for (int p = 1; p <= 5; ++p) {
    CHECK(std::abs(table.at(p) - 1.0) < 0.05);
  }
}

TEST_CASE("zero clicks clip to the floor") {
  std::vector<LoggedImpression> log;
  for (int s = 0; s < 60; ++s) {
    for (int p = 1; p <= 3; ++p) log.push_back(imp_at(p, false, 0.0));
  }
  const auto table = estimate_propensities(log, [](std::int64_t) { return 0.3; });
  for (int p = 1; p <= 3; ++p) CHECK(table.at(p) == 0.01);
}

TEST_CASE("sparse positions are rejected by name") {
  std::vector<LoggedImpression> log;
  for (int s = 0; s < 60; ++s) log.push_back(imp_at(1, s % 3 == 0, 0.0));
  log.push_back(imp_at(2, true, 0.0));  // only one sample at position 2
  CHECK_THROWS_WITH_AS(estimate_propensities(log, [](std::int64_t) { return 0.3; }),
                       doctest::Contains("position 2"), std::runtime_error);
}

TEST_CASE("non-randomized impressions are rejected") {
  std::vector<LoggedImpression> log{imp_at(1, true, 0.0, false)};
  CHECK_THROWS_AS(estimate_propensities(log, [](std::int64_t) { return 0.3; }),
                  std::invalid_argument);
}

TEST_CASE("ips basics") {
  const std::vector<double> ones{1.0, 1.0, 1.0};
  SUBCASE("unit propensities reduce to the mean reward") {
    const std::vector<double> rewards{1.0, 0.0, 0.5};
    const auto est = ips_core(rewards, ones);
    CHECK(est.value == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(est.estimator == "IPS");
  }
  SUBCASE("zero rewards give zero value and variance") {
    const std::vector<double> rewards{0.0, 0.0, 0.0};
    const auto est = ips_core(rewards, ones);
    CHECK(est.value == 0.0);
    CHECK(est.variance == 0.0);
  }
  SUBCASE("hand-evaluated three-record log") {
    // (r, e): (1, 0.5), (0, 0.25), (1, 1.0) -> (2 + 0 + 1) / 3 = 1.
    const std::vector<double> rewards{1.0, 0.0, 1.0};
    const std::vector<double> weights{2.0, 4.0, 1.0};
    CHECK(ips_core(rewards, weights).value == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("snips basics") {
  SUBCASE("equal propensities cancel exactly") {
    const std::vector<double> rewards{1.0, 0.0, 1.0, 0.0};
    for (double e : {0.3, 0.7, 1.0}) {
      const std::vector<double> weights(4, 1.0 / e);
      CHECK(snips_core(rewards, weights).value == doctest::Approx(0.5).epsilon(1e-15));
    }
  }
  SUBCASE("binary rewards stay in [0,1]") {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> rewards, weights;
      for (int i = 0; i < 20; ++i) {
        rewards.push_back(rng.bernoulli(0.3) ? 1.0 : 0.0);
        weights.push_back(1.0 / rng.uniform(0.05, 1.0));
      }
      const double v = snips_core(rewards, weights).value;
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  SUBCASE("hand-evaluated three-record log gives 3/7") {
    const std::vector<double> rewards{1.0, 0.0, 1.0};
    const std::vector<double> weights{2.0, 4.0, 1.0};
    CHECK(snips_core(rewards, weights).value == doctest::Approx(3.0 / 7.0).epsilon(1e-15));
  }
}

TEST_CASE("snips is invariant to a common propensity scale") {
  const std::vector<double> base{1.0, 0.5, 0.25, 0.8, 0.4};
  std::vector<LoggedImpression> log;
  Rng rng(3);
  for (int s = 0; s < 40; ++s) {
    for (int p = 1; p <= 5; ++p) {
      log.push_back(imp_at(p, rng.bernoulli(0.4), rng.bernoulli(0.3) ? rng.uniform(0.5, 2.0) : 0.0));
    }
  }
  for (double scale : {0.5, 0.25, 0.9}) {
    std::vector<double> scaled(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) scaled[i] = base[i] * scale;
    const auto a = snips_estimate(log, exact_propensity_table(base));
    const auto b = snips_estimate(log, exact_propensity_table(scaled));
    CHECK(std::abs(a.value - b.value) <= 1e-12);
  }
}

TEST_CASE("effective sample size bounds") {
  const std::vector<double> rewards{1.0, 0.0, 1.0, 1.0};
  const std::vector<double> equal(4, 2.0);
  const auto est = snips_core(rewards, equal);
  CHECK(est.ess == doctest::Approx(4.0).epsilon(1e-12));

  const std::vector<double> skewed{1.0, 10.0, 1.0, 1.0};
  const auto est2 = snips_core(rewards, skewed);
  CHECK(est2.ess < 4.0);
  CHECK(est2.ess > 0.0);
}

TEST_CASE("missing position raises") {
  std::vector<LoggedImpression> log{imp_at(4, true, 1.0)};
  const std::vector<double> props{1.0, 0.5};
  CHECK_THROWS_AS(snips_estimate(log, exact_propensity_table(props)), std::invalid_argument);
}

namespace {

struct CfFixture {
  std::vector<LoggedImpression> impressions;
  std::vector<SlateSpan> slates;
  std::vector<double> scores;
  PropensityTable table;

  explicit CfFixture(int slate_size = 5, int n_slates = 3, std::uint64_t seed = 21) {
    Rng rng(seed);
    std::vector<double> props;
    for (int p = 1; p <= slate_size; ++p) props.push_back(1.0 / p);
    table = exact_propensity_table(props);
    for (int s = 0; s < n_slates; ++s) {
      for (int p = 1; p <= slate_size; ++p) {
        impressions.push_back(
            imp_at(p, rng.bernoulli(0.5), rng.bernoulli(0.4) ? rng.uniform(0.2, 1.5) : 0.0));
        scores.push_back(rng.uniform(-0.5, 1.5));
      }
    }
    slates = group_slates(impressions);
  }
};

}  // namespace

TEST_CASE("alpha zero reduces the loss to the negated estimate") {
  CfFixture fx;
  CfLossConfig cfg;
  cfg.alpha = 0.0;
  cfg.top_k = 2;
  cfg.tau = 0.4;
  const auto res = cf_loss(fx.impressions, fx.slates, fx.scores, fx.table, cfg);
  CHECK(res.loss == -res.weighted_estimate.value);
}

TEST_CASE("cf loss composes the snips value and variance of the weighted log") {
  CfFixture fx;
  CfLossConfig cfg;
  cfg.alpha = 0.1;
  cfg.top_k = 2;
  cfg.tau = 0.4;
  const auto res = cf_loss(fx.impressions, fx.slates, fx.scores, fx.table, cfg);

  // Recompute the weighted log by hand: q = min(1, k softmax(f / tau)).
  std::vector<double> weighted(fx.impressions.size()), weights(fx.impressions.size());
  for (const auto& slate : fx.slates) {
    double z = 0.0;
    std::vector<double> expo(slate.size());
    double maxu = -1e300;
    for (std::size_t i = slate.begin; i < slate.end; ++i) {
      maxu = std::max(maxu, fx.scores[i] / cfg.tau);
    }
    for (std::size_t i = slate.begin; i < slate.end; ++i) {
      expo[i - slate.begin] = std::exp(fx.scores[i] / cfg.tau - maxu);
      z += expo[i - slate.begin];
    }
    for (std::size_t i = slate.begin; i < slate.end; ++i) {
      const double q = std::min(1.0, cfg.top_k * expo[i - slate.begin] / z);
      weighted[i] = q * fx.impressions[i].reward;
      weights[i] = 1.0 / fx.table.at(fx.impressions[i].position);
    }
  }
  const auto oracle = snips_core(weighted, weights);
  CHECK(res.loss == doctest::Approx(-oracle.value + 0.1 * oracle.variance).epsilon(1e-14));
  CHECK(res.weighted_estimate.value == doctest::Approx(oracle.value).epsilon(1e-14));
  CHECK(res.weighted_estimate.variance == doctest::Approx(oracle.variance).epsilon(1e-14));
}

TEST_CASE("cf gradient matches finite differences on a five-item slate") {
  CfFixture fx(5, 1, 42);
  CfLossConfig cfg;
  cfg.alpha = 0.1;
  cfg.top_k = 2;
  cfg.tau = 0.5;  // mild temperature keeps all q below the cap
  auto loss_at = [&](const std::vector<double>& scores) {
    return cf_loss(fx.impressions, fx.slates, scores, fx.table, cfg).loss;
  };
  const auto res = cf_loss(fx.impressions, fx.slates, fx.scores, fx.table, cfg);
  const double h = 1e-6;
  for (std::size_t i = 0; i < fx.scores.size(); ++i) {
    auto up = fx.scores, down = fx.scores;
    up[i] += h;
    down[i] -= h;
    const double fd = (loss_at(up) - loss_at(down)) / (2.0 * h);
    const double rel = std::abs(res.d_score[i] - fd) / (std::abs(res.d_score[i]) + 1e-8);
    CHECK(rel <= 1e-4);
  }
}

TEST_CASE("cf gradient handles a clamped top item") {
  CfFixture fx(5, 1, 43);
  fx.scores[2] = 5.0;  // dominant item saturates q at 1
  CfLossConfig cfg;
  cfg.alpha = 0.1;
  cfg.top_k = 3;
  cfg.tau = 0.5;
  const auto res = cf_loss(fx.impressions, fx.slates, fx.scores, fx.table, cfg);
  auto loss_at = [&](const std::vector<double>& scores) {
    return cf_loss(fx.impressions, fx.slates, scores, fx.table, cfg).loss;
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < fx.scores.size(); ++i) {
    auto up = fx.scores, down = fx.scores;
    up[i] += h;
    down[i] -= h;
    const double fd = (loss_at(up) - loss_at(down)) / (2.0 * h);
    const double rel = std::abs(res.d_score[i] - fd) / (std::abs(res.d_score[i]) + 1e-8);
    CHECK(rel <= 1e-4);
  }
}

TEST_CASE("propensity table csv round-trips") {
  std::vector<Example> examples;
  const auto log = randomized_log(1.0, 2000, 5, 3, &examples);
  const auto table = estimate_propensities(
      log, [&](std::int64_t id) { return examples[static_cast<std::size_t>(id)].true_ctr; });
  const auto dir = std::filesystem::temp_directory_path() / "calicausal_cf_test";
  std::filesystem::create_directories(dir);
  write_propensity_csv(dir / "prop.csv", table);
  const auto loaded = read_propensity_csv(dir / "prop.csv");
  REQUIRE(loaded.rows.size() == table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    CHECK(loaded.rows[i].propensity == table.rows[i].propensity);
    CHECK(loaded.rows[i].clicks == table.rows[i].clicks);
    CHECK(loaded.rows[i].count == table.rows[i].count);
  }
  std::filesystem::remove_all(dir);
}
