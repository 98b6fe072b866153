#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "calicausal/model.hpp"
#include "calicausal/simulator.hpp"
#include "fd_check.hpp"

using namespace calicausal;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.embedding_dim = 4;
  cfg.hidden = {8, 6};
  return cfg;
}

std::vector<Example> sample_batch(std::size_t n, std::uint64_t seed = 3) {
  auto ex = generate_examples(static_cast<std::int64_t>(std::max<std::size_t>(n, 2)), seed, 2);
  ex.resize(n);
  return ex;
}

// Couples all three heads so every parameter sees gradient.
double coupled_loss(const std::vector<TaskScores>& scores, std::vector<ScoreGrad>& dscores) {
  double loss = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& s = scores[i];
    loss += (s.rel - 0.3) * (s.rel - 0.3) + s.rel * s.rev + 0.7 * s.risk * s.risk * s.risk;
    dscores[i][0] += 2.0 * (s.rel - 0.3) + s.rev;
    dscores[i][1] += s.rel;
    dscores[i][2] += 2.1 * s.risk * s.risk;
  }
  return loss;
}

}  // namespace

TEST_CASE("all-zero parameters give 0.5 on every head") {
  ModelParams params = init_params(tiny_config(), 1);
  for (double* p : param_pointers(params)) *p = 0.0;
  const auto batch = sample_batch(3);
  for (const auto& ex : batch) {
    const TaskScores s = forward(params, ex);
    CHECK(s.rel == 0.5);
    CHECK(s.rev == 0.5);
    CHECK(s.risk == 0.5);
  }
}

TEST_CASE("scores stay strictly inside (0,1)") {
  ModelParams params = init_params(ModelConfig{}, 7);
  for (const auto& ex : sample_batch(64, 9)) {
    const TaskScores s = forward(params, ex);
    for (int h = 0; h < 3; ++h) {
      CHECK(s[h] > 0.0);
      CHECK(s[h] < 1.0);
    }
  }
}

TEST_CASE("golden forward scores for seeded params") {
  ModelParams params = init_params(ModelConfig{}, 2024);
  const auto batch = sample_batch(1, 12);
  const TaskScores s = forward(params, batch[0]);
  // Frozen from this implementation's first verified run.
  CHECK(s.rel == doctest::Approx(0.54811621016167855).epsilon(1e-12));
  CHECK(s.rev == doctest::Approx(0.45266446667484761).epsilon(1e-12));
  CHECK(s.risk == doctest::Approx(0.52247814754022692).epsilon(1e-12));
}

TEST_CASE("constant loss yields zero gradient") {
  ModelParams params = init_params(tiny_config(), 5);
  const auto batch = sample_batch(3);
  auto [value, grads] = backward(params, batch, [](const std::vector<TaskScores>&,
                                                   std::vector<ScoreGrad>&) { return 4.2; });
  CHECK(value == 4.2);
  for (const double* g : param_pointers(grads)) CHECK(*g == 0.0);
}

TEST_CASE("analytic gradients match central finite differences everywhere") {
  ModelConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 31);
  const auto batch = sample_batch(3, 8);

  auto [value, grads] = backward(params, batch, coupled_loss);
  (void)value;
  const auto report = fdcheck::check_gradients(params, grads, [&]() {
    double acc = 0.0;
    const auto tape = forward_batch(params, batch);
    for (const auto& s : tape.scores) {
      acc += (s.rel - 0.3) * (s.rel - 0.3) + s.rel * s.rev + 0.7 * s.risk * s.risk * s.risk;
    }
    return acc;
  });
  INFO("worst index ", report.worst_index, " analytic ", report.worst_analytic, " fd ",
       report.worst_fd);
  CHECK(report.max_rel_err <= 1e-4);
}

TEST_CASE("batch gradient is the sum of single-example gradients") {
  ModelParams params = init_params(tiny_config(), 13);
  const auto batch = sample_batch(2, 4);

  auto per_example_bce = [](const std::vector<TaskScores>& scores,
                            std::vector<ScoreGrad>& dscores) {
    double loss = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      loss += -std::log(scores[i].rel);
      dscores[i][0] += -1.0 / scores[i].rel;
    }
    return loss;
  };

  auto [lv, g_both] = backward(params, batch, per_example_bce);
  auto [l0, g0] = backward(params, std::span<const Example>(&batch[0], 1), per_example_bce);
  auto [l1, g1] = backward(params, std::span<const Example>(&batch[1], 1), per_example_bce);
  CHECK(lv == doctest::Approx(l0 + l1).epsilon(1e-12));

  auto pb = param_pointers(g_both);
  auto p0 = param_pointers(g0);
  auto p1 = param_pointers(g1);
  for (std::size_t i = 0; i < pb.size(); ++i) {
    CHECK(*pb[i] == doctest::Approx(*p0[i] + *p1[i]).epsilon(1e-12));
  }
}

TEST_CASE("permuting the batch changes neither loss nor gradients") {
  ModelParams params = init_params(tiny_config(), 17);
  auto batch = sample_batch(5, 6);
  auto mean_bce = [](const std::vector<TaskScores>& scores, std::vector<ScoreGrad>& dscores) {
    double loss = 0.0;
    const double inv = 1.0 / static_cast<double>(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      loss += -std::log(1.0 - scores[i].rel) * inv;
      dscores[i][0] += inv / (1.0 - scores[i].rel);
    }
    return loss;
  };
  auto [la, ga] = backward(params, batch, mean_bce);
  std::reverse(batch.begin(), batch.end());
  auto [lb, gb] = backward(params, batch, mean_bce);
  CHECK(la == doctest::Approx(lb).epsilon(1e-12));
  auto pa = param_pointers(ga);
  auto pb = param_pointers(gb);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(*pa[i] == doctest::Approx(*pb[i]).epsilon(1e-10));
  }
}

TEST_CASE("out-of-vocabulary ids are rejected") {
  ModelParams params = init_params(tiny_config(), 19);
  Example ex = sample_batch(1)[0];
  ex.cats[2] = kVocabPerSlot;  // one past the end
  CHECK_THROWS_AS(forward(params, ex), std::invalid_argument);
}

TEST_CASE("empty batch is rejected") {
  ModelParams params = init_params(tiny_config(), 23);
  CHECK_THROWS_AS(
      backward(params, {}, [](const std::vector<TaskScores>&, std::vector<ScoreGrad>&) {
        return 0.0;
      }),
      std::invalid_argument);
}

TEST_CASE("non-finite parameters are reported with the offending layer") {
  ModelParams params = init_params(tiny_config(), 29);
  params.trunk[1].w[0] = std::numeric_limits<double>::infinity();
  const auto batch = sample_batch(2);
  CHECK_THROWS_WITH_AS(forward_batch(params, batch),
                       doctest::Contains("trunk layer 1"), std::runtime_error);
}

TEST_CASE("checkpoint round-trip is bit exact") {
  ModelParams params = init_params(ModelConfig{}, 37);
  const auto dir = std::filesystem::temp_directory_path() / "calicausal_model_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "ckpt.json", params);
  const ModelParams loaded = load_checkpoint(dir / "ckpt.json");

  const auto batch = sample_batch(8, 10);
  for (const auto& ex : batch) {
    const TaskScores a = forward(params, ex);
    const TaskScores b = forward(loaded, ex);
    CHECK(a.rel == b.rel);
    CHECK(a.rev == b.rev);
    CHECK(a.risk == b.risk);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("final ranking score projections and monotonicity") {
  TaskScores s{0.8, 0.6, 0.4};
  CHECK(final_ranking_score(s, {1.0, 0.0, 0.0}) == 0.8);
  CHECK(final_ranking_score(s, {0.0, 1.0, 0.0}) == 0.6);

  const CombinerWeights w{1.0, 1.0, 1.0};
  TaskScores riskier = s;
  riskier.risk = 0.9;
  CHECK(final_ranking_score(riskier, w) < final_ranking_score(s, w));
}

TEST_CASE("ties break by example id ascending") {
  const std::vector<double> scores{0.5, 0.5, 0.9};
  const std::vector<std::int64_t> ids{42, 7, 100};
  const auto order = rank_order(scores, ids);
  REQUIRE(order.size() == 3);
  CHECK(order[0] == 2);   // highest score first
  CHECK(order[1] == 1);   // tie: id 7 before id 42
  CHECK(order[2] == 0);
}
