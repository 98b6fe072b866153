#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "calicausal/types.hpp"

namespace calicausal {

struct ModelConfig {
  int embedding_dim = 16;
  std::vector<int> hidden = {32, 16};  // trunk widths; paper-scale {256,128,64}

  int input_dim() const { return kDenseDim + kCatSlots * embedding_dim; }
  int trunk_out_dim() const { return hidden.empty() ? input_dim() : hidden.back(); }
};

// Sigmoid outputs of the three task heads.
struct TaskScores {
  double rel = 0.0;
  double rev = 0.0;
  double risk = 0.0;

  double operator[](int t) const { return t == 0 ? rel : (t == 1 ? rev : risk); }
};

struct DenseLayer {
  int in = 0;
  int out = 0;
  std::vector<double> w;  // out x in, row-major
  std::vector<double> b;  // out
};

// All learnable parameters. Canonical traversal order (embedding, trunk
// layers, heads rel/rev/risk, weights before biases) is fixed so gradients,
// optimizer state and checkpoints line up index for index.
struct ModelParams {
  ModelConfig config;
  std::vector<double> embedding;  // kVocab x embedding_dim, row-major
  std::vector<DenseLayer> trunk;
  std::array<DenseLayer, 3> heads;
};

struct GradientBundle {
  std::vector<double> embedding;
  std::vector<DenseLayer> trunk;
  std::array<DenseLayer, 3> heads;
};

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);
GradientBundle zero_like(const ModelParams& params);

std::size_t param_count(const ModelParams& params);
std::vector<double*> param_pointers(ModelParams& params);
std::vector<double*> param_pointers(GradientBundle& grads);
std::vector<const double*> param_pointers(const GradientBundle& grads);

// Cached activations for one forward pass over a batch.
struct ForwardTape {
  std::size_t batch = 0;
  std::vector<double> input;                   // batch x input_dim
  std::vector<std::vector<double>> pre;        // per trunk layer, batch x out
  std::vector<std::vector<double>> act;        // per trunk layer, batch x out
  std::array<std::vector<double>, 3> head_pre; // per head, batch
  std::vector<TaskScores> scores;
};

TaskScores forward(const ModelParams& params, const Example& x);
ForwardTape forward_batch(const ModelParams& params, std::span<const Example> batch);

// d(loss)/d(task score) for one example, in head order rel, rev, risk.
using ScoreGrad = std::array<double, 3>;

// Backpropagates prediction-space gradients through the cached pass.
// Gradients accumulate additively over batch elements.
GradientBundle backward_batch(const ModelParams& params, std::span<const Example> batch,
                              const ForwardTape& tape, const std::vector<ScoreGrad>& dscores);

// A loss over the batch's predictions: fills dscores and returns the value.
// Terms may couple examples (bucket means, ratio estimators); the gradient
// machinery only needs d(loss)/d(score).
using BatchLoss =
    std::function<double(const std::vector<TaskScores>&, std::vector<ScoreGrad>&)>;

std::pair<double, GradientBundle> backward(const ModelParams& params,
                                           std::span<const Example> batch,
                                           const BatchLoss& loss);

struct CombinerWeights {
  double rel = 1.0;
  double rev = 1.0;
  double risk = 1.0;
};

// Scalar ordering score: w_rel*s_rel + w_rev*s_rev - w_risk*s_risk.
double final_ranking_score(const TaskScores& s, const CombinerWeights& w);

// Indices sorted by score descending; ties broken by example id ascending.
std::vector<std::size_t> rank_order(std::span<const double> scores,
                                    std::span<const std::int64_t> ids);

// Versioned JSON checkpoint with shape metadata; round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace calicausal
