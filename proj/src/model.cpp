#include "calicausal/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "calicausal/csv.hpp"
#include "calicausal/rng.hpp"

namespace calicausal {

namespace {

// Pre-activations are clamped so sigmoid outputs stay strictly inside (0, 1)
// in double precision; the derivative is zero outside the clamp.
constexpr double kPreactClamp = 30.0;

double sigmoid_clamped(double z, double* deriv = nullptr) {
  if (z > kPreactClamp) {
    if (deriv) *deriv = 0.0;
    z = kPreactClamp;
  } else if (z < -kPreactClamp) {
    if (deriv) *deriv = 0.0;
    z = -kPreactClamp;
  } else if (deriv) {
    const double s = 1.0 / (1.0 + std::exp(-z));
    *deriv = s * (1.0 - s);
  }
  return 1.0 / (1.0 + std::exp(-z));
}

void check_finite(std::span<const double> values, const std::string& where) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw std::runtime_error("model: non-finite value in " + where);
    }
  }
}

DenseLayer make_layer(int in, int out, Rng* rng) {
  DenseLayer layer;
  layer.in = in;
  layer.out = out;
  layer.w.assign(static_cast<std::size_t>(in) * static_cast<std::size_t>(out), 0.0);
  layer.b.assign(static_cast<std::size_t>(out), 0.0);
  if (rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : layer.w) v = rng->uniform(-bound, bound);
    for (auto& v : layer.b) v = rng->uniform(-bound, bound);
  }
  return layer;
}

const char* head_name(int h) { return h == 0 ? "head[rel]" : (h == 1 ? "head[rev]" : "head[risk]"); }

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.embedding_dim < 1) throw std::invalid_argument("model.embedding_dim: must be >= 1");
  for (int hwidth : cfg.hidden) {
    if (hwidth < 1) throw std::invalid_argument("model.hidden: widths must be >= 1");
  }
  ModelParams p;
  p.config = cfg;
  Rng rng(derive_seed(seed, "model/init"));
  const double emb_bound = 1.0 / std::sqrt(static_cast<double>(cfg.embedding_dim));
  p.embedding.resize(static_cast<std::size_t>(kVocab) * static_cast<std::size_t>(cfg.embedding_dim));
  for (auto& v : p.embedding) v = rng.uniform(-emb_bound, emb_bound);

  int in = cfg.input_dim();
  for (int width : cfg.hidden) {
    p.trunk.push_back(make_layer(in, width, &rng));
    in = width;
  }
  for (auto& head : p.heads) head = make_layer(in, 1, &rng);
  return p;
}

GradientBundle zero_like(const ModelParams& params) {
  GradientBundle g;
  g.embedding.assign(params.embedding.size(), 0.0);
  for (const auto& layer : params.trunk) g.trunk.push_back(make_layer(layer.in, layer.out, nullptr));
  for (int h = 0; h < 3; ++h) {
    g.heads[static_cast<std::size_t>(h)] =
        make_layer(params.heads[static_cast<std::size_t>(h)].in, 1, nullptr);
  }
  return g;
}

namespace {

template <typename Struct>
std::vector<double*> pointers_impl(Struct& s) {
  std::vector<double*> out;
  for (auto& v : s.embedding) out.push_back(&v);
  for (auto& layer : s.trunk) {
    for (auto& v : layer.w) out.push_back(&v);
    for (auto& v : layer.b) out.push_back(&v);
  }
  for (auto& head : s.heads) {
    for (auto& v : head.w) out.push_back(&v);
    for (auto& v : head.b) out.push_back(&v);
  }
  return out;
}

}  // namespace

std::size_t param_count(const ModelParams& params) {
  std::size_t n = params.embedding.size();
  for (const auto& layer : params.trunk) n += layer.w.size() + layer.b.size();
  for (const auto& head : params.heads) n += head.w.size() + head.b.size();
  return n;
}

std::vector<double*> param_pointers(ModelParams& params) { return pointers_impl(params); }
std::vector<double*> param_pointers(GradientBundle& grads) { return pointers_impl(grads); }

std::vector<const double*> param_pointers(const GradientBundle& grads) {
  std::vector<const double*> out;
  auto mut = pointers_impl(const_cast<GradientBundle&>(grads));
  out.assign(mut.begin(), mut.end());
  return out;
}

namespace {

void fill_input(const ModelParams& params, const Example& x, double* dst) {
  const int d = params.config.embedding_dim;
  for (int i = 0; i < kDenseDim; ++i) dst[i] = x.dense[static_cast<std::size_t>(i)];
  for (int j = 0; j < kCatSlots; ++j) {
    const int c = x.cats[static_cast<std::size_t>(j)];
    if (c < 0 || c >= kVocabPerSlot) {
      throw std::invalid_argument("model: category id " + std::to_string(c) + " in slot " +
                                  std::to_string(j) + " is out of vocabulary");
    }
    const std::size_t row = static_cast<std::size_t>(j * kVocabPerSlot + c);
    const double* src = params.embedding.data() + row * static_cast<std::size_t>(d);
    std::copy(src, src + d, dst + kDenseDim + j * d);
  }
}

// y = W x + b for one example.
void affine(const DenseLayer& layer, const double* x, double* y) {
  for (int o = 0; o < layer.out; ++o) {
    const double* wrow = layer.w.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(layer.in);
    double acc = layer.b[static_cast<std::size_t>(o)];
    for (int i = 0; i < layer.in; ++i) acc += wrow[i] * x[i];
    y[o] = acc;
  }
}

}  // namespace

ForwardTape forward_batch(const ModelParams& params, std::span<const Example> batch) {
  const auto n = batch.size();
  const int input_dim = params.config.input_dim();
  ForwardTape tape;
  tape.batch = n;
  tape.input.resize(n * static_cast<std::size_t>(input_dim));
  for (std::size_t i = 0; i < n; ++i) {
    fill_input(params, batch[i], tape.input.data() + i * static_cast<std::size_t>(input_dim));
  }
  check_finite(tape.input, "embedding");

  const std::vector<double>* cur = &tape.input;
  int cur_dim = input_dim;
  tape.pre.resize(params.trunk.size());
  tape.act.resize(params.trunk.size());
  for (std::size_t l = 0; l < params.trunk.size(); ++l) {
    const auto& layer = params.trunk[l];
    tape.pre[l].resize(n * static_cast<std::size_t>(layer.out));
    tape.act[l].resize(n * static_cast<std::size_t>(layer.out));
    for (std::size_t i = 0; i < n; ++i) {
      affine(layer, cur->data() + i * static_cast<std::size_t>(cur_dim),
             tape.pre[l].data() + i * static_cast<std::size_t>(layer.out));
    }
    check_finite(tape.pre[l], "trunk layer " + std::to_string(l));
    for (std::size_t k = 0; k < tape.pre[l].size(); ++k) {
      tape.act[l][k] = tape.pre[l][k] > 0.0 ? tape.pre[l][k] : 0.0;
    }
    cur = &tape.act[l];
    cur_dim = layer.out;
  }

  tape.scores.resize(n);
  for (int h = 0; h < 3; ++h) {
    auto& hp = tape.head_pre[static_cast<std::size_t>(h)];
    hp.resize(n);
    const auto& head = params.heads[static_cast<std::size_t>(h)];
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0.0;
      affine(head, cur->data() + i * static_cast<std::size_t>(cur_dim), &z);
      hp[i] = z;
    }
    check_finite(hp, head_name(h));
    for (std::size_t i = 0; i < n; ++i) {
      const double s = sigmoid_clamped(hp[i]);
      if (h == 0) {
        tape.scores[i].rel = s;
      } else if (h == 1) {
        tape.scores[i].rev = s;
      } else {
        tape.scores[i].risk = s;
      }
    }
  }
  return tape;
}

TaskScores forward(const ModelParams& params, const Example& x) {
  return forward_batch(params, std::span<const Example>(&x, 1)).scores[0];
}

GradientBundle backward_batch(const ModelParams& params, std::span<const Example> batch,
                              const ForwardTape& tape, const std::vector<ScoreGrad>& dscores) {
  if (batch.empty()) throw std::invalid_argument("backward_batch: empty batch");
  if (tape.batch != batch.size() || dscores.size() != batch.size()) {
    throw std::invalid_argument("backward_batch: tape/gradient size mismatch");
  }
  const int input_dim = params.config.input_dim();
  const int trunk_out = params.config.trunk_out_dim();
  GradientBundle g = zero_like(params);

  std::vector<double> dact(static_cast<std::size_t>(std::max(trunk_out, input_dim)));
  std::vector<double> dprev(static_cast<std::size_t>(std::max(trunk_out, input_dim)));

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double* trunk_act =
        params.trunk.empty() ? tape.input.data() + i * static_cast<std::size_t>(input_dim)
                             : tape.act.back().data() + i * static_cast<std::size_t>(trunk_out);

    std::fill(dact.begin(), dact.begin() + trunk_out, 0.0);
    for (int h = 0; h < 3; ++h) {
      const double z = tape.head_pre[static_cast<std::size_t>(h)][i];
      double sderiv = 0.0;
      sigmoid_clamped(z, &sderiv);
      const double dz = dscores[i][static_cast<std::size_t>(h)] * sderiv;
      if (!std::isfinite(dz)) {
        throw std::runtime_error(std::string("model: non-finite gradient at ") + head_name(h));
      }
      auto& gh = g.heads[static_cast<std::size_t>(h)];
      const auto& head = params.heads[static_cast<std::size_t>(h)];
      for (int k = 0; k < trunk_out; ++k) {
        gh.w[static_cast<std::size_t>(k)] += dz * trunk_act[k];
        dact[static_cast<std::size_t>(k)] += dz * head.w[static_cast<std::size_t>(k)];
      }
      gh.b[0] += dz;
    }

    for (int l = static_cast<int>(params.trunk.size()) - 1; l >= 0; --l) {
      const auto& layer = params.trunk[static_cast<std::size_t>(l)];
      const double* pre = tape.pre[static_cast<std::size_t>(l)].data() +
                          i * static_cast<std::size_t>(layer.out);
      const double* below =
          l == 0 ? tape.input.data() + i * static_cast<std::size_t>(input_dim)
                 : tape.act[static_cast<std::size_t>(l - 1)].data() +
                       i * static_cast<std::size_t>(layer.in);
      auto& gl = g.trunk[static_cast<std::size_t>(l)];
      std::fill(dprev.begin(), dprev.begin() + layer.in, 0.0);
      for (int o = 0; o < layer.out; ++o) {
        const double dz = pre[o] > 0.0 ? dact[static_cast<std::size_t>(o)] : 0.0;
        if (dz == 0.0) continue;
        if (!std::isfinite(dz)) {
          throw std::runtime_error("model: non-finite gradient in trunk layer " + std::to_string(l));
        }
        const std::size_t off = static_cast<std::size_t>(o) * static_cast<std::size_t>(layer.in);
        const double* wrow = layer.w.data() + off;
        double* gw = gl.w.data() + off;
        for (int k = 0; k < layer.in; ++k) {
          gw[k] += dz * below[k];
          dprev[static_cast<std::size_t>(k)] += dz * wrow[k];
        }
        gl.b[static_cast<std::size_t>(o)] += dz;
      }
      std::swap(dact, dprev);
    }

    // dact now holds d(loss)/d(input); route embedding slices back to rows.
    const int d = params.config.embedding_dim;
    for (int j = 0; j < kCatSlots; ++j) {
      const int c = batch[i].cats[static_cast<std::size_t>(j)];
      const std::size_t row = static_cast<std::size_t>(j * kVocabPerSlot + c);
      double* gdst = g.embedding.data() + row * static_cast<std::size_t>(d);
      const double* src = dact.data() + kDenseDim + j * d;
      for (int k = 0; k < d; ++k) gdst[k] += src[k];
    }
  }
  return g;
}

std::pair<double, GradientBundle> backward(const ModelParams& params,
                                           std::span<const Example> batch,
                                           const BatchLoss& loss) {
  if (batch.empty()) throw std::invalid_argument("backward: empty batch");
  ForwardTape tape = forward_batch(params, batch);
  std::vector<ScoreGrad> dscores(batch.size(), ScoreGrad{0.0, 0.0, 0.0});
  const double value = loss(tape.scores, dscores);
  if (!std::isfinite(value)) {
    throw std::runtime_error("model: non-finite loss value");
  }
  return {value, backward_batch(params, batch, tape, dscores)};
}

double final_ranking_score(const TaskScores& s, const CombinerWeights& w) {
  return w.rel * s.rel + w.rev * s.rev - w.risk * s.risk;
}

std::vector<std::size_t> rank_order(std::span<const double> scores,
                                    std::span<const std::int64_t> ids) {
  if (scores.size() != ids.size()) {
    throw std::invalid_argument("rank_order: scores/ids size mismatch");
  }
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  return order;
}

namespace {

nlohmann::json layer_to_json(const DenseLayer& layer) {
  return {{"in", layer.in}, {"out", layer.out}, {"w", layer.w}, {"b", layer.b}};
}

DenseLayer layer_from_json(const nlohmann::json& j) {
  DenseLayer layer;
  layer.in = j.at("in").get<int>();
  layer.out = j.at("out").get<int>();
  layer.w = j.at("w").get<std::vector<double>>();
  layer.b = j.at("b").get<std::vector<double>>();
  if (layer.w.size() != static_cast<std::size_t>(layer.in) * static_cast<std::size_t>(layer.out) ||
      layer.b.size() != static_cast<std::size_t>(layer.out)) {
    throw std::runtime_error("checkpoint: layer shape mismatch");
  }
  return layer;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  nlohmann::json j;
  j["format"] = "calicausal-checkpoint";
  j["version"] = 1;
  j["dense_dim"] = kDenseDim;
  j["cat_slots"] = kCatSlots;
  j["vocab_per_slot"] = kVocabPerSlot;
  j["embedding_dim"] = params.config.embedding_dim;
  j["hidden"] = params.config.hidden;
  j["embedding"] = params.embedding;
  j["trunk"] = nlohmann::json::array();
  for (const auto& layer : params.trunk) j["trunk"].push_back(layer_to_json(layer));
  j["heads"] = {{"rel", layer_to_json(params.heads[0])},
                {"rev", layer_to_json(params.heads[1])},
                {"risk", layer_to_json(params.heads[2])}};
  write_text_file(path, j.dump(1) + "\n");
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(read_text_file(path));
  if (j.at("format").get<std::string>() != "calicausal-checkpoint" ||
      j.at("version").get<int>() != 1) {
    throw std::runtime_error("checkpoint: unsupported format in " + path.string());
  }
  if (j.at("dense_dim").get<int>() != kDenseDim || j.at("cat_slots").get<int>() != kCatSlots ||
      j.at("vocab_per_slot").get<int>() != kVocabPerSlot) {
    throw std::runtime_error("checkpoint: feature geometry mismatch in " + path.string());
  }
  ModelParams p;
  p.config.embedding_dim = j.at("embedding_dim").get<int>();
  p.config.hidden = j.at("hidden").get<std::vector<int>>();
  p.embedding = j.at("embedding").get<std::vector<double>>();
  if (p.embedding.size() !=
      static_cast<std::size_t>(kVocab) * static_cast<std::size_t>(p.config.embedding_dim)) {
    throw std::runtime_error("checkpoint: embedding shape mismatch");
  }
  for (const auto& layer : j.at("trunk")) p.trunk.push_back(layer_from_json(layer));
  p.heads[0] = layer_from_json(j.at("heads").at("rel"));
  p.heads[1] = layer_from_json(j.at("heads").at("rev"));
  p.heads[2] = layer_from_json(j.at("heads").at("risk"));
  return p;
}

}  // namespace calicausal
