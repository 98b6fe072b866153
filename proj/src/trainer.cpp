#include "calicausal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <future>
#include <thread>

#include "calicausal/csv.hpp"
#include "calicausal/rng.hpp"

namespace calicausal {

namespace {

std::uint64_t mix_id(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

double bce(double p, double y) { return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p)); }
double bce_dp(double p, double y) { return (p - y) / (p * (1.0 - p)); }

struct Adam {
  double lr;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m, v;
  std::int64_t t = 0;

  explicit Adam(double lr_, std::size_t n) : lr(lr_), m(n, 0.0), v(n, 0.0) {}

  void step(std::vector<double*>& params, const std::vector<double*>& grads) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = *grads[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      *params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

}  // namespace

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw std::invalid_argument("train.learning_rate: must be > 0");
  if (batch_size < 1) throw std::invalid_argument("train.batch_size: must be >= 1");
  if (epochs < 0) throw std::invalid_argument("train.epochs: must be >= 0");
  if (K < 1) throw std::invalid_argument("train.K: must be >= 1");
  if (w_cal < 0.0 || w_cf < 0.0) throw std::invalid_argument("train.weights: must be >= 0");
  if (alpha < 0.0) throw std::invalid_argument("train.alpha: must be >= 0");
  if (tau <= 0.0) throw std::invalid_argument("train.tau: must be > 0");
  if (top_k < 1) throw std::invalid_argument("train.top_k: must be >= 1");
  if (epsilon_min <= 0.0 || epsilon_min > 1.0) {
    throw std::invalid_argument("train.epsilon_min: must be in (0, 1]");
  }
  if (eval_fraction <= 0.0 || eval_fraction >= 1.0) {
    throw std::invalid_argument("train.eval_fraction: must be in (0, 1)");
  }
  if (patience < 1) throw std::invalid_argument("train.patience: must be >= 1");
  if (!ablation.no_constraints) {
    if (!std::isfinite(dual.c_max) || dual.c_max <= 0.0) {
      throw std::invalid_argument("train.dual.c_max: required, must be a positive number");
    }
    if (!std::isfinite(dual.r_max) || dual.r_max < 0.0 || dual.r_max > 1.0) {
      throw std::invalid_argument("train.dual.r_max: required, must be a probability");
    }
    if (dual.eta <= 0.0) throw std::invalid_argument("train.dual.eta: must be > 0");
    if (dual.lambda_init < 0.0) {
      throw std::invalid_argument("train.dual.lambda_init: must be >= 0");
    }
  }
}

Dataset Dataset::from(std::vector<Example> ex, std::vector<LoggedImpression> log) {
  Dataset d;
  d.examples = std::move(ex);
  d.impressions = std::move(log);
  d.index.reserve(d.examples.size());
  for (std::size_t i = 0; i < d.examples.size(); ++i) {
    d.index.emplace(d.examples[i].id, i);
  }
  for (const auto& imp : d.impressions) {
    if (!d.index.count(imp.example_id)) {
      throw std::invalid_argument("Dataset: impression references unknown example " +
                                  std::to_string(imp.example_id));
    }
  }
  return d;
}

std::pair<LossBreakdown, GradientBundle> total_loss(const std::vector<LoggedImpression>& batch,
                                                    const ModelParams& params,
                                                    const DualState& duals,
                                                    const TrainConfig& cfg,
                                                    const LossContext& ctx) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  const std::size_t n = batch.size();

  std::vector<Example> feats;
  feats.reserve(n);
  for (const auto& imp : batch) {
    feats.push_back(ctx.data->examples[ctx.data->index.at(imp.example_id)]);
  }

  ForwardTape tape = forward_batch(params, feats);
  std::vector<ScoreGrad> dscores(n, ScoreGrad{0.0, 0.0, 0.0});
  LossBreakdown out;

  // Pointwise term: relevance vs clicks everywhere; the conversion head is
  // fit on the clicked subset only.
  std::vector<std::size_t> clicked_idx;
  for (std::size_t i = 0; i < n; ++i) {
    if (batch[i].clicked) clicked_idx.push_back(i);
  }
  {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double y = batch[i].clicked ? 1.0 : 0.0;
      out.point += bce(tape.scores[i].rel, y) * inv_n;
      dscores[i][0] += bce_dp(tape.scores[i].rel, y) * inv_n;
    }
    if (!clicked_idx.empty()) {
      const double inv_c = 1.0 / static_cast<double>(clicked_idx.size());
      for (std::size_t i : clicked_idx) {
        const double y = batch[i].converted ? 1.0 : 0.0;
        out.point += bce(tape.scores[i].rev, y) * inv_c;
        dscores[i][1] += bce_dp(tape.scores[i].rev, y) * inv_c;
      }
    }
  }
  if (!std::isfinite(out.point)) throw std::runtime_error("total_loss: non-finite pointwise term");

  if (!cfg.ablation.no_calibration && cfg.w_cal > 0.0) {
    std::vector<std::vector<double>> preds(2), labels(2);
    std::vector<std::vector<int>> buckets(2);
    preds[0].reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      preds[0].push_back(tape.scores[i].rel);
      labels[0].push_back(batch[i].clicked ? 1.0 : 0.0);
      buckets[0].push_back(ctx.bucket_key->bucket_of(feats[i].segment, feats[i].dense[0]));
    }
    for (std::size_t i : clicked_idx) {
      preds[1].push_back(tape.scores[i].rev);
      labels[1].push_back(batch[i].converted ? 1.0 : 0.0);
      buckets[1].push_back(buckets[0][i]);
    }
    const auto cal = calibration_loss(preds, labels, buckets, cfg.K);
    out.cal = cal.loss;
    if (!std::isfinite(out.cal)) throw std::runtime_error("total_loss: non-finite calibration term");
    for (std::size_t i = 0; i < n; ++i) dscores[i][0] += cfg.w_cal * cal.dpred[0][i];
    for (std::size_t j = 0; j < clicked_idx.size(); ++j) {
      dscores[clicked_idx[j]][1] += cfg.w_cal * cal.dpred[1][j];
    }
  }

  {
    // CPC and relevance-mass accumulators are reported even when the
    // constraint term is ablated, so traces stay comparable.
    std::vector<double> bids(n), srel(n);
    for (std::size_t i = 0; i < n; ++i) {
      bids[i] = batch[i].bid;
      srel[i] = tape.scores[i].rel;
      out.srel_sum += srel[i];
      out.bid_srel_sum += bids[i] * srel[i];
      out.mean_risk += tape.scores[i].risk / static_cast<double>(n);
    }
    std::vector<double> dcpc;
    out.cpc = batch_cpc(bids, srel, &dcpc);
    if (!cfg.ablation.no_constraints) {
      const auto pen = constraint_penalty(out.cpc, out.mean_risk, duals);
      out.con = pen.penalty;
      if (!std::isfinite(out.con)) throw std::runtime_error("total_loss: non-finite constraint term");
      for (std::size_t i = 0; i < n; ++i) {
        dscores[i][0] += pen.d_cpc * dcpc[i];
        dscores[i][2] += pen.d_mean_risk / static_cast<double>(n);
      }
      if (cfg.lambda_fairness > 0.0) {
        std::vector<int> segments(n);
        int n_clusters = 0;
        for (std::size_t i = 0; i < n; ++i) {
          segments[i] = feats[i].segment;
          n_clusters = std::max(n_clusters, segments[i] + 1);
        }
        const auto fair = fairness_penalty(segments, srel, n_clusters, cfg.lambda_fairness);
        out.con += fair.penalty;
        for (std::size_t i = 0; i < n; ++i) dscores[i][0] += fair.d_srel[i];
      }
    }
  }

  if (!cfg.ablation.no_counterfactual && cfg.w_cf > 0.0) {
    if (ctx.table == nullptr) {
      throw std::runtime_error("total_loss: counterfactual term enabled without propensities");
    }
    std::vector<double> combined(n);
    for (std::size_t i = 0; i < n; ++i) {
      combined[i] = final_ranking_score(tape.scores[i], ctx.combiner);
    }
    CfLossConfig cf_cfg;
    cf_cfg.alpha = cfg.alpha;
    cf_cfg.top_k = cfg.top_k;
    cf_cfg.tau = cfg.tau;
    cf_cfg.reward = cfg.reward;
    const auto cf = cf_loss(batch, group_slates(batch), combined, *ctx.table, cf_cfg);
    out.cf = cf.loss;
    if (!std::isfinite(out.cf)) throw std::runtime_error("total_loss: non-finite counterfactual term");
    for (std::size_t i = 0; i < n; ++i) {
      dscores[i][0] += cfg.w_cf * cf.d_score[i] * ctx.combiner.rel;
      dscores[i][1] += cfg.w_cf * cf.d_score[i] * ctx.combiner.rev;
      dscores[i][2] -= cfg.w_cf * cf.d_score[i] * ctx.combiner.risk;
    }
  }

  out.total = out.point + cfg.w_cal * out.cal + out.con + cfg.w_cf * out.cf;
  if (!std::isfinite(out.total)) throw std::runtime_error("total_loss: non-finite total");
  return {out, backward_batch(params, feats, tape, dscores)};
}

namespace {

std::vector<TaskScores> score_impressions(const ModelParams& params, const Dataset& data,
                                          const std::vector<LoggedImpression>& impressions) {
  std::vector<Example> feats;
  feats.reserve(impressions.size());
  for (const auto& imp : impressions) {
    feats.push_back(data.examples[data.index.at(imp.example_id)]);
  }
  return forward_batch(params, feats).scores;
}

}  // namespace

EvalReport evaluate_model(const ModelParams& params, const Dataset& data,
                          const std::vector<LoggedImpression>& impressions,
                          const PropensityTable& table, const TrainConfig& cfg) {
  if (impressions.empty()) throw std::invalid_argument("evaluate_model: empty impression set");
  const auto scores = score_impressions(params, data, impressions);

  EvalReport report;
  report.k = cfg.top_k;
  report.ece_bins = kReportEceBins;
  report.reward_kind = reward_kind_name(cfg.reward);
  report.seed = cfg.seed;

  std::vector<double> rel_scores(impressions.size());
  std::vector<int> click_labels(impressions.size());
  std::vector<double> rel_pred_v(impressions.size()), click_v(impressions.size());
  for (std::size_t i = 0; i < impressions.size(); ++i) {
    rel_scores[i] = scores[i].rel;
    click_labels[i] = impressions[i].clicked ? 1 : 0;
    rel_pred_v[i] = scores[i].rel;
    click_v[i] = click_labels[i];
  }
  report.auc_rel = auc(rel_scores, click_labels);
  report.ece_rel = ece(rel_pred_v, click_v, kReportEceBins);

  std::vector<double> rev_scores, conv_v;
  std::vector<int> conv_labels;
  for (std::size_t i = 0; i < impressions.size(); ++i) {
    if (!impressions[i].clicked) continue;
    rev_scores.push_back(scores[i].rev);
    conv_labels.push_back(impressions[i].converted ? 1 : 0);
    conv_v.push_back(impressions[i].converted ? 1.0 : 0.0);
  }
  const bool rev_two_class =
      !conv_labels.empty() &&
      std::count(conv_labels.begin(), conv_labels.end(), 1) > 0 &&
      std::count(conv_labels.begin(), conv_labels.end(), 0) > 0;
  if (rev_two_class) {
    report.auc_rev = auc(rev_scores, conv_labels);
    std::vector<double> rev_pred_v(rev_scores.begin(), rev_scores.end());
    report.ece_rev = ece(rev_pred_v, conv_v, kReportEceBins);
  }

  const auto slates = group_slates(impressions);
  double ndcg_sum = 0.0;
  for (const auto& slate : slates) {
    std::vector<double> combined;
    std::vector<std::int64_t> ids;
    for (std::size_t i = slate.begin; i < slate.end; ++i) {
      combined.push_back(final_ranking_score(scores[i], cfg.combiner));
      ids.push_back(impressions[i].example_id);
    }
    const auto order = rank_order(combined, ids);
    std::vector<double> rels;
    rels.reserve(order.size());
    for (std::size_t r : order) {
      const auto& imp = impressions[slate.begin + r];
      rels.push_back(cfg.ndcg_label == NdcgLabel::kClick ? (imp.clicked ? 1.0 : 0.0)
                                                         : imp.reward);
    }
    ndcg_sum += ndcg_at_k(rels, cfg.top_k);
  }
  report.ndcg_at_k = ndcg_sum / static_cast<double>(slates.size());

  report.utility = utility_at_k(params, cfg.combiner, data.examples, data.index, impressions,
                                table, cfg.top_k, cfg.reward);
  return report;
}

SlateSplit split_slates(std::size_t n_slates, const TrainConfig& cfg) {
  if (n_slates < 2) throw std::invalid_argument("split_slates: need at least two slates");
  std::vector<std::size_t> slate_ids(n_slates);
  for (std::size_t i = 0; i < slate_ids.size(); ++i) slate_ids[i] = i;
  Rng split_rng(derive_seed(cfg.seed, "train/split"));
  split_rng.shuffle(slate_ids);
  std::size_t n_eval =
      static_cast<std::size_t>(std::lround(cfg.eval_fraction * static_cast<double>(n_slates)));
  n_eval = std::clamp<std::size_t>(n_eval, 1, n_slates - 1);
  SlateSplit split;
  split.eval_ids.assign(slate_ids.begin(), slate_ids.begin() + static_cast<std::ptrdiff_t>(n_eval));
  split.train_ids.assign(slate_ids.begin() + static_cast<std::ptrdiff_t>(n_eval), slate_ids.end());
  std::sort(split.eval_ids.begin(), split.eval_ids.end());
  std::sort(split.train_ids.begin(), split.train_ids.end());
  return split;
}

TrainResult train(const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.impressions.empty()) throw std::invalid_argument("train: empty impression log");

  const auto slates = group_slates(data.impressions);
  const SlateSplit split = split_slates(slates.size(), cfg);
  const std::vector<std::size_t>& eval_ids = split.eval_ids;
  const std::vector<std::size_t>& train_ids = split.train_ids;

  auto collect = [&](const std::vector<std::size_t>& ids) {
    std::vector<LoggedImpression> out;
    for (std::size_t s : ids) {
      for (std::size_t i = slates[s].begin; i < slates[s].end; ++i) {
        out.push_back(data.impressions[i]);
      }
    }
    return out;
  };
  const std::vector<LoggedImpression> eval_imps = collect(eval_ids);

  // Propensities from the randomized slice of the training split. A constant
  // reference is enough under uniform shuffling; the scale cancels.
  std::vector<LoggedImpression> randomized;
  for (std::size_t s : train_ids) {
    for (std::size_t i = slates[s].begin; i < slates[s].end; ++i) {
      if (data.impressions[i].randomized) randomized.push_back(data.impressions[i]);
    }
  }
  if (randomized.empty()) {
    throw std::runtime_error("train: no randomized impressions to estimate propensities from");
  }
  double click_rate = 0.0;
  for (const auto& imp : randomized) click_rate += imp.clicked ? 1.0 : 0.0;
  click_rate = std::max(click_rate / static_cast<double>(randomized.size()), 1e-6);
  const PropensityTable table = estimate_propensities(
      randomized, [click_rate](std::int64_t) { return click_rate; }, cfg.epsilon_min,
      cfg.min_count);

  // Bucket key frozen from the training impressions; the key uses only static
  // features, so one computation covers all epochs.
  BucketKey bucket_key;
  {
    std::vector<Example> train_feats;
    for (std::size_t s : train_ids) {
      for (std::size_t i = slates[s].begin; i < slates[s].end; ++i) {
        train_feats.push_back(data.examples[data.index.at(data.impressions[i].example_id)]);
      }
    }
    bucket_key = make_bucket_key(train_feats, cfg.K);
  }

  LossContext ctx;
  ctx.data = &data;
  ctx.bucket_key = &bucket_key;
  ctx.table = &table;
  ctx.combiner = cfg.combiner;

  ModelParams params = init_params(cfg.model, derive_seed(cfg.seed, "train/init"));
  DualState duals;
  duals.lambda_c = cfg.ablation.no_constraints ? 0.0 : cfg.dual.lambda_init;
  duals.lambda_r = cfg.ablation.no_constraints ? 0.0 : cfg.dual.lambda_init;
  duals.c_max = cfg.ablation.no_constraints ? 0.0 : cfg.dual.c_max;
  duals.r_max = cfg.ablation.no_constraints ? 0.0 : cfg.dual.r_max;
  duals.eta_dual = cfg.dual.eta;

  auto param_ptrs = param_pointers(params);
  Adam adam(cfg.learning_rate, param_ptrs.size());

  TrainHistory history;
  double best_auc = -1.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = train_ids;
    Rng shuffle_rng(derive_seed(cfg.seed, "train/shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    EpochRecord rec;
    rec.epoch = epoch;
    std::uint64_t batch_hash = 1469598103934665603ULL;
    double imp_total = 0.0;
    double sum_total = 0.0, sum_point = 0.0, sum_cal = 0.0, sum_con = 0.0, sum_cf = 0.0;
    double srel_sum = 0.0, bid_srel_sum = 0.0, risk_sum = 0.0;

    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<LoggedImpression> batch;
      for (std::size_t s = start; s < stop; ++s) {
        const auto& span = slates[order[s]];
        for (std::size_t i = span.begin; i < span.end; ++i) {
          batch.push_back(data.impressions[i]);
          batch_hash = mix_id(batch_hash, static_cast<std::uint64_t>(data.impressions[i].example_id));
        }
      }
      auto [breakdown, grads] = total_loss(batch, params, duals, cfg, ctx);
      if (breakdown.total > 1e6) {
        history.epochs.push_back(rec);
        throw DivergenceError("train: loss diverged above 1e6 at epoch " + std::to_string(epoch),
                              history);
      }
      auto grad_ptrs = param_pointers(grads);
      adam.step(param_ptrs, grad_ptrs);

      const double bn = static_cast<double>(batch.size());
      imp_total += bn;
      sum_total += breakdown.total * bn;
      sum_point += breakdown.point * bn;
      sum_cal += breakdown.cal * bn;
      sum_con += breakdown.con * bn;
      sum_cf += breakdown.cf * bn;
      srel_sum += breakdown.srel_sum;
      bid_srel_sum += breakdown.bid_srel_sum;
      risk_sum += breakdown.mean_risk * bn;
    }

    rec.loss_total = sum_total / imp_total;
    rec.loss_point = sum_point / imp_total;
    rec.loss_cal = sum_cal / imp_total;
    rec.loss_con = sum_con / imp_total;
    rec.loss_cf = sum_cf / imp_total;
    rec.cpc = srel_sum > 1e-12 ? bid_srel_sum / srel_sum : 0.0;
    rec.mean_risk = risk_sum / imp_total;
    if (!cfg.ablation.no_constraints) {
      rec.cpc_violation = std::max(0.0, rec.cpc - duals.c_max);
      rec.risk_violation = std::max(0.0, rec.mean_risk - duals.r_max);
    }
    rec.batch_hash = batch_hash;

    if (!cfg.ablation.no_constraints && !cfg.dual.frozen) {
      duals = dual_update(duals, rec.cpc, rec.mean_risk);
    }
    rec.lambda_c = duals.lambda_c;
    rec.lambda_r = duals.lambda_r;

    {
      const auto eval_scores = score_impressions(params, data, eval_imps);
      std::vector<double> s(eval_imps.size()), p(eval_imps.size()), y(eval_imps.size());
      std::vector<int> lab(eval_imps.size());
      for (std::size_t i = 0; i < eval_imps.size(); ++i) {
        s[i] = eval_scores[i].rel;
        p[i] = eval_scores[i].rel;
        lab[i] = eval_imps[i].clicked ? 1 : 0;
        y[i] = lab[i];
      }
      rec.eval_auc_rel = auc(s, lab);
      rec.eval_ece_rel = ece(p, y, kReportEceBins);
    }

    history.epochs.push_back(rec);
    if (rec.eval_auc_rel > best_auc) {
      best_auc = rec.eval_auc_rel;
      history.best_epoch = epoch;
    } else if (epoch - history.best_epoch >= cfg.patience) {
      break;  // held-out AUC plateau
    }
  }

  TrainResult result;
  result.params = std::move(params);
  result.history = std::move(history);
  result.table = table;
  result.bucket_key = bucket_key;
  result.eval_impressions = eval_imps;
  result.report = evaluate_model(result.params, data, eval_imps, table, cfg);
  return result;
}

std::vector<BucketStat> eval_bucket_stats(const ModelParams& params, const Dataset& data,
                                          const std::vector<LoggedImpression>& impressions,
                                          const BucketKey& key) {
  const auto scores = score_impressions(params, data, impressions);
  std::vector<std::vector<double>> preds(2), labels(2);
  std::vector<std::vector<int>> buckets(2);
  for (std::size_t i = 0; i < impressions.size(); ++i) {
    const auto& ex = data.examples[data.index.at(impressions[i].example_id)];
    const int b = key.bucket_of(ex.segment, ex.dense[0]);
    preds[0].push_back(scores[i].rel);
    labels[0].push_back(impressions[i].clicked ? 1.0 : 0.0);
    buckets[0].push_back(b);
    if (impressions[i].clicked) {
      preds[1].push_back(scores[i].rev);
      labels[1].push_back(impressions[i].converted ? 1.0 : 0.0);
      buckets[1].push_back(b);
    }
  }
  return bucket_stats({"rel", "rev"}, preds, labels, buckets, key.K);
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
  CsvTable t;
  t.header = {"epoch",     "loss_total", "loss_point", "loss_cal",     "loss_con",
              "loss_cf",   "cpc",        "mean_risk",  "eval_auc_rel", "eval_ece_rel",
              "batch_hash"};
  for (const auto& r : history.epochs) {
    t.rows.push_back({std::to_string(r.epoch), format_double(r.loss_total),
                      format_double(r.loss_point), format_double(r.loss_cal),
                      format_double(r.loss_con), format_double(r.loss_cf), format_double(r.cpc),
                      format_double(r.mean_risk), format_double(r.eval_auc_rel),
                      format_double(r.eval_ece_rel), std::to_string(r.batch_hash)});
  }
  write_csv(path, t);
}

void write_constraint_trace_csv(const std::filesystem::path& path, const TrainHistory& history) {
  CsvTable t;
  t.header = {"epoch", "cpc", "cpc_violation", "mean_risk", "risk_violation", "lambda_c",
              "lambda_r"};
  for (const auto& r : history.epochs) {
    t.rows.push_back({std::to_string(r.epoch), format_double(r.cpc),
                      format_double(r.cpc_violation), format_double(r.mean_risk),
                      format_double(r.risk_violation), format_double(r.lambda_c),
                      format_double(r.lambda_r)});
  }
  write_csv(path, t);
}

std::vector<AblationVariant> run_ablation(const Dataset& data, const TrainConfig& base,
                                          const std::filesystem::path& out_dir) {
  std::vector<AblationVariant> variants;
  variants.push_back({"full", {}, {}, {}});
  variants.push_back({"no_calibration", {true, false, false}, {}, {}});
  variants.push_back({"no_constraints", {false, true, false}, {}, {}});
  variants.push_back({"no_counterfactual", {false, false, true}, {}, {}});

  for (auto& variant : variants) {
    TrainConfig cfg = base;
    cfg.ablation = variant.flags;
    const TrainResult result = train(data, cfg);
    variant.report = result.report;
    for (const auto& rec : result.history.epochs) {
      variant.batch_hashes.push_back(rec.batch_hash);
    }
    if (!out_dir.empty()) {
      const auto dir = out_dir / variant.name;
      std::filesystem::create_directories(dir);
      save_checkpoint(dir / "checkpoint.json", result.params);
      write_history_csv(dir / "history.csv", result.history);
      write_constraint_trace_csv(dir / "constraint_trace.csv", result.history);
      write_eval_report_json(dir / "eval_report.json", result.report);
      write_propensity_csv(dir / "propensities.csv", result.table);
    }
  }
  return variants;
}

namespace {

double auc_on_log(const ModelParams& params, const Dataset& data,
                  const std::vector<LoggedImpression>& impressions) {
  const auto scores = score_impressions(params, data, impressions);
  std::vector<double> s(impressions.size());
  std::vector<int> lab(impressions.size());
  for (std::size_t i = 0; i < impressions.size(); ++i) {
    s[i] = scores[i].rel;
    lab[i] = impressions[i].clicked ? 1 : 0;
  }
  return auc(s, lab);
}

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t cap = static_cast<std::size_t>(thread_cap());
  if (cap <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::future<void>> pending;
  std::size_t next = 0;
  while (next < n || !pending.empty()) {
    while (next < n && pending.size() < cap) {
      pending.push_back(std::async(std::launch::async, fn, next++));
    }
    pending.front().get();
    pending.erase(pending.begin());
  }
}

}  // namespace

int thread_cap() {
  if (const char* env = std::getenv("CALICAUSAL_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

TransferResult run_transfer(const TransferConfig& cfg) {
  if (cfg.train_cluster_count < 1 || cfg.eval_cluster_count < 1 ||
      cfg.train_cluster_count + cfg.eval_cluster_count > cfg.sim.clusters) {
    throw std::invalid_argument("transfer: cluster counts must partition the available clusters");
  }
  if (cfg.seeds.empty()) throw std::invalid_argument("transfer: need at least one seed");

  TransferResult result;
  result.rows.resize(cfg.seeds.size());

  parallel_for(cfg.seeds.size(), [&](std::size_t idx) {
    const std::uint64_t seed = cfg.seeds[idx];
    SimulatorConfig sim = cfg.sim;
    sim.seed = seed;
    sim.validate();
    const GroundTruth gt = make_ground_truth(sim);
    const auto examples = generate_examples(sim.n, sim.seed, sim.clusters);

    // Seeded partition of cluster ids into train and eval groups.
    std::vector<int> cluster_ids(static_cast<std::size_t>(sim.clusters));
    for (int c = 0; c < sim.clusters; ++c) cluster_ids[static_cast<std::size_t>(c)] = c;
    Rng split_rng(derive_seed(seed, "transfer/split"));
    split_rng.shuffle(cluster_ids);
    const std::vector<int> train_clusters(cluster_ids.begin(),
                                          cluster_ids.begin() + cfg.train_cluster_count);
    const std::vector<int> eval_clusters(
        cluster_ids.begin() + cfg.train_cluster_count,
        cluster_ids.begin() + cfg.train_cluster_count + cfg.eval_cluster_count);

    auto [train_ex, eval_ex] = cluster_split(examples, train_clusters, eval_clusters);

    SlateLogParams log_params;
    log_params.n_slates = sim.n_slates;
    log_params.slate_size = sim.slate_size;
    log_params.candidates_per_slate = sim.candidates_per_slate;
    log_params.randomized_fraction = sim.randomized_fraction;

    auto random_policy = [&](const std::vector<Example>& ex, std::string_view stream) {
      Rng rng(derive_seed(seed, stream));
      std::vector<double> scores(ex.size());
      for (auto& v : scores) v = rng.uniform01();
      return scores;
    };

    const auto train_log = simulate_slate_log(train_ex, random_policy(train_ex, "transfer/policy-train"),
                                              gt, log_params, derive_seed(seed, "transfer/log-train"));
    SlateLogParams eval_params = log_params;
    eval_params.n_slates = std::max<std::int64_t>(sim.n_slates / 4, 200);
    const auto eval_log = simulate_slate_log(eval_ex, random_policy(eval_ex, "transfer/policy-eval"),
                                             gt, eval_params, derive_seed(seed, "transfer/log-eval"));

    TrainConfig train_cfg = cfg.train;
    train_cfg.seed = seed;
    const Dataset train_data = Dataset::from(train_ex, train_log);
    const TrainResult trained = train(train_data, train_cfg);

    const Dataset eval_data = Dataset::from(eval_ex, eval_log);
    TransferSeedResult row;
    row.seed = seed;
    row.auc_in = trained.report.auc_rel;
    row.auc_cross = auc_on_log(trained.params, eval_data, eval_log);
    row.retention = row.auc_in > 0.0 ? row.auc_cross / row.auc_in : 0.0;
    result.rows[idx] = row;
  });

  double mean = 0.0;
  for (const auto& row : result.rows) mean += row.retention;
  mean /= static_cast<double>(result.rows.size());
  double var = 0.0;
  for (const auto& row : result.rows) {
    var += (row.retention - mean) * (row.retention - mean);
  }
  result.mean_retention = mean;
  result.std_retention = result.rows.size() > 1
                             ? std::sqrt(var / static_cast<double>(result.rows.size() - 1))
                             : 0.0;
  return result;
}

}  // namespace calicausal
