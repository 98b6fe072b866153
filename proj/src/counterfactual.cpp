#include "calicausal/counterfactual.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "calicausal/csv.hpp"

namespace calicausal {

double PropensityTable::at(int position) const {
  if (position < 1 || static_cast<std::size_t>(position) > rows.size()) {
    throw std::invalid_argument("PropensityTable: position " + std::to_string(position) +
                                " not covered");
  }
  return rows[static_cast<std::size_t>(position - 1)].propensity;
}

PropensityTable exact_propensity_table(std::span<const double> values, double epsilon_min) {
  PropensityTable t;
  t.epsilon_min = epsilon_min;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] <= 0.0 || values[i] > 1.0) {
      throw std::invalid_argument("exact_propensity_table: propensities must be in (0, 1]");
    }
    PropensityEntry e;
    e.position = static_cast<int>(i + 1);
    e.propensity = std::max(values[i], epsilon_min);
    t.rows.push_back(e);
  }
  return t;
}

PropensityTable estimate_propensities(
    const std::vector<LoggedImpression>& randomized_impressions,
    const std::function<double(std::int64_t example_id)>& reference_ctr, double epsilon_min,
    std::int64_t min_count) {
  if (randomized_impressions.empty()) {
    throw std::invalid_argument("estimate_propensities: no randomized impressions");
  }
  if (epsilon_min <= 0.0 || epsilon_min > 1.0) {
    throw std::invalid_argument("estimate_propensities: epsilon_min must be in (0, 1]");
  }
  int max_pos = 0;
  for (const auto& imp : randomized_impressions) {
    if (!imp.randomized) {
      throw std::invalid_argument(
          "estimate_propensities: input contains a non-randomized impression");
    }
    max_pos = std::max(max_pos, imp.position);
  }

  PropensityTable t;
  t.epsilon_min = epsilon_min;
  t.rows.resize(static_cast<std::size_t>(max_pos));
  for (int p = 1; p <= max_pos; ++p) t.rows[static_cast<std::size_t>(p - 1)].position = p;

  for (const auto& imp : randomized_impressions) {
    auto& row = t.rows[static_cast<std::size_t>(imp.position - 1)];
    row.clicks += imp.clicked ? 1.0 : 0.0;
    const double ref = reference_ctr(imp.example_id);
    if (!(ref > 0.0)) {
      throw std::invalid_argument("estimate_propensities: reference CTR must be positive");
    }
    row.expected_clicks += ref;
    ++row.count;
  }

  for (const auto& row : t.rows) {
    if (row.count < min_count) {
      throw std::runtime_error("estimate_propensities: position " + std::to_string(row.position) +
                               " has only " + std::to_string(row.count) + " samples (need " +
                               std::to_string(min_count) + ")");
    }
  }

  std::vector<double> raw(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    raw[i] = t.rows[i].clicks / t.rows[i].expected_clicks;
  }
  // Click ratios identify propensities only up to scale; anchor position 1.
  const double anchor = raw[0];
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const double normalized = anchor > 0.0 ? raw[i] / anchor : raw[i];
    t.rows[i].propensity = std::clamp(normalized, epsilon_min, 1.0);
  }
  return t;
}

namespace {

void check_core_inputs(std::span<const double> rewards, std::span<const double> weights) {
  if (rewards.empty() || rewards.size() != weights.size()) {
    throw std::invalid_argument("estimator: empty input or reward/weight size mismatch");
  }
  for (double w : weights) {
    if (!(w > 0.0)) throw std::invalid_argument("estimator: weights must be positive");
  }
}

std::vector<double> weights_for(const std::vector<LoggedImpression>& impressions,
                                const PropensityTable& table) {
  std::vector<double> w;
  w.reserve(impressions.size());
  for (const auto& imp : impressions) w.push_back(1.0 / table.at(imp.position));
  return w;
}

std::vector<double> rewards_for(const std::vector<LoggedImpression>& impressions,
                                RewardKind kind) {
  std::vector<double> r;
  r.reserve(impressions.size());
  for (const auto& imp : impressions) r.push_back(reward_of(imp, kind));
  return r;
}

double ess_of(std::span<const double> weights) {
  double sum = 0.0, sum_sq = 0.0;
  for (double w : weights) {
    sum += w;
    sum_sq += w * w;
  }
  return sum * sum / sum_sq;
}

}  // namespace

UtilityEstimate ips_core(std::span<const double> rewards, std::span<const double> weights) {
  check_core_inputs(rewards, weights);
  const auto n = static_cast<double>(rewards.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) sum += rewards[i] * weights[i];
  const double value = sum / n;

  double ss = 0.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    const double d = rewards[i] * weights[i] - value;
    ss += d * d;
  }
  UtilityEstimate est;
  est.value = value;
  est.variance = rewards.size() > 1 ? ss / (n - 1.0) / n : 0.0;
  est.ess = ess_of(weights);
  est.n = static_cast<std::int64_t>(rewards.size());
  est.estimator = "IPS";
  return est;
}

UtilityEstimate snips_core(std::span<const double> rewards, std::span<const double> weights) {
  check_core_inputs(rewards, weights);
  const auto n = static_cast<double>(rewards.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    num += rewards[i] * weights[i];
    den += weights[i];
  }
  if (den <= 0.0) throw std::invalid_argument("snips: weight sum must be positive");
  const double value = num / den;

  // Delta method for the ratio of means: Var ~ mean((w_i (r_i - U))^2) / (n wbar^2).
  const double wbar = den / n;
  double ss = 0.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    const double d = weights[i] * (rewards[i] - value);
    ss += d * d;
  }
  UtilityEstimate est;
  est.value = value;
  est.variance = ss / n / (n * wbar * wbar);
  est.ess = ess_of(weights);
  est.n = static_cast<std::int64_t>(rewards.size());
  est.estimator = "SNIPS";
  return est;
}

UtilityEstimate ips_estimate(const std::vector<LoggedImpression>& impressions,
                             const PropensityTable& table, RewardKind reward) {
  const auto r = rewards_for(impressions, reward);
  const auto w = weights_for(impressions, table);
  return ips_core(r, w);
}

UtilityEstimate snips_estimate(const std::vector<LoggedImpression>& impressions,
                               const PropensityTable& table, RewardKind reward) {
  const auto r = rewards_for(impressions, reward);
  const auto w = weights_for(impressions, table);
  return snips_core(r, w);
}

CfLossResult cf_loss(const std::vector<LoggedImpression>& impressions,
                     const std::vector<SlateSpan>& slates, std::span<const double> scores,
                     const PropensityTable& table, const CfLossConfig& cfg) {
  if (cfg.alpha < 0.0) throw std::invalid_argument("cf_loss: alpha must be >= 0");
  if (cfg.tau <= 0.0) throw std::invalid_argument("cf_loss: tau must be > 0");
  if (cfg.top_k < 1) throw std::invalid_argument("cf_loss: top_k must be >= 1");
  if (scores.size() != impressions.size()) {
    throw std::invalid_argument("cf_loss: score/impression size mismatch");
  }
  if (impressions.empty()) throw std::invalid_argument("cf_loss: empty batch");

  const std::size_t n = impressions.size();
  const double k = static_cast<double>(cfg.top_k);

  // Soft top-k inclusion per slate: q_i = min(1, k * softmax(score/tau)_i).
  std::vector<double> softmax(n, 0.0);
  std::vector<double> q(n, 0.0);
  std::vector<bool> unclamped(n, true);
  for (const auto& slate : slates) {
    double max_u = -1e300;
    for (std::size_t i = slate.begin; i < slate.end; ++i) {
      max_u = std::max(max_u, scores[i] / cfg.tau);
    }
    double z = 0.0;
    for (std::size_t i = slate.begin; i < slate.end; ++i) {
      softmax[i] = std::exp(scores[i] / cfg.tau - max_u);
      z += softmax[i];
    }
    for (std::size_t i = slate.begin; i < slate.end; ++i) {
      softmax[i] /= z;
      const double raw = k * softmax[i];
      if (raw >= 1.0) {
        q[i] = 1.0;
        unclamped[i] = false;
      } else {
        q[i] = raw;
      }
    }
  }

  std::vector<double> base_rewards = rewards_for(impressions, cfg.reward);
  std::vector<double> weights = weights_for(impressions, table);
  std::vector<double> weighted_rewards(n);
  for (std::size_t i = 0; i < n; ++i) weighted_rewards[i] = q[i] * base_rewards[i];

  const UtilityEstimate est = snips_core(weighted_rewards, weights);

  CfLossResult res;
  res.weighted_estimate = est;
  res.loss = -est.value + cfg.alpha * est.variance;

  // d loss / d weighted_reward_j, with U = sum(w r)/W and
  // V = sum(w_i^2 (r_i - U)^2) / W^2.
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  double corr = 0.0;  // sum w_i^2 (r_i - U)
  for (std::size_t i = 0; i < n; ++i) {
    corr += weights[i] * weights[i] * (weighted_rewards[i] - est.value);
  }
  std::vector<double> dloss_dr(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double du = weights[j] / wsum;
    const double dv = (2.0 / (wsum * wsum)) *
                      (weights[j] * weights[j] * (weighted_rewards[j] - est.value) -
                       weights[j] * corr / wsum);
    dloss_dr[j] = -du + cfg.alpha * dv;
  }

  // Chain through q = k * softmax(u) within each slate, u = score / tau.
  res.d_score.assign(n, 0.0);
  for (const auto& slate : slates) {
    double inner = 0.0;  // sum over slate of g_i m_i s_i
    for (std::size_t i = slate.begin; i < slate.end; ++i) {
      if (unclamped[i]) inner += dloss_dr[i] * base_rewards[i] * softmax[i];
    }
    for (std::size_t j = slate.begin; j < slate.end; ++j) {
      const double gj = unclamped[j] ? dloss_dr[j] * base_rewards[j] : 0.0;
      res.d_score[j] = k * softmax[j] * (gj - inner) / cfg.tau;
    }
  }
  return res;
}

void write_propensity_csv(const std::filesystem::path& path, const PropensityTable& table) {
  CsvTable t;
  t.header = {"position", "propensity", "clicks", "expected_clicks", "count"};
  for (const auto& row : table.rows) {
    t.rows.push_back({std::to_string(row.position), format_double(row.propensity),
                      format_double(row.clicks), format_double(row.expected_clicks),
                      std::to_string(row.count)});
  }
  write_csv(path, t);
}

PropensityTable read_propensity_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  PropensityTable table;
  for (const auto& row : t.rows) {
    PropensityEntry e;
    e.position = static_cast<int>(parse_int(row[0]));
    e.propensity = parse_double(row[1]);
    e.clicks = parse_double(row[2]);
    e.expected_clicks = parse_double(row[3]);
    e.count = parse_int(row[4]);
    table.rows.push_back(e);
  }
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    if (table.rows[i].position != static_cast<int>(i + 1)) {
      throw std::runtime_error("read_propensity_csv: positions not contiguous from 1");
    }
  }
  return table;
}

void write_estimate_json(const std::filesystem::path& path, const UtilityEstimate& est,
                         double epsilon_min) {
  nlohmann::json j;
  j["estimator"] = est.estimator;
  j["value"] = est.value;
  j["variance"] = est.variance;
  j["ess"] = est.ess;
  j["n"] = est.n;
  j["epsilon_min"] = epsilon_min;
  write_text_file(path, j.dump(1) + "\n");
}

}  // namespace calicausal
