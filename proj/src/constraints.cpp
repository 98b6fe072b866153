#include "calicausal/constraints.hpp"

#include <algorithm>
#include <stdexcept>

namespace calicausal {

double batch_cpc(std::span<const double> bids, std::span<const double> s_rel,
                 std::vector<double>* dcpc_dsrel) {
  if (bids.empty() || bids.size() != s_rel.size()) {
    throw std::invalid_argument("batch_cpc: empty batch or size mismatch");
  }
  double weighted = 0.0;
  double mass = 0.0;
  for (std::size_t i = 0; i < bids.size(); ++i) {
    weighted += bids[i] * s_rel[i];
    mass += s_rel[i];
  }
  if (mass < 1e-12) {
    throw std::runtime_error("batch_cpc: degenerate batch, relevance mass below 1e-12");
  }
  const double cpc = weighted / mass;
  if (dcpc_dsrel) {
    dcpc_dsrel->resize(bids.size());
    for (std::size_t i = 0; i < bids.size(); ++i) {
      (*dcpc_dsrel)[i] = (bids[i] - cpc) / mass;
    }
  }
  return cpc;
}

PenaltyResult constraint_penalty(double cpc, double mean_risk, const DualState& dual) {
  if (dual.lambda_c < 0.0 || dual.lambda_r < 0.0) {
    throw std::invalid_argument("constraint_penalty: multipliers must be nonnegative");
  }
  PenaltyResult res;
  const double cpc_violation = cpc - dual.c_max;
  if (cpc_violation > 0.0) {
    res.penalty += dual.lambda_c * cpc_violation;
    res.d_cpc = dual.lambda_c;
  }
  const double risk_violation = mean_risk - dual.r_max;
  if (risk_violation > 0.0) {
    res.penalty += dual.lambda_r * risk_violation;
    res.d_mean_risk = dual.lambda_r;
  }
  return res;
}

DualState dual_update(const DualState& dual, double cpc, double mean_risk) {
  DualState next = dual;
  next.lambda_c = std::max(0.0, dual.lambda_c + dual.eta_dual * (cpc - dual.c_max));
  next.lambda_r = std::max(0.0, dual.lambda_r + dual.eta_dual * (mean_risk - dual.r_max));
  return next;
}

FairnessResult fairness_penalty(std::span<const int> segments, std::span<const double> s_rel,
                                int n_clusters, double lambda_f) {
  if (segments.size() != s_rel.size()) {
    throw std::invalid_argument("fairness_penalty: size mismatch");
  }
  if (n_clusters < 1) throw std::invalid_argument("fairness_penalty: n_clusters must be >= 1");
  FairnessResult res;
  res.d_srel.assign(s_rel.size(), 0.0);
  if (lambda_f <= 0.0 || s_rel.empty()) return res;

  double mass = 0.0;
  std::vector<double> cluster_mass(static_cast<std::size_t>(n_clusters), 0.0);
  for (std::size_t i = 0; i < s_rel.size(); ++i) {
    if (segments[i] < 0 || segments[i] >= n_clusters) {
      throw std::invalid_argument("fairness_penalty: segment out of range");
    }
    cluster_mass[static_cast<std::size_t>(segments[i])] += s_rel[i];
    mass += s_rel[i];
  }
  if (mass < 1e-12) return res;

  const double target = 1.0 / static_cast<double>(n_clusters);
  std::vector<double> active(static_cast<std::size_t>(n_clusters), 0.0);
  for (int c = 0; c < n_clusters; ++c) {
    const double share = cluster_mass[static_cast<std::size_t>(c)] / mass;
    if (share > target) {
      res.penalty += lambda_f * (share - target);
      active[static_cast<std::size_t>(c)] = 1.0;
    }
  }
  // d share_c / d s_i = (1[i in c] - share_c) / mass.
  for (std::size_t i = 0; i < s_rel.size(); ++i) {
    double g = 0.0;
    for (int c = 0; c < n_clusters; ++c) {
      if (active[static_cast<std::size_t>(c)] == 0.0) continue;
      const double share = cluster_mass[static_cast<std::size_t>(c)] / mass;
      const double ind = segments[i] == c ? 1.0 : 0.0;
      g += lambda_f * (ind - share) / mass;
    }
    res.d_srel[i] = g;
  }
  return res;
}

}  // namespace calicausal
