#pragma once

#include <span>
#include <vector>

namespace calicausal {

// Lagrange multipliers and thresholds for the CPC and risk constraints.
// Multipliers are projected to stay nonnegative after every update.
struct DualState {
  double lambda_c = 0.5;
  double lambda_r = 0.5;
  double c_max = 0.0;     // currency per click
  double r_max = 0.0;     // mean predicted risk threshold
  double eta_dual = 0.01;
};

// Expected cost per click over a batch: score-weighted mean bid.
// Throws when the relevance mass is degenerate (sum below 1e-12).
double batch_cpc(std::span<const double> bids, std::span<const double> s_rel,
                 std::vector<double>* dcpc_dsrel = nullptr);

struct PenaltyResult {
  double penalty = 0.0;
  double d_cpc = 0.0;        // partial w.r.t. the CPC estimate
  double d_mean_risk = 0.0;  // partial w.r.t. the mean predicted risk
};

// Hinge penalty lambda_c*max(0, cpc - c_max) + lambda_r*max(0, risk - r_max).
// Subgradient at the boundary is zero.
PenaltyResult constraint_penalty(double cpc, double mean_risk, const DualState& dual);

// One dual gradient ascent step on epoch-level averages.
DualState dual_update(const DualState& dual, double cpc, double mean_risk);

// Optional exposure-fairness hinge: penalizes clusters whose share of the
// relevance mass exceeds the equal-share target. Off by default in training.
struct FairnessResult {
  double penalty = 0.0;
  std::vector<double> d_srel;
};

FairnessResult fairness_penalty(std::span<const int> segments, std::span<const double> s_rel,
                                int n_clusters, double lambda_f);

}  // namespace calicausal
