#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace calicausal {

// Feature geometry. Desk-scale stand-in for industrial feature sets; widening
// these is the intended scaling knob and everything downstream adapts.
inline constexpr int kDenseDim = 8;
inline constexpr int kCatSlots = 6;
inline constexpr int kVocabPerSlot = 100;
inline constexpr int kVocab = kCatSlots * kVocabPerSlot;

// One user-ad pair. true_* fields are the simulator's latent behavioral model
// and are never visible to the learner; the evaluation harness uses them as
// oracles.
struct Example {
  std::int64_t id = 0;
  std::array<double, kDenseDim> dense{};         // each in [0, 1]
  std::array<int, kCatSlots> cats{};             // each in [0, kVocabPerSlot)
  double true_ctr = 0.0;
  double true_cvr = 0.0;
  double true_risk = 0.0;
  double true_revenue = 0.0;                     // realized revenue if converted
  int segment = 0;                               // feature cluster id
};

// One serving-time record. `examined` is simulator-private ground truth and is
// deliberately absent from the exported log schema.
struct LoggedImpression {
  std::int64_t example_id = 0;
  int position = 1;            // 1-based display position
  bool examined = false;
  bool clicked = false;
  bool converted = false;
  double bid = 0.0;
  bool randomized = false;     // drawn from the uniformly shuffled slice
  double reward = 0.0;         // revenue if converted, else 0
};

// Which reward feeds the counterfactual estimators.
enum class RewardKind { kRevenue, kClick };

inline double reward_of(const LoggedImpression& imp, RewardKind kind) {
  return kind == RewardKind::kClick ? (imp.clicked ? 1.0 : 0.0) : imp.reward;
}

inline const char* reward_kind_name(RewardKind kind) {
  return kind == RewardKind::kClick ? "click" : "revenue";
}

// Half-open [begin, end) range of impressions belonging to one slate.
// Logs are stored slate-major with positions ascending, so slate boundaries
// are recoverable from position resets.
struct SlateSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

std::vector<SlateSpan> group_slates(const std::vector<LoggedImpression>& log);

}  // namespace calicausal
