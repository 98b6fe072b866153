#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "calicausal/simulator.hpp"
#include "calicausal/trainer.hpp"

namespace calicausal {

enum class LoggingPolicy { kNoisyOracle, kRandom };

struct SimulateSettings {
  SimulatorConfig sim;
  LoggingPolicy logging_policy = LoggingPolicy::kNoisyOracle;
  double policy_noise = 0.1;
};

struct DataPaths {
  std::string examples;
  std::string impressions;
};

struct TransferSettings {
  int train_cluster_count = 7;
  int eval_cluster_count = 3;
  std::vector<std::uint64_t> seeds = {101, 102, 103, 104, 105};
};

// Parsed run configuration. Sections are optional; each subcommand demands
// the ones it needs. Unknown fields anywhere are rejected with their path.
struct AppConfig {
  std::uint64_t seed = 1;
  std::optional<SimulateSettings> simulate;
  std::optional<DataPaths> data;
  std::optional<TrainConfig> train;  // model/combiner folded in, seed applied
  std::optional<TransferSettings> transfer;
  std::optional<std::string> evaluate_run;
};

AppConfig load_config(const std::filesystem::path& path);

// Content hash of the raw config bytes (fnv1a-64, hex).
std::string config_fingerprint(const std::filesystem::path& path);

}  // namespace calicausal
