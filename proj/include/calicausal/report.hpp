#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "calicausal/metrics.hpp"

namespace calicausal {

using NamedReport = std::pair<std::string, EvalReport>;

std::string comparison_table_text(const std::vector<NamedReport>& reports);
void write_comparison_table_csv(const std::filesystem::path& path,
                                const std::vector<NamedReport>& reports);

// Grouped bar chart over AUC, NDCG@k, ECE and Utility@k; one bar per run in
// each group. Dependency-free SVG.
std::string comparison_chart_svg(const std::vector<NamedReport>& reports);

}  // namespace calicausal
