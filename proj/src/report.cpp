#include "calicausal/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "calicausal/calibration.hpp"
#include "calicausal/csv.hpp"

namespace calicausal {

namespace {

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

const char* kBarColors[] = {"#4878cf", "#6acc65", "#d65f5f", "#b47cc7",
                            "#c4ad66", "#77bedb", "#8c613c", "#dc7ec0"};

}  // namespace

std::string comparison_table_text(const std::vector<NamedReport>& reports) {
  std::ostringstream out;
  const int k = reports.empty() ? 10 : reports.front().second.k;
  const int bins = reports.empty() ? kReportEceBins : reports.front().second.ece_bins;
  out << "# ECE over " << bins << " equal-width bins; CPC = score-weighted mean bid\n";
  out << format_report_header(k) << "\n";
  for (const auto& [name, report] : reports) {
    out << format_report_row(name, report) << "\n";
  }
  return out.str();
}

void write_comparison_table_csv(const std::filesystem::path& path,
                                const std::vector<NamedReport>& reports) {
  CsvTable t;
  const int k = reports.empty() ? 10 : reports.front().second.k;
  t.header = {"run", "auc", "ndcg_at_" + std::to_string(k), "ece",
              "utility_at_" + std::to_string(k)};
  for (const auto& [name, report] : reports) {
    t.rows.push_back({name, format_double(report.auc_rel), format_double(report.ndcg_at_k),
                      format_double(report.ece_rel), format_double(report.utility.value)});
  }
  write_csv(path, t);
}

std::string comparison_chart_svg(const std::vector<NamedReport>& reports) {
  struct Group {
    std::string label;
    std::vector<double> values;
  };
  const int k = reports.empty() ? 10 : reports.front().second.k;
  std::vector<Group> groups = {{"AUC", {}},
                               {"NDCG@" + std::to_string(k), {}},
                               {"ECE", {}},
                               {"Utility@" + std::to_string(k), {}}};
  for (const auto& [name, report] : reports) {
    groups[0].values.push_back(report.auc_rel);
    groups[1].values.push_back(report.ndcg_at_k);
    groups[2].values.push_back(report.ece_rel);
    groups[3].values.push_back(report.utility.value);
  }

  const int n_runs = static_cast<int>(reports.size());
  const double bar_w = 26.0;
  const double group_pad = 36.0;
  const double group_w = bar_w * std::max(1, n_runs) + group_pad;
  const double chart_h = 240.0;
  const double margin_left = 50.0;
  const double margin_top = 30.0;
  const double legend_h = 24.0 + 16.0 * n_runs;
  const double width = margin_left + group_w * static_cast<double>(groups.size()) + 20.0;
  const double height = margin_top + chart_h + 60.0 + legend_h;

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "  <style>text { font-family: sans-serif; font-size: 11px; }</style>\n";
  svg << "  <rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";

  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double gx = margin_left + group_w * static_cast<double>(g);
    double vmax = 0.0;
    for (double v : groups[g].values) vmax = std::max(vmax, std::abs(v));
    if (vmax == 0.0) vmax = 1.0;
    for (int r = 0; r < n_runs; ++r) {
      const double v = groups[g].values[static_cast<std::size_t>(r)];
      const double h = chart_h * std::max(0.0, v) / vmax;
      const double x = gx + bar_w * r;
      const double y = margin_top + chart_h - h;
      svg << "  <rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << (bar_w - 4.0)
          << "\" height=\"" << h << "\" fill=\"" << kBarColors[r % 8] << "\"/>\n";
      svg << "  <text x=\"" << x + (bar_w - 4.0) / 2.0 << "\" y=\"" << y - 4.0
          << "\" text-anchor=\"middle\" font-size=\"8\">" << fixed6(v).substr(0, 6)
          << "</text>\n";
    }
    svg << "  <text x=\"" << gx + bar_w * std::max(1, n_runs) / 2.0 << "\" y=\""
        << margin_top + chart_h + 18.0 << "\" text-anchor=\"middle\">" << groups[g].label
        << "</text>\n";
  }

  svg << "  <line x1=\"" << margin_left - 8.0 << "\" y1=\"" << margin_top + chart_h << "\" x2=\""
      << width - 10.0 << "\" y2=\"" << margin_top + chart_h
      << "\" stroke=\"#333\" stroke-width=\"1\"/>\n";

  for (int r = 0; r < n_runs; ++r) {
    const double ly = margin_top + chart_h + 44.0 + 16.0 * r;
    svg << "  <rect x=\"" << margin_left << "\" y=\"" << ly - 9.0
        << "\" width=\"10\" height=\"10\" fill=\"" << kBarColors[r % 8] << "\"/>\n";
    svg << "  <text x=\"" << margin_left + 16.0 << "\" y=\"" << ly << "\">"
        << reports[static_cast<std::size_t>(r)].first << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace calicausal
