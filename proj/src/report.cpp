#include "treemax/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace treemax {

std::string format_double(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.12g", value);
  return buffer;
}

const char* kSweepCsvHeader =
    "regime,seed,S,A,beta,gamma,variant,depth,lambda2,exact_variance,"
    "lemma1_bound,theorem_bound,normalized_variance,normalized_model";

std::string sweep_csv(const std::vector<SweepRow>& rows, const std::string& status) {
  std::ostringstream out;
  out << kSweepCsvHeader << "\n";
  for (const auto& row : rows) {
    out << row.regime << ',' << row.seed << ',' << row.num_states << ',' << row.num_actions
        << ',' << format_double(row.beta) << ',' << format_double(row.gamma) << ','
        << variant_name(row.variant) << ',' << row.depth << ','
        << format_double(row.lambda2) << ',' << format_double(row.exact_variance) << ','
        << format_double(row.lemma1_bound) << ',' << format_double(row.theorem_bound)
        << ',' << format_double(row.normalized_variance) << ','
        << format_double(row.normalized_model) << "\n";
  }
  out << "# status=" << status << "\n";
  return out.str();
}

std::string train_csv(const std::vector<TrainRecord>& records, const std::string& status,
                      bool include_timing, const std::vector<double>& wall_ms) {
  std::ostringstream out;
  out << "iteration,mean_return,empirical_grad_variance,policy_entropy";
  if (include_timing) out << ",wall_ms";
  out << "\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& record = records[i];
    out << record.iteration << ',' << format_double(record.mean_return) << ','
        << format_double(record.empirical_grad_variance) << ','
        << format_double(record.policy_entropy);
    if (include_timing) out << ',' << format_double(i < wall_ms.size() ? wall_ms[i] : 0.0);
    out << "\n";
  }
  out << "# status=" << status << "\n";
  return out.str();
}

namespace {

const char* kSeriesColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c",
                               "#d62728", "#9467bd", "#8c564b"};

std::string format_coord(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.2f", value);
  return buffer;
}

}  // namespace

std::string sweep_svg(const std::vector<SweepRow>& rows) {
  // series key -> (depth, value) points, log10 y
  std::map<std::string, std::map<int, double>> series;
  double min_log = 0.0, max_log = 0.0;
  int min_depth = 0, max_depth = 1;
  bool first = true;
  for (const auto& row : rows) {
    const std::pair<const char*, double> entries[] = {
        {"variance", row.normalized_variance}, {"model", row.normalized_model}};
    for (const auto& [label, value] : entries) {
      if (!(value > 0.0) || !std::isfinite(value)) continue;
      const double log_value = std::log10(std::max(value, 1e-30));
      series[row.regime + std::string(":") + label][row.depth] = log_value;
      if (first) {
        min_log = max_log = log_value;
        min_depth = max_depth = row.depth;
        first = false;
      }
      min_log = std::min(min_log, log_value);
      max_log = std::max(max_log, log_value);
      min_depth = std::min(min_depth, row.depth);
      max_depth = std::max(max_depth, row.depth);
    }
  }
  if (max_log - min_log < 1e-9) max_log = min_log + 1.0;
  if (max_depth == min_depth) max_depth = min_depth + 1;

  const double width = 640.0, height = 420.0;
  const double left = 70.0, right = 610.0, top = 30.0, bottom = 370.0;
  auto x_of = [&](int depth) {
    return left + (right - left) * (depth - min_depth) / (max_depth - min_depth);
  };
  auto y_of = [&](double log_value) {
    return bottom - (bottom - top) * (log_value - min_log) / (max_log - min_log);
  };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\""
      << bottom << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << bottom << "\" stroke=\"black\"/>\n";
  for (int depth = min_depth; depth <= max_depth; ++depth) {
    out << "<text x=\"" << format_coord(x_of(depth)) << "\" y=\"" << bottom + 20
        << "\" font-size=\"11\" text-anchor=\"middle\">" << depth << "</text>\n";
  }
  out << "<text x=\"" << (left + right) / 2 << "\" y=\"" << bottom + 40
      << "\" font-size=\"12\" text-anchor=\"middle\">depth</text>\n";
  const int ticks = 5;
  for (int i = 0; i <= ticks; ++i) {
    const double log_value = min_log + (max_log - min_log) * i / ticks;
    out << "<text x=\"" << left - 8 << "\" y=\"" << format_coord(y_of(log_value) + 4)
        << "\" font-size=\"11\" text-anchor=\"end\">1e" << format_coord(log_value)
        << "</text>\n";
  }

  int color_index = 0;
  double legend_y = top + 10.0;
  for (const auto& [key, points] : series) {
    const char* color = kSeriesColors[color_index % 6];
    const char* dash = key.find(":model") != std::string::npos ? "4,3" : "";
    out << "<polyline fill=\"none\" stroke=\"" << color << "\"";
    if (*dash) out << " stroke-dasharray=\"" << dash << "\"";
    out << " stroke-width=\"1.5\" points=\"";
    bool first_point = true;
    for (const auto& [depth, log_value] : points) {
      if (!first_point) out << ' ';
      out << format_coord(x_of(depth)) << ',' << format_coord(y_of(log_value));
      first_point = false;
    }
    out << "\"/>\n";
    out << "<text x=\"" << right - 160 << "\" y=\"" << format_coord(legend_y)
        << "\" font-size=\"11\" fill=\"" << color << "\">" << key << "</text>\n";
    legend_y += 14.0;
    ++color_index;
  }
  out << "</svg>\n";
  return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

}  // namespace treemax
