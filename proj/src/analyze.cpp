#include "epgrpo/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace epgrpo {
namespace {

using nlohmann::json;

// Contiguous floor-division thirds: [0, n/3), [n/3, 2n/3), [2n/3, n).
std::array<std::pair<std::size_t, std::size_t>, 3> stage_bounds(std::size_t n) {
  return {{{0, n / 3}, {n / 3, 2 * n / 3}, {2 * n / 3, n}}};
}

std::string format_fixed(double value, int precision) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << value;
  return out.str();
}

}  // namespace

RunSeries load_metrics_file(const std::string& path, const std::string& label) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file: " + path);
  RunSeries series;
  series.label = label;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      series.steps.push_back(parse_step_metrics(line));
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return series;
}

RunAnalysis analyze_run(const RunSeries& series, double ema_alpha) {
  if (series.steps.empty()) throw InvariantError("metrics series is empty");
  RunAnalysis a;
  a.label = series.label;
  a.steps = static_cast<int>(series.steps.size());

  const auto bounds = stage_bounds(series.steps.size());
  for (int stage = 0; stage < 3; ++stage) {
    const auto [begin, end] = bounds[stage];
    if (begin == end) continue;  // empty third of a very short run
    int flagged_steps = 0;
    std::int64_t zv_groups = 0;
    std::int64_t total_groups = 0;
    for (std::size_t i = begin; i < end; ++i) {
      const StepMetrics& m = series.steps[i];
      if (m.zero_variance_groups > 0) ++flagged_steps;
      zv_groups += m.zero_variance_groups;
      total_groups += m.num_groups;
    }
    a.stage_step_ratio[stage] =
        static_cast<double>(flagged_steps) / static_cast<double>(end - begin);
    a.stage_group_ratio[stage] =
        total_groups == 0 ? 0.0
                          : static_cast<double>(zv_groups) / static_cast<double>(total_groups);
  }
  a.pooled_zero_variance_ratio = zero_variance_ratio(series.steps);

  std::vector<double> rewards;
  rewards.reserve(series.steps.size());
  double kl_sum = 0.0;
  double grad_sum = 0.0;
  for (const StepMetrics& m : series.steps) {
    rewards.push_back(m.mean_reward);
    kl_sum += m.mean_kl;
    grad_sum += m.grad_norm;
    a.max_kl = std::max(a.max_kl, m.mean_kl);
    if (m.has_eval) {
      a.has_eval = true;
      a.final_eval_accuracy = m.eval_accuracy;
      a.final_eval_format_rate = m.eval_format_rate;
    }
  }
  a.first_reward = rewards.front();
  a.final_reward = rewards.back();
  a.final_smoothed_reward = ema_smooth(rewards, ema_alpha).back();
  a.mean_kl = kl_sum / static_cast<double>(series.steps.size());
  a.mean_grad_norm = grad_sum / static_cast<double>(series.steps.size());
  return a;
}

std::string render_analysis_table(std::span<const RunAnalysis> runs) {
  std::ostringstream out;
  out << "run                 steps  zv_early  zv_mid  zv_late  zv_pooled"
      << "  reward0  rewardT  smoothT  mean_kl   eval_acc\n";
  for (const RunAnalysis& a : runs) {
    std::string label = a.label.size() > 19 ? a.label.substr(0, 19) : a.label;
    out << std::left << std::setw(19) << label << std::right << std::setw(6) << a.steps
        << std::setw(10) << format_fixed(a.stage_group_ratio[0], 3) << std::setw(8)
        << format_fixed(a.stage_group_ratio[1], 3) << std::setw(9)
        << format_fixed(a.stage_group_ratio[2], 3) << std::setw(11)
        << format_fixed(a.pooled_zero_variance_ratio, 3) << std::setw(9)
        << format_fixed(a.first_reward, 3) << std::setw(9)
        << format_fixed(a.final_reward, 3) << std::setw(9)
        << format_fixed(a.final_smoothed_reward, 3) << std::setw(9)
        << format_fixed(a.mean_kl, 5) << std::setw(11)
        << (a.has_eval ? format_fixed(a.final_eval_accuracy, 3) : std::string("-"))
        << "\n";
  }
  return out.str();
}

std::string analyses_to_json(std::span<const RunAnalysis> runs) {
  json arr = json::array();
  for (const RunAnalysis& a : runs) {
    json j = {{"label", a.label},
              {"steps", a.steps},
              {"stage_step_ratio", a.stage_step_ratio},
              {"stage_group_ratio", a.stage_group_ratio},
              {"pooled_zero_variance_ratio", a.pooled_zero_variance_ratio},
              {"first_reward", a.first_reward},
              {"final_reward", a.final_reward},
              {"final_smoothed_reward", a.final_smoothed_reward},
              {"mean_kl", a.mean_kl},
              {"max_kl", a.max_kl},
              {"mean_grad_norm", a.mean_grad_norm}};
    if (a.has_eval) {
      j["final_eval_accuracy"] = a.final_eval_accuracy;
      j["final_eval_format_rate"] = a.final_eval_format_rate;
    }
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

std::string render_reward_svg(std::span<const RunSeries> runs, double ema_alpha) {
  constexpr int kWidth = 720;
  constexpr int kHeight = 360;
  constexpr int kMargin = 48;
  // A fixed qualitative palette; cycles when there are more runs than colors.
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b"};

  std::size_t max_steps = 1;
  for (const RunSeries& r : runs) max_steps = std::max(max_steps, r.steps.size());

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight
      << "\">\n";
  out << "  <rect width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" fill=\"white\"/>\n";
  // Axes: reward in [0, 1] vertically, step index horizontally.
  const int x0 = kMargin, x1 = kWidth - kMargin;
  const int y0 = kHeight - kMargin, y1 = kMargin;
  out << "  <line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\""
      << y0 << "\" stroke=\"#444\"/>\n";
  out << "  <line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\""
      << y1 << "\" stroke=\"#444\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double frac = tick / 4.0;
    const double y = y0 - frac * (y0 - y1);
    out << "  <line x1=\"" << x0 - 4 << "\" y1=\"" << y << "\" x2=\"" << x0
        << "\" y2=\"" << y << "\" stroke=\"#444\"/>\n";
    out << "  <text x=\"" << x0 - 8 << "\" y=\"" << y + 4
        << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">"
        << format_fixed(frac, 2) << "</text>\n";
  }
  out << "  <text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 12
      << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">"
      << "step</text>\n";
  out << "  <text x=\"16\" y=\"" << (y0 + y1) / 2
      << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\" "
      << "transform=\"rotate(-90 16 " << (y0 + y1) / 2 << ")\">"
      << "smoothed mean reward</text>\n";

  int color_idx = 0;
  int legend_y = y1 + 6;
  for (const RunSeries& r : runs) {
    if (r.steps.empty()) continue;
    std::vector<double> rewards;
    rewards.reserve(r.steps.size());
    for (const StepMetrics& m : r.steps) rewards.push_back(m.mean_reward);
    const std::vector<double> smoothed = ema_smooth(rewards, ema_alpha);
    const char* color = kColors[color_idx % (sizeof(kColors) / sizeof(kColors[0]))];
    ++color_idx;

    out << "  <polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < smoothed.size(); ++i) {
      const double fx = max_steps > 1
                            ? static_cast<double>(i) / static_cast<double>(max_steps - 1)
                            : 0.0;
      const double fy = std::clamp(smoothed[i], 0.0, 1.0);
      const double px = x0 + fx * (x1 - x0);
      const double py = y0 - fy * (y0 - y1);
      out << format_fixed(px, 2) << "," << format_fixed(py, 2);
      if (i + 1 < smoothed.size()) out << " ";
    }
    out << "\"/>\n";
    out << "  <text x=\"" << x1 - 6 << "\" y=\"" << legend_y
        << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\" fill=\""
        << color << "\">" << r.label << "</text>\n";
    legend_y += 14;
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace epgrpo
