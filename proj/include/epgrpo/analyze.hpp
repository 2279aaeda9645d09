#pragma once

/**
 * Post-hoc analysis of metric streams: zero-variance prevalence by training
 * stage (first/middle/final thirds of the run), reward and KL summaries, and
 * a cross-run comparison table. Optionally renders smoothed reward curves as
 * a self-contained SVG.
 */

#include <array>
#include <span>
#include <string>
#include <vector>

#include "epgrpo/trainer.hpp"

namespace epgrpo {

struct RunSeries {
  std::string label;
  std::vector<StepMetrics> steps;
};

// Load a metrics JSONL file; throws IoError / ParseError with line numbers.
RunSeries load_metrics_file(const std::string& path, const std::string& label);

struct RunAnalysis {
  std::string label;
  int steps = 0;
  // Fraction of steps that produced at least one zero-variance group, per
  // contiguous third of the run (empty thirds report 0).
  std::array<double, 3> stage_step_ratio{};
  // Fraction of groups with zero reward spread, pooled per third.
  std::array<double, 3> stage_group_ratio{};
  double pooled_zero_variance_ratio = 0.0;
  double first_reward = 0.0;
  double final_reward = 0.0;
  double final_smoothed_reward = 0.0;
  double mean_kl = 0.0;
  double max_kl = 0.0;
  double mean_grad_norm = 0.0;
  bool has_eval = false;
  double final_eval_accuracy = 0.0;
  double final_eval_format_rate = 0.0;
};

RunAnalysis analyze_run(const RunSeries& series, double ema_alpha = 0.2);

std::string render_analysis_table(std::span<const RunAnalysis> runs);
std::string analyses_to_json(std::span<const RunAnalysis> runs);

// Smoothed mean-reward curves, one polyline per run.
std::string render_reward_svg(std::span<const RunSeries> runs, double ema_alpha = 0.2);

}  // namespace epgrpo
