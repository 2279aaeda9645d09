#pragma once

/**
 * Training loop.
 *
 * One step samples a batch of fresh task instances, rolls out a response
 * group per prompt, verifies rewards, shapes advantages under the configured
 * algorithm, accumulates the exact loss gradient, and applies one optimizer
 * update under a warmup + linear-decay schedule. Metrics stream to JSONL one
 * record per step; identical configurations produce byte-identical streams.
 */

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "epgrpo/advantage.hpp"
#include "epgrpo/objective.hpp"
#include "epgrpo/policy.hpp"
#include "epgrpo/rollout.hpp"
#include "epgrpo/tasks.hpp"

namespace epgrpo {

// Algorithm name -> participating mechanisms. Accepts "grpo", "epgrpo", and
// "grpo+<flags>" with flags among eg, ips, zvd (zvd requires ips).
AblationFlags parse_algorithm(const std::string& name);

struct RunConfig {
  std::string algorithm = "epgrpo";
  std::uint64_t seed = 0;
  int steps = 300;
  int group_size = 8;       // responses per prompt
  int batch_prompts = 16;   // prompts per step
  double learning_rate = 0.05;
  double warmup_ratio = 0.1;  // fraction of steps spent in linear warmup
  std::string optimizer = "adamw";  // or "sgd"
  double weight_decay = 0.001;
  int ref_refresh_interval = 0;  // re-freeze the reference every N steps; 0 = never
  int eval_interval = 50;        // greedy eval cadence; 0 = never
  int eval_instances = 64;       // held-out instance count; 0 skips eval
  int checkpoint_interval = 0;   // checkpoint cadence; 0 = final only
  PolicyConfig policy;
  SamplingConfig sampling;
  TaskConfig task;
  AdvantageConfig advantage;
  LossConfig loss;

  void validate() const;
  AblationFlags flags() const { return parse_algorithm(algorithm); }
};

// Warmup to learning_rate over round(warmup_ratio * steps) steps, then decay
// linearly toward zero at the end of the run.
double learning_rate_at(const RunConfig& config, int step);

struct StepMetrics {
  int step = 0;
  double lr = 0.0;
  double mean_reward = 0.0;
  double format_rate = 0.0;
  std::vector<double> group_reward_std;  // population std per group
  int zero_variance_groups = 0;
  int num_groups = 0;
  double zero_variance_ratio = 0.0;  // zero_variance_groups / num_groups
  double loss = 0.0;
  double reward_loss = 0.0;
  double kl_loss = 0.0;
  double grad_norm = 0.0;         // full gradient
  double reward_grad_norm = 0.0;  // clipped-surrogate part only
  double mean_kl = 0.0;
  double mean_entropy = 0.0;
  double mean_response_length = 0.0;
  double adv_final_mean_abs = 0.0;
  double adv_outcome_mean_abs = 0.0;
  double adv_progress_mean_abs = 0.0;
  bool has_eval = false;
  double eval_accuracy = 0.0;
  double eval_format_rate = 0.0;
};

std::string serialize_step_metrics(const StepMetrics& m);
StepMetrics parse_step_metrics(const std::string& json_line);

// One full training step at `step`; mutates the policy in place.
StepMetrics train_step(PolicyParams& params, const ReferenceSnapshot& ref,
                       const RunConfig& config, int step);

struct EvalResult {
  double accuracy = 0.0;
  double format_rate = 0.0;
};

// Greedy decode over the held-out instance stream (disjoint seeds from
// training instances).
EvalResult evaluate_greedy(const PolicyParams& params, const RunConfig& config,
                           int num_instances);

struct RunSummary {
  int steps = 0;
  double final_smoothed_reward = 0.0;  // EMA of mean reward, alpha 0.2
  double baseline_smoothed_reward = 0.0;  // first step's mean reward
  double pooled_zero_variance_ratio = 0.0;
  bool has_eval = false;
  double final_eval_accuracy = 0.0;
  double final_eval_format_rate = 0.0;
};

struct RunReport {
  PolicyParams policy;
  std::vector<StepMetrics> metrics;
  RunSummary summary;
};

// Full run. With a non-empty run_dir, writes config.json, metrics.jsonl
// (incrementally), periodic + final checkpoints, and summary.json there.
RunReport run(const RunConfig& config, const std::string& run_dir = "");

// Fraction of groups with zero reward spread, pooled over a metrics window.
double zero_variance_ratio(std::span<const StepMetrics> window);

// Exponential moving average, y[0] = x[0], y[t] = alpha*x[t] + (1-alpha)*y[t-1].
std::vector<double> ema_smooth(std::span<const double> series, double alpha);

std::string serialize_run_config(const RunConfig& config);
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string serialize_run_summary(const RunSummary& summary);

}  // namespace epgrpo
