#include "epgrpo/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "epgrpo/analyze.hpp"
#include "epgrpo/errors.hpp"
#include "epgrpo/objective.hpp"
#include "epgrpo/trainer.hpp"
#include "json.hpp"

namespace epgrpo {
namespace {

using nlohmann::json;

constexpr double kTheoremTolerance = 1e-4;  // max relative error allowed per seed

// ===== train =====

struct TrainArgs {
  std::string config_path;
  std::string out_dir;
  // Override slots; CLI11 marks which were actually passed.
  std::string algorithm;
  std::uint64_t seed = 0;
  int steps = 0;
  int group_size = 0;
  int batch_prompts = 0;
  double learning_rate = 0.0;
  double warmup_ratio = 0.0;
  std::string optimizer;
  double weight_decay = 0.0;
  int eval_interval = 0;
  int eval_instances = 0;
  int checkpoint_interval = 0;
  int ref_refresh_interval = 0;
  int vocab = 0;
  int context_order = 0;
  double temperature = 0.0;
  double top_p = 0.0;
  int max_len = 0;
  std::string task;
  int len_min = 0;
  int len_max = 0;
  int modulus = 0;
};

// Resolve the run directory: explicit --out wins; relative paths nest under
// $EPGRPO_RUN_ROOT when set; default is runs/<algorithm>-seed<seed>.
std::string resolve_run_dir(const std::string& out_flag, const RunConfig& config) {
  std::filesystem::path dir =
      out_flag.empty()
          ? std::filesystem::path("runs") /
                (config.algorithm + "-seed" + std::to_string(config.seed))
          : std::filesystem::path(out_flag);
  if (dir.is_relative()) {
    if (const char* root = std::getenv("EPGRPO_RUN_ROOT")) {
      if (*root != '\0') dir = std::filesystem::path(root) / dir;
    }
  }
  return dir.string();
}

int cmd_train(const CLI::App& app, const TrainArgs& args) {
  RunConfig config;
  if (!args.config_path.empty()) config = load_run_config(args.config_path);

  auto passed = [&app](const std::string& flag) { return app.count(flag) > 0; };
  if (passed("--algorithm")) config.algorithm = args.algorithm;
  if (passed("--seed")) config.seed = args.seed;
  if (passed("--steps")) config.steps = args.steps;
  if (passed("--group-size")) config.group_size = args.group_size;
  if (passed("--batch-prompts")) config.batch_prompts = args.batch_prompts;
  if (passed("--lr")) config.learning_rate = args.learning_rate;
  if (passed("--warmup-ratio")) config.warmup_ratio = args.warmup_ratio;
  if (passed("--optimizer")) config.optimizer = args.optimizer;
  if (passed("--weight-decay")) config.weight_decay = args.weight_decay;
  if (passed("--eval-interval")) config.eval_interval = args.eval_interval;
  if (passed("--eval-instances")) config.eval_instances = args.eval_instances;
  if (passed("--checkpoint-interval")) {
    config.checkpoint_interval = args.checkpoint_interval;
  }
  if (passed("--ref-refresh-interval")) {
    config.ref_refresh_interval = args.ref_refresh_interval;
  }
  if (passed("--vocab")) {
    config.policy.vocab_size = args.vocab;
    config.task.vocab_size = args.vocab;
  }
  if (passed("--context-order")) config.policy.context_order = args.context_order;
  if (passed("--temperature")) config.sampling.temperature = args.temperature;
  if (passed("--top-p")) config.sampling.top_p = args.top_p;
  if (passed("--max-len")) config.sampling.max_len = args.max_len;
  if (passed("--task")) config.task.kind = parse_task_kind(args.task);
  if (passed("--len-min")) config.task.len_min = args.len_min;
  if (passed("--len-max")) config.task.len_max = args.len_max;
  if (passed("--modulus")) config.task.modulus = args.modulus;

  config.validate();
  const std::string run_dir = resolve_run_dir(args.out_dir, config);
  std::cerr << "training " << config.algorithm << " for " << config.steps
            << " steps -> " << run_dir << "\n";
  RunReport report = run(config, run_dir);
  std::cout << serialize_run_summary(report.summary) << "\n";
  return kExitSuccess;
}

// ===== advantages =====

int cmd_advantages(const std::string& in_path, const std::string& out_path,
                   const std::string& algorithm, const AdvantageConfig& adv_config) {
  adv_config.validate();
  const AblationFlags flags = parse_algorithm(algorithm);
  std::ifstream in(in_path);
  if (!in) throw IoError("cannot open input: " + in_path);
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot open output: " + out_path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      RolloutGroup group = parse_rollout_group(line);
      GroupAdvantages adv = compute_group_advantages(group, adv_config, flags);
      out << serialize_group_advantages(adv) << "\n";
    } catch (const ParseError& e) {
      throw ParseError(in_path + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const InvariantError& e) {
      throw ParseError(in_path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!out) throw IoError("failed writing: " + out_path);
  return kExitSuccess;
}

// ===== verify-theorem =====

json report_to_json(std::uint64_t seed, const TheoremCheckReport& report) {
  return {{"seed", seed},
          {"analytic_grad_norm", report.analytic_grad_norm},
          {"finite_diff_grad_norm", report.finite_diff_grad_norm},
          {"max_relative_error", report.max_relative_error},
          {"compared_components", report.compared_components},
          {"all_buckets_degenerate", report.all_buckets_degenerate}};
}

int cmd_verify_theorem(int num_seeds, std::uint64_t base_seed,
                       const TheoremHarnessConfig& base, const std::string& json_path) {
  json reports = json::array();
  double worst = 0.0;
  int degenerate = 0;
  bool pass = true;
  for (int i = 0; i < num_seeds; ++i) {
    TheoremHarnessConfig harness = base;
    harness.seed = base_seed + static_cast<std::uint64_t>(i);
    TheoremCheckReport report = run_theorem_check(harness);
    reports.push_back(report_to_json(harness.seed, report));
    worst = std::max(worst, report.max_relative_error);
    if (report.all_buckets_degenerate) ++degenerate;
    const bool seed_ok = report.max_relative_error < kTheoremTolerance;
    pass = pass && seed_ok;
    std::cout << "seed " << harness.seed << ": max_rel_err "
              << report.max_relative_error << " over " << report.compared_components
              << " components"
              << (report.all_buckets_degenerate ? " [all buckets degenerate]" : "")
              << (seed_ok ? "" : "  FAIL") << "\n";
  }
  json summary = {{"seeds", num_seeds},
                  {"tolerance", kTheoremTolerance},
                  {"worst_max_relative_error", worst},
                  {"degenerate_reports", degenerate},
                  {"pass", pass}};
  if (!json_path.empty()) {
    std::ofstream out(json_path);
    if (!out) throw IoError("cannot open output: " + json_path);
    out << json({{"reports", reports}, {"summary", summary}}).dump(2) << "\n";
  }
  std::cout << summary.dump() << "\n";
  return pass ? kExitSuccess : kExitData;
}

// ===== analyze =====

int cmd_analyze(const std::vector<std::string>& paths, const std::string& labels_csv,
                const std::string& json_path, const std::string& plot_path,
                double ema_alpha) {
  std::vector<std::string> labels;
  if (!labels_csv.empty()) {
    std::stringstream ss(labels_csv);
    std::string part;
    while (std::getline(ss, part, ',')) labels.push_back(part);
    if (labels.size() != paths.size()) {
      throw ConfigError("--labels count must match the number of metrics files");
    }
  }
  std::vector<RunSeries> series;
  std::vector<RunAnalysis> analyses;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const std::string label =
        i < labels.size() ? labels[i] : std::filesystem::path(paths[i]).stem().string();
    series.push_back(load_metrics_file(paths[i], label));
    analyses.push_back(analyze_run(series.back(), ema_alpha));
  }
  std::cout << render_analysis_table(analyses);
  if (!json_path.empty()) {
    std::ofstream out(json_path);
    if (!out) throw IoError("cannot open output: " + json_path);
    out << analyses_to_json(analyses) << "\n";
  }
  if (!plot_path.empty()) {
    std::ofstream out(plot_path);
    if (!out) throw IoError("cannot open output: " + plot_path);
    out << render_reward_svg(series, ema_alpha);
  }
  return kExitSuccess;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Token-level advantage shaping trainer and analysis tools"};
  app.require_subcommand(1);

  // --- train ---
  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "Run a training loop");
  train_cmd->add_option("--config", train_args.config_path, "Run config JSON path");
  train_cmd->add_option("--out", train_args.out_dir,
                        "Run directory (relative paths nest under $EPGRPO_RUN_ROOT)");
  train_cmd->add_option("--algorithm", train_args.algorithm,
                        "grpo, epgrpo, or grpo+<eg|ips|zvd>...");
  train_cmd->add_option("--seed", train_args.seed, "Base RNG seed");
  train_cmd->add_option("--steps", train_args.steps, "Training steps");
  train_cmd->add_option("--group-size", train_args.group_size, "Responses per prompt");
  train_cmd->add_option("--batch-prompts", train_args.batch_prompts, "Prompts per step");
  train_cmd->add_option("--lr", train_args.learning_rate, "Peak learning rate");
  train_cmd->add_option("--warmup-ratio", train_args.warmup_ratio, "Warmup fraction");
  train_cmd->add_option("--optimizer", train_args.optimizer, "adamw or sgd");
  train_cmd->add_option("--weight-decay", train_args.weight_decay, "Decoupled decay");
  train_cmd->add_option("--eval-interval", train_args.eval_interval,
                        "Greedy eval cadence (0 = never)");
  train_cmd->add_option("--eval-instances", train_args.eval_instances,
                        "Held-out instances per eval");
  train_cmd->add_option("--checkpoint-interval", train_args.checkpoint_interval,
                        "Checkpoint cadence (0 = final only)");
  train_cmd->add_option("--ref-refresh-interval", train_args.ref_refresh_interval,
                        "Reference re-freeze cadence (0 = never)");
  train_cmd->add_option("--vocab", train_args.vocab, "Vocabulary size (policy + task)");
  train_cmd->add_option("--context-order", train_args.context_order,
                        "Policy context window length");
  train_cmd->add_option("--temperature", train_args.temperature, "Sampling temperature");
  train_cmd->add_option("--top-p", train_args.top_p, "Nucleus mass");
  train_cmd->add_option("--max-len", train_args.max_len, "Response length cap");
  train_cmd->add_option("--task", train_args.task, "copy, reverse, or modsum");
  train_cmd->add_option("--len-min", train_args.len_min, "Min prompt length");
  train_cmd->add_option("--len-max", train_args.len_max, "Max prompt length");
  train_cmd->add_option("--modulus", train_args.modulus,
                        "MODSUM modulus (0 = vocab - 2)");

  // --- advantages ---
  std::string adv_in, adv_out;
  std::string adv_algorithm = "epgrpo";
  AdvantageConfig adv_config;
  CLI::App* adv_cmd = app.add_subcommand(
      "advantages", "Replay the advantage pipeline over rollout JSONL");
  adv_cmd->add_option("--in", adv_in, "Rollout group JSONL input")->required();
  adv_cmd->add_option("--out", adv_out, "Advantages JSONL output")->required();
  adv_cmd->add_option("--algorithm", adv_algorithm,
                      "grpo, epgrpo, or grpo+<eg|ips|zvd>...");
  adv_cmd->add_option("--gamma", adv_config.gamma, "Entropy gate steepness");
  adv_cmd->add_option("--lambda", adv_config.lambda, "Implicit signal scale");
  adv_cmd->add_option("--eta", adv_config.eta, "Progress advantage scale");
  adv_cmd->add_option("--buckets", adv_config.num_buckets, "Progress bucket count");
  adv_cmd->add_option("--reward-threshold", adv_config.reward_threshold,
                      "Zero-variance anchor threshold");
  adv_cmd->add_option("--delta", adv_config.delta, "Reward std stabilizer");
  adv_cmd->add_option("--eps-stab", adv_config.eps_stab, "Generic std stabilizer");

  // --- verify-theorem ---
  int vt_seeds = 20;
  std::uint64_t vt_base_seed = 42;
  std::string vt_json;
  TheoremHarnessConfig vt_config;
  CLI::App* vt_cmd = app.add_subcommand(
      "verify-theorem",
      "Check the analytic progress-term gradient against finite differences");
  vt_cmd->add_option("--seeds", vt_seeds, "Number of random trials")
      ->check(CLI::PositiveNumber);
  vt_cmd->add_option("--seed", vt_base_seed, "First trial seed");
  vt_cmd->add_option("--fd-step", vt_config.fd_step, "Central difference step");
  vt_cmd->add_option("--vocab", vt_config.vocab_size, "Policy vocabulary size");
  vt_cmd->add_option("--context-order", vt_config.context_order,
                     "Policy context window length");
  vt_cmd->add_option("--group-size", vt_config.group_size, "Responses per group");
  vt_cmd->add_option("--max-len", vt_config.max_len, "Response length cap");
  vt_cmd->add_option("--beta", vt_config.beta, "KL coefficient in the regularizer");
  vt_cmd->add_option("--json", vt_json, "Write the full report JSON here");

  // --- analyze ---
  std::vector<std::string> an_paths;
  std::string an_labels, an_json, an_plot;
  double an_alpha = 0.2;
  CLI::App* an_cmd =
      app.add_subcommand("analyze", "Summarize one or more metrics JSONL files");
  an_cmd->add_option("paths", an_paths, "Metrics JSONL files")->required();
  an_cmd->add_option("--labels", an_labels, "Comma-separated run labels");
  an_cmd->add_option("--json", an_json, "Write analysis JSON here");
  an_cmd->add_option("--plot", an_plot, "Write a reward-curve SVG here");
  an_cmd->add_option("--ema", an_alpha, "Smoothing factor")
      ->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, returns 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(*train_cmd, train_args);
    if (adv_cmd->parsed()) {
      return cmd_advantages(adv_in, adv_out, adv_algorithm, adv_config);
    }
    if (vt_cmd->parsed()) {
      return cmd_verify_theorem(vt_seeds, vt_base_seed, vt_config, vt_json);
    }
    if (an_cmd->parsed()) {
      return cmd_analyze(an_paths, an_labels, an_json, an_plot, an_alpha);
    }
    return kExitUsage;  // unreachable with require_subcommand(1)
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace epgrpo
