#include "epgrpo/trainer.hpp"

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "epgrpo/seeding.hpp"
#include "json.hpp"

namespace epgrpo {
namespace {

using nlohmann::json;

// Seed-path tags keeping training, evaluation, and harness streams disjoint.
constexpr std::uint64_t kTagTask = 1;
constexpr std::uint64_t kTagRollout = 2;
constexpr std::uint64_t kTagEval = 3;

double l2_norm(const std::vector<double>& xs) {
  double acc = 0.0;
  for (double x : xs) acc += x * x;
  return std::sqrt(acc);
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const char* where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* key : allowed) ok = ok || it.key() == key;
    if (!ok) {
      throw ParseError(std::string("unknown key \"") + it.key() + "\" in " + where);
    }
  }
}

json task_to_json(const TaskConfig& task) {
  json j = {{"task", task_kind_name(task.kind)},
            {"len", {task.len_min, task.len_max}},
            {"vocab", task.vocab_size}};
  if (task.modulus != 0) j["modulus"] = task.modulus;
  return j;
}

TaskConfig task_from_json(const json& j) {
  check_keys(j, {"task", "len", "vocab", "modulus"}, "task config");
  TaskConfig task;
  if (j.contains("task")) task.kind = parse_task_kind(j.at("task").get<std::string>());
  if (j.contains("len")) {
    const json& len = j.at("len");
    if (!len.is_array() || len.size() != 2) {
      throw ParseError("task len must be a [min, max] pair");
    }
    task.len_min = len[0].get<int>();
    task.len_max = len[1].get<int>();
  }
  if (j.contains("vocab")) task.vocab_size = j.at("vocab").get<int>();
  if (j.contains("modulus")) task.modulus = j.at("modulus").get<int>();
  return task;
}

}  // namespace

AblationFlags parse_algorithm(const std::string& name) {
  if (name == "grpo") return AblationFlags::all_off();
  if (name == "epgrpo") return AblationFlags::all_on();
  const std::string prefix = "grpo+";
  if (name.rfind(prefix, 0) != 0) {
    throw ConfigError("unknown algorithm \"" + name +
                      "\" (expected grpo, epgrpo, or grpo+<eg|ips|zvd>...)");
  }
  AblationFlags flags = AblationFlags::all_off();
  std::stringstream ss(name.substr(prefix.size()));
  std::string part;
  while (std::getline(ss, part, '+')) {
    if (part == "eg" && !flags.entropy_gate) {
      flags.entropy_gate = true;
    } else if (part == "ips" && !flags.implicit_progress) {
      flags.implicit_progress = true;
    } else if (part == "zvd" && !flags.zero_variance_degradation) {
      flags.zero_variance_degradation = true;
    } else {
      throw ConfigError("bad algorithm flag \"" + part + "\" in \"" + name + "\"");
    }
  }
  if (flags.zero_variance_degradation && !flags.implicit_progress) {
    throw ConfigError("zvd only modifies the progress term; combine it with ips");
  }
  if (!flags.entropy_gate && !flags.implicit_progress) {
    throw ConfigError("algorithm \"" + name + "\" selects no mechanism; use grpo");
  }
  return flags;
}

void RunConfig::validate() const {
  parse_algorithm(algorithm);
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (group_size < 2) throw ConfigError("group_size must be >= 2");
  if (batch_prompts < 1) throw ConfigError("batch_prompts must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) {
    throw ConfigError("warmup_ratio must lie in [0, 1]");
  }
  if (optimizer != "adamw" && optimizer != "sgd") {
    throw ConfigError("optimizer must be adamw or sgd");
  }
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (ref_refresh_interval < 0 || eval_interval < 0 || eval_instances < 0 ||
      checkpoint_interval < 0) {
    throw ConfigError("intervals and instance counts must be >= 0");
  }
  policy.validate();
  sampling.validate();
  if (sampling.temperature <= 0.0) {
    throw ConfigError("training requires a positive sampling temperature");
  }
  task.validate();
  if (task.vocab_size != policy.vocab_size) {
    throw ConfigError("task vocab must match the policy vocab");
  }
  advantage.validate();
  loss.validate();
}

double learning_rate_at(const RunConfig& config, int step) {
  const int warmup = static_cast<int>(std::llround(config.warmup_ratio * config.steps));
  if (step < warmup) {
    return config.learning_rate * static_cast<double>(step + 1) /
           static_cast<double>(warmup);
  }
  if (config.steps == warmup) return config.learning_rate;
  return config.learning_rate * static_cast<double>(config.steps - step) /
         static_cast<double>(config.steps - warmup);
}

StepMetrics train_step(PolicyParams& params, const ReferenceSnapshot& ref,
                       const RunConfig& config, int step) {
  const AblationFlags flags = config.flags();
  const std::size_t n_params = params.config.param_count();
  std::vector<double> grad_reward(n_params, 0.0);
  std::vector<double> grad_kl(n_params, 0.0);

  StepMetrics m;
  m.step = step;
  m.num_groups = config.batch_prompts;
  double reward_sum = 0.0;
  double format_sum = 0.0;
  double kl_sum = 0.0;
  double entropy_sum = 0.0;
  double length_sum = 0.0;
  double adv_final_sum = 0.0;
  double adv_outcome_sum = 0.0;
  double adv_progress_sum = 0.0;
  std::size_t token_count = 0;
  int rollout_count = 0;

  for (int b = 0; b < config.batch_prompts; ++b) {
    TaskInstance instance = generate_instance(
        config.task, derive_seed(config.seed, {kTagTask, static_cast<std::uint64_t>(step),
                                               static_cast<std::uint64_t>(b)}));
    RolloutGroup group;
    group.prompt_id = "s" + std::to_string(step) + "-p" + std::to_string(b);
    for (int g = 0; g < config.group_size; ++g) {
      ResponseRecord resp = sample_response(
          params, instance.prompt, config.sampling,
          derive_seed(config.seed, {kTagRollout, static_cast<std::uint64_t>(step),
                                    static_cast<std::uint64_t>(b),
                                    static_cast<std::uint64_t>(g)}));
      annotate_reference(resp, ref, instance.prompt);
      std::vector<int> ids;
      ids.reserve(resp.tokens.size());
      for (const TokenRecord& t : resp.tokens) ids.push_back(t.token_id);
      VerifyResult vr = verify(instance, ids);
      resp.reward = vr.reward;
      reward_sum += vr.reward;
      format_sum += vr.format_ok ? 1.0 : 0.0;
      length_sum += static_cast<double>(resp.tokens.size());
      ++rollout_count;
      group.responses.push_back(std::move(resp));
    }

    GroupAdvantages adv = compute_group_advantages(group, config.advantage, flags);
    m.group_reward_std.push_back(adv.reward_std);
    if (adv.zero_variance) ++m.zero_variance_groups;

    LossResult loss = accumulate_gradient(params, instance.prompt, group, adv,
                                          config.loss, config.sampling,
                                          &grad_reward, &grad_kl);
    m.loss += loss.loss;
    m.reward_loss += loss.reward_loss;
    m.kl_loss += loss.kl_loss;

    for (std::size_t i = 0; i < group.responses.size(); ++i) {
      for (std::size_t t = 0; t < group.responses[i].tokens.size(); ++t) {
        const TokenRecord& tok = group.responses[i].tokens[t];
        const TokenAdvantage& ta = adv.responses[i][t];
        kl_sum += kl_estimate(tok.logp_cur, tok.logp_ref);
        entropy_sum += tok.entropy;
        adv_final_sum += std::abs(ta.final_adv);
        adv_outcome_sum += std::abs(ta.outcome_adv);
        adv_progress_sum += std::abs(ta.progress_adv);
        ++token_count;
      }
    }
  }

  const double inv_b = 1.0 / static_cast<double>(config.batch_prompts);
  for (double& g : grad_reward) g *= inv_b;
  for (double& g : grad_kl) g *= inv_b;
  m.loss *= inv_b;
  m.reward_loss *= inv_b;
  m.kl_loss *= inv_b;

  std::vector<double> grad_total(n_params);
  for (std::size_t i = 0; i < n_params; ++i) grad_total[i] = grad_reward[i] + grad_kl[i];
  m.grad_norm = l2_norm(grad_total);
  m.reward_grad_norm = l2_norm(grad_reward);

  m.lr = learning_rate_at(config, step);
  UpdateConfig update;
  update.kind = config.optimizer == "sgd" ? OptimizerKind::Sgd : OptimizerKind::AdamW;
  update.learning_rate = m.lr;
  update.weight_decay = config.weight_decay;
  apply_update(params, grad_total, update);

  m.mean_reward = reward_sum / rollout_count;
  m.format_rate = format_sum / rollout_count;
  m.mean_response_length = length_sum / rollout_count;
  m.zero_variance_ratio =
      static_cast<double>(m.zero_variance_groups) / static_cast<double>(m.num_groups);
  m.mean_kl = kl_sum / static_cast<double>(token_count);
  m.mean_entropy = entropy_sum / static_cast<double>(token_count);
  m.adv_final_mean_abs = adv_final_sum / static_cast<double>(token_count);
  m.adv_outcome_mean_abs = adv_outcome_sum / static_cast<double>(token_count);
  m.adv_progress_mean_abs = adv_progress_sum / static_cast<double>(token_count);
  return m;
}

EvalResult evaluate_greedy(const PolicyParams& params, const RunConfig& config,
                           int num_instances) {
  SamplingConfig greedy;
  greedy.temperature = 0.0;
  greedy.top_p = 1.0;
  greedy.max_len = config.sampling.max_len;
  EvalResult result;
  if (num_instances <= 0) return result;
  for (int i = 0; i < num_instances; ++i) {
    TaskInstance instance = generate_instance(
        config.task,
        derive_seed(config.seed, {kTagEval, static_cast<std::uint64_t>(i)}));
    ResponseRecord resp = sample_response(params, instance.prompt, greedy, 0);
    std::vector<int> ids;
    for (const TokenRecord& t : resp.tokens) ids.push_back(t.token_id);
    VerifyResult vr = verify(instance, ids);
    result.accuracy += vr.reward;
    result.format_rate += vr.format_ok ? 1.0 : 0.0;
  }
  result.accuracy /= num_instances;
  result.format_rate /= num_instances;
  return result;
}

namespace {

void write_checkpoint(const PolicyParams& params, const RunConfig& config, int step,
                      const std::filesystem::path& path) {
  json j = {{"schema_version", 1},
            {"step", step},
            {"run_config", json::parse(serialize_run_config(config))},
            {"policy", json::parse(serialize_policy(params))}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump() << "\n";
  if (!out) throw IoError("failed writing: " + path.string());
}

}  // namespace

RunReport run(const RunConfig& config, const std::string& run_dir) {
  config.validate();
  RunReport report;
  report.policy = PolicyParams::zeros(config.policy);
  ReferenceSnapshot ref = freeze_reference(report.policy);

  std::filesystem::path dir;
  std::ofstream metrics_out;
  const bool with_io = !run_dir.empty();
  if (with_io) {
    dir = run_dir;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create run directory: " + dir.string());
    std::ofstream cfg_out(dir / "config.json");
    if (!cfg_out) throw IoError("cannot write config in: " + dir.string());
    cfg_out << serialize_run_config(config) << "\n";
    metrics_out.open(dir / "metrics.jsonl");
    if (!metrics_out) throw IoError("cannot write metrics in: " + dir.string());
  }

  for (int step = 0; step < config.steps; ++step) {
    if (config.ref_refresh_interval > 0 && step > 0 &&
        step % config.ref_refresh_interval == 0) {
      ref = freeze_reference(report.policy);
    }
    StepMetrics m = train_step(report.policy, ref, config, step);
    const bool last = step == config.steps - 1;
    if (config.eval_instances > 0 && config.eval_interval > 0 &&
        ((step + 1) % config.eval_interval == 0 || last)) {
      EvalResult eval = evaluate_greedy(report.policy, config, config.eval_instances);
      m.has_eval = true;
      m.eval_accuracy = eval.accuracy;
      m.eval_format_rate = eval.format_rate;
    }
    if (with_io) {
      metrics_out << serialize_step_metrics(m) << "\n";
      metrics_out.flush();
      if (config.checkpoint_interval > 0 && (step + 1) % config.checkpoint_interval == 0) {
        write_checkpoint(report.policy, config, step + 1,
                         dir / ("checkpoint_" + std::to_string(step + 1) + ".json"));
      }
    }
    report.metrics.push_back(std::move(m));
  }

  std::vector<double> rewards;
  rewards.reserve(report.metrics.size());
  for (const StepMetrics& m : report.metrics) rewards.push_back(m.mean_reward);
  std::vector<double> smoothed = ema_smooth(rewards, 0.2);

  report.summary.steps = config.steps;
  report.summary.final_smoothed_reward = smoothed.back();
  report.summary.baseline_smoothed_reward = smoothed.front();
  report.summary.pooled_zero_variance_ratio = zero_variance_ratio(report.metrics);
  for (const StepMetrics& m : report.metrics) {
    if (m.has_eval) {
      report.summary.has_eval = true;
      report.summary.final_eval_accuracy = m.eval_accuracy;
      report.summary.final_eval_format_rate = m.eval_format_rate;
    }
  }

  if (with_io) {
    write_checkpoint(report.policy, config, config.steps, dir / "checkpoint_final.json");
    std::ofstream summary_out(dir / "summary.json");
    if (!summary_out) throw IoError("cannot write summary in: " + dir.string());
    summary_out << serialize_run_summary(report.summary) << "\n";
  }
  return report;
}

double zero_variance_ratio(std::span<const StepMetrics> window) {
  std::int64_t zv = 0;
  std::int64_t total = 0;
  for (const StepMetrics& m : window) {
    zv += m.zero_variance_groups;
    total += m.num_groups;
  }
  return total == 0 ? 0.0 : static_cast<double>(zv) / static_cast<double>(total);
}

std::vector<double> ema_smooth(std::span<const double> series, double alpha) {
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    out[i] = i == 0 ? series[0] : alpha * series[i] + (1.0 - alpha) * out[i - 1];
  }
  return out;
}

// ===== serialization =====

std::string serialize_step_metrics(const StepMetrics& m) {
  json j = {{"step", m.step},
            {"lr", m.lr},
            {"mean_reward", m.mean_reward},
            {"format_rate", m.format_rate},
            {"group_reward_std", m.group_reward_std},
            {"zero_variance_groups", m.zero_variance_groups},
            {"num_groups", m.num_groups},
            {"zero_variance_ratio", m.zero_variance_ratio},
            {"loss", m.loss},
            {"reward_loss", m.reward_loss},
            {"kl_loss", m.kl_loss},
            {"grad_norm", m.grad_norm},
            {"reward_grad_norm", m.reward_grad_norm},
            {"mean_kl", m.mean_kl},
            {"mean_entropy", m.mean_entropy},
            {"mean_response_length", m.mean_response_length},
            {"adv_final_mean_abs", m.adv_final_mean_abs},
            {"adv_outcome_mean_abs", m.adv_outcome_mean_abs},
            {"adv_progress_mean_abs", m.adv_progress_mean_abs}};
  if (m.has_eval) {
    j["eval_accuracy"] = m.eval_accuracy;
    j["eval_format_rate"] = m.eval_format_rate;
  }
  return j.dump();
}

StepMetrics parse_step_metrics(const std::string& json_line) {
  json j;
  try {
    j = json::parse(json_line);
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid metrics record: ") + e.what());
  }
  StepMetrics m;
  try {
    m.step = j.at("step").get<int>();
    m.lr = j.at("lr").get<double>();
    m.mean_reward = j.at("mean_reward").get<double>();
    m.format_rate = j.at("format_rate").get<double>();
    m.group_reward_std = j.at("group_reward_std").get<std::vector<double>>();
    m.zero_variance_groups = j.at("zero_variance_groups").get<int>();
    m.num_groups = j.at("num_groups").get<int>();
    m.zero_variance_ratio = j.at("zero_variance_ratio").get<double>();
    m.loss = j.at("loss").get<double>();
    m.reward_loss = j.at("reward_loss").get<double>();
    m.kl_loss = j.at("kl_loss").get<double>();
    m.grad_norm = j.at("grad_norm").get<double>();
    m.reward_grad_norm = j.at("reward_grad_norm").get<double>();
    m.mean_kl = j.at("mean_kl").get<double>();
    m.mean_entropy = j.at("mean_entropy").get<double>();
    m.mean_response_length = j.at("mean_response_length").get<double>();
    m.adv_final_mean_abs = j.at("adv_final_mean_abs").get<double>();
    m.adv_outcome_mean_abs = j.at("adv_outcome_mean_abs").get<double>();
    m.adv_progress_mean_abs = j.at("adv_progress_mean_abs").get<double>();
    if (j.contains("eval_accuracy")) {
      m.has_eval = true;
      m.eval_accuracy = j.at("eval_accuracy").get<double>();
      m.eval_format_rate = j.at("eval_format_rate").get<double>();
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad metrics record: ") + e.what());
  }
  return m;
}

std::string serialize_run_config(const RunConfig& c) {
  json j = {{"schema_version", 1},
            {"algorithm", c.algorithm},
            {"seed", c.seed},
            {"steps", c.steps},
            {"group_size", c.group_size},
            {"batch_prompts", c.batch_prompts},
            {"learning_rate", c.learning_rate},
            {"warmup_ratio", c.warmup_ratio},
            {"optimizer", c.optimizer},
            {"weight_decay", c.weight_decay},
            {"ref_refresh_interval", c.ref_refresh_interval},
            {"eval_interval", c.eval_interval},
            {"eval_instances", c.eval_instances},
            {"checkpoint_interval", c.checkpoint_interval},
            {"policy",
             {{"vocab_size", c.policy.vocab_size},
              {"context_order", c.policy.context_order}}},
            {"sampling",
             {{"temperature", c.sampling.temperature},
              {"top_p", c.sampling.top_p},
              {"max_len", c.sampling.max_len}}},
            {"task", task_to_json(c.task)},
            {"advantage",
             {{"gamma", c.advantage.gamma},
              {"lambda", c.advantage.lambda},
              {"eta", c.advantage.eta},
              {"num_buckets", c.advantage.num_buckets},
              {"reward_threshold", c.advantage.reward_threshold},
              {"delta", c.advantage.delta},
              {"eps_stab", c.advantage.eps_stab}}},
            {"loss", {{"clip_eps", c.loss.clip_eps}, {"kl_beta", c.loss.kl_beta}}}};
  return j.dump(2);
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid config JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("config must be a JSON object");
  check_keys(j,
             {"schema_version", "algorithm", "seed", "steps", "group_size",
              "batch_prompts", "learning_rate", "warmup_ratio", "optimizer",
              "weight_decay", "ref_refresh_interval", "eval_interval",
              "eval_instances", "checkpoint_interval", "policy", "sampling", "task",
              "advantage", "loss"},
             "run config");
  if (!j.contains("schema_version")) {
    throw ParseError("config must declare schema_version");
  }
  if (j.at("schema_version").get<int>() != 1) {
    throw ParseError("unsupported config schema_version");
  }
  RunConfig c;
  try {
    if (j.contains("algorithm")) c.algorithm = j.at("algorithm").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("steps")) c.steps = j.at("steps").get<int>();
    if (j.contains("group_size")) c.group_size = j.at("group_size").get<int>();
    if (j.contains("batch_prompts")) c.batch_prompts = j.at("batch_prompts").get<int>();
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("warmup_ratio")) c.warmup_ratio = j.at("warmup_ratio").get<double>();
    if (j.contains("optimizer")) c.optimizer = j.at("optimizer").get<std::string>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("ref_refresh_interval")) {
      c.ref_refresh_interval = j.at("ref_refresh_interval").get<int>();
    }
    if (j.contains("eval_interval")) c.eval_interval = j.at("eval_interval").get<int>();
    if (j.contains("eval_instances")) {
      c.eval_instances = j.at("eval_instances").get<int>();
    }
    if (j.contains("checkpoint_interval")) {
      c.checkpoint_interval = j.at("checkpoint_interval").get<int>();
    }
    if (j.contains("policy")) {
      const json& p = j.at("policy");
      check_keys(p, {"vocab_size", "context_order"}, "policy config");
      if (p.contains("vocab_size")) c.policy.vocab_size = p.at("vocab_size").get<int>();
      if (p.contains("context_order")) {
        c.policy.context_order = p.at("context_order").get<int>();
      }
    }
    if (j.contains("sampling")) {
      const json& s = j.at("sampling");
      check_keys(s, {"temperature", "top_p", "max_len"}, "sampling config");
      if (s.contains("temperature")) {
        c.sampling.temperature = s.at("temperature").get<double>();
      }
      if (s.contains("top_p")) c.sampling.top_p = s.at("top_p").get<double>();
      if (s.contains("max_len")) c.sampling.max_len = s.at("max_len").get<int>();
    }
    if (j.contains("task")) c.task = task_from_json(j.at("task"));
    if (j.contains("advantage")) {
      const json& a = j.at("advantage");
      check_keys(a,
                 {"gamma", "lambda", "eta", "num_buckets", "reward_threshold", "delta",
                  "eps_stab"},
                 "advantage config");
      if (a.contains("gamma")) c.advantage.gamma = a.at("gamma").get<double>();
      if (a.contains("lambda")) c.advantage.lambda = a.at("lambda").get<double>();
      if (a.contains("eta")) c.advantage.eta = a.at("eta").get<double>();
      if (a.contains("num_buckets")) {
        c.advantage.num_buckets = a.at("num_buckets").get<int>();
      }
      if (a.contains("reward_threshold")) {
        c.advantage.reward_threshold = a.at("reward_threshold").get<double>();
      }
      if (a.contains("delta")) c.advantage.delta = a.at("delta").get<double>();
      if (a.contains("eps_stab")) c.advantage.eps_stab = a.at("eps_stab").get<double>();
    }
    if (j.contains("loss")) {
      const json& l = j.at("loss");
      check_keys(l, {"clip_eps", "kl_beta"}, "loss config");
      if (l.contains("clip_eps")) c.loss.clip_eps = l.at("clip_eps").get<double>();
      if (l.contains("kl_beta")) c.loss.kl_beta = l.at("kl_beta").get<double>();
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad config value: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string serialize_run_summary(const RunSummary& s) {
  json j = {{"steps", s.steps},
            {"final_smoothed_reward", s.final_smoothed_reward},
            {"baseline_smoothed_reward", s.baseline_smoothed_reward},
            {"pooled_zero_variance_ratio", s.pooled_zero_variance_ratio}};
  if (s.has_eval) {
    j["final_eval_accuracy"] = s.final_eval_accuracy;
    j["final_eval_format_rate"] = s.final_eval_format_rate;
  }
  return j.dump(2);
}

}  // namespace epgrpo
