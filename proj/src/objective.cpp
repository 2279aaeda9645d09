#include "epgrpo/objective.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "epgrpo/advantage.hpp"
#include "epgrpo/policy.hpp"
#include "epgrpo/seeding.hpp"
#include "epgrpo/tasks.hpp"

namespace epgrpo {
namespace {

constexpr double kLogRatioClamp = 30.0;
constexpr double kComponentFloor = 1e-8;  // below this, gradient components are noise

double l2_norm(std::span<const double> xs) {
  double acc = 0.0;
  for (double x : xs) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace

void LossConfig::validate() const {
  if (!std::isfinite(clip_eps) || clip_eps <= 0.0) {
    throw ConfigError("clip_eps must be > 0");
  }
  if (!std::isfinite(kl_beta) || kl_beta < 0.0) {
    throw ConfigError("kl_beta must be >= 0");
  }
}

double kl_estimate(double logp_cur, double logp_ref) {
  double d = logp_ref - logp_cur;
  if (d > kLogRatioClamp) d = kLogRatioClamp;
  if (d < -kLogRatioClamp) d = -kLogRatioClamp;
  return std::exp(d) - d - 1.0;
}

double clipped_term(double ratio, double advantage, double clip_eps) {
  double clipped_ratio = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
  return std::min(ratio * advantage, clipped_ratio * advantage);
}

LossResult assemble_loss(const RolloutGroup& group, const GroupAdvantages& adv,
                         const std::vector<std::vector<double>>& ratios,
                         const LossConfig& config) {
  config.validate();
  const std::size_t G = group.responses.size();
  if (adv.responses.size() != G || ratios.size() != G) {
    throw InvariantError("loss inputs must cover the same responses");
  }
  LossResult result;
  result.token_terms.resize(G);
  double sum_terms = 0.0;
  double sum_sur = 0.0;
  double sum_kl = 0.0;
  std::size_t n_tokens = 0;
  for (std::size_t i = 0; i < G; ++i) {
    const std::vector<TokenRecord>& tokens = group.responses[i].tokens;
    if (adv.responses[i].size() != tokens.size() || ratios[i].size() != tokens.size()) {
      throw InvariantError("loss inputs must cover the same tokens");
    }
    result.token_terms[i].resize(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      double ratio = ratios[i][t];
      if (!(std::isfinite(ratio) && ratio > 0.0)) {
        throw InvariantError("importance ratios must be finite and positive");
      }
      double sur = clipped_term(ratio, adv.responses[i][t].final_adv, config.clip_eps);
      double cur_logp = tokens[t].logp_cur + std::log(ratio);
      double kl = kl_estimate(cur_logp, tokens[t].logp_ref);
      double term = sur - config.kl_beta * kl;
      result.token_terms[i][t] = term;
      sum_terms += term;
      sum_sur += sur;
      sum_kl += kl;
      ++n_tokens;
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n_tokens);
  result.loss = -sum_terms * inv_n;
  result.reward_loss = -sum_sur * inv_n;
  result.kl_loss = config.kl_beta * sum_kl * inv_n;
  return result;
}

double regularizer_F(const RolloutGroup& group,
                     const std::vector<std::vector<double>>& weights,
                     double beta) {
  if (weights.size() != group.responses.size()) {
    throw InvariantError("regularizer weights must cover the same responses");
  }
  double acc = 0.0;
  std::size_t n_tokens = 0;
  for (std::size_t i = 0; i < group.responses.size(); ++i) {
    const std::vector<TokenRecord>& tokens = group.responses[i].tokens;
    if (weights[i].size() != tokens.size()) {
      throw InvariantError("regularizer weights must cover the same tokens");
    }
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      double diff = tokens[t].logp_cur - tokens[t].logp_ref;
      acc += weights[i][t] * diff * diff;
      ++n_tokens;
    }
  }
  return 0.5 * beta * acc / static_cast<double>(n_tokens);
}

// ===== gradient-equivalence check =====

TheoremCheckReport verify_theorem1(const PolicyParams& policy,
                                   std::span<const int> prompt,
                                   const RolloutGroup& group,
                                   const AdvantageConfig& config,
                                   double fd_step, double beta) {
  group.validate();
  config.validate();
  if (policy.config.param_count() > 500) {
    throw ConfigError("gradient check policies must stay at or below 500 parameters");
  }
  if (!(fd_step > 0.0)) throw ConfigError("fd_step must be > 0");
  const std::size_t G = group.responses.size();

  std::vector<double> rewards(G);
  for (std::size_t i = 0; i < G; ++i) rewards[i] = group.responses[i].reward;
  bool spread = false;
  for (std::size_t i = 1; i < G; ++i) spread = spread || rewards[i] != rewards[0];
  if (!spread) {
    throw InvariantError("gradient check requires reward spread within the group");
  }

  // Freeze the sampling-time pipeline: anchors, buckets, per-bucket spread.
  GroupAdvantages adv = compute_group_advantages(group, config);
  std::vector<double> pooled_anchored;
  std::vector<int> pooled_buckets;
  for (const auto& resp : adv.responses) {
    for (const TokenAdvantage& tok : resp) {
      pooled_anchored.push_back(tok.anchored_signal);
      pooled_buckets.push_back(tok.bucket);
    }
  }
  BucketStats stats =
      bucket_stats(pooled_anchored, pooled_buckets, config.num_buckets);

  // Per-token weight: eta * anchor * lambda / (sigma_k + eps). Tokens in
  // degenerate buckets contribute a constant (zero) progress advantage, so
  // their weight is zero.
  TheoremCheckReport report;
  report.lambda_weights.resize(G);
  bool any_live = false;
  for (std::size_t i = 0; i < G; ++i) {
    report.lambda_weights[i].resize(adv.responses[i].size(), 0.0);
    for (std::size_t t = 0; t < adv.responses[i].size(); ++t) {
      int k = adv.responses[i][t].bucket;
      if (stats.degenerate[k]) continue;
      double w = config.eta * static_cast<double>(adv.anchor[i]) * config.lambda /
                 (stats.stddev[k] + config.eps_stab);
      report.lambda_weights[i][t] = w;
      any_live = any_live || w != 0.0;
    }
  }
  report.all_buckets_degenerate = !any_live;

  const std::size_t n_params = policy.config.param_count();
  const std::size_t n_tokens = group.total_tokens();
  const double inv_n = 1.0 / static_cast<double>(n_tokens);

  // Analytic progress-term policy gradient at the sampling parameters:
  // (beta/N) * sum inside lambda * (logpi(tok) - logp_ref) * dlogpi/dtheta,
  // with logpi the raw log-softmax map.
  std::vector<double> analytic(n_params, 0.0);
  for (std::size_t i = 0; i < G; ++i) {
    const std::vector<TokenRecord>& tokens = group.responses[i].tokens;
    std::vector<int> generated;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      std::vector<int> ctx =
          context_window(prompt, generated, policy.config.context_order);
      generated.push_back(tokens[t].token_id);
      double w = report.lambda_weights[i][t];
      if (w == 0.0) continue;
      std::vector<double> logits =
          policy_logits(policy.config, policy.weights, ctx);
      std::vector<double> lsf = log_softmax(logits);
      std::vector<double> probs = softmax(logits);
      double coef = beta * inv_n * w * (lsf[tokens[t].token_id] - tokens[t].logp_ref);
      for (int v = 0; v < policy.config.vocab_size; ++v) {
        double score = (v == tokens[t].token_id ? 1.0 : 0.0) - probs[v];
        for (int p = 0; p < policy.config.context_order; ++p) {
          analytic[policy.weight_index(p, ctx[p], v)] += coef * score;
        }
      }
    }
  }

  // Central finite differences of regularizer_F over a scratch group whose
  // logp_cur fields are recomputed from perturbed weights.
  RolloutGroup scratch = group;
  auto potential_at = [&](const std::vector<double>& weights) {
    for (std::size_t i = 0; i < G; ++i) {
      std::vector<int> generated;
      for (std::size_t t = 0; t < scratch.responses[i].tokens.size(); ++t) {
        TokenRecord& tok = scratch.responses[i].tokens[t];
        std::vector<int> ctx =
            context_window(prompt, generated, policy.config.context_order);
        std::vector<double> logits = policy_logits(policy.config, weights, ctx);
        std::vector<double> lsf = log_softmax(logits);
        tok.logp_cur = lsf[tok.token_id];
        generated.push_back(tok.token_id);
      }
    }
    return regularizer_F(scratch, report.lambda_weights, beta);
  };

  std::vector<double> fd(n_params, 0.0);
  std::vector<double> perturbed = policy.weights;
  for (std::size_t j = 0; j < n_params; ++j) {
    double original = perturbed[j];
    perturbed[j] = original + fd_step;
    double plus = potential_at(perturbed);
    perturbed[j] = original - fd_step;
    double minus = potential_at(perturbed);
    perturbed[j] = original;
    fd[j] = (plus - minus) / (2.0 * fd_step);
  }

  report.analytic_grad_norm = l2_norm(analytic);
  report.finite_diff_grad_norm = l2_norm(fd);
  for (std::size_t j = 0; j < n_params; ++j) {
    double scale = std::max(std::abs(analytic[j]), std::abs(fd[j]));
    if (scale <= kComponentFloor) continue;
    double rel = std::abs(analytic[j] - fd[j]) / scale;
    report.max_relative_error = std::max(report.max_relative_error, rel);
    ++report.compared_components;
  }
  return report;
}

TheoremCheckReport run_theorem_check(const TheoremHarnessConfig& config) {
  config.advantage.validate();
  PolicyConfig pc{config.vocab_size, config.context_order};
  PolicyParams policy = PolicyParams::random_init(
      pc, derive_seed(config.seed, {1}), config.weight_scale);
  PolicyParams ref_policy = PolicyParams::random_init(
      pc, derive_seed(config.seed, {2}), config.weight_scale);
  ReferenceSnapshot ref = freeze_reference(ref_policy);

  TaskConfig task;
  task.kind = TaskKind::Copy;
  task.len_min = 1;
  task.len_max = 1;
  task.vocab_size = config.vocab_size;

  // Raw log-softmax recording so the stored log-probs live on the same map
  // the check differentiates.
  SamplingConfig sampling;
  sampling.temperature = 1.0;
  sampling.top_p = 1.0;
  sampling.max_len = config.max_len;

  for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
    TaskInstance instance =
        generate_instance(task, derive_seed(config.seed, {3, static_cast<std::uint64_t>(attempt)}));
    RolloutGroup group;
    group.prompt_id = "theorem-check";
    bool spread = false;
    for (int i = 0; i < config.group_size; ++i) {
      ResponseRecord resp = sample_response(
          policy, instance.prompt, sampling,
          derive_seed(config.seed, {4, static_cast<std::uint64_t>(attempt),
                                    static_cast<std::uint64_t>(i)}));
      annotate_reference(resp, ref, instance.prompt);
      std::vector<int> ids;
      for (const TokenRecord& t : resp.tokens) ids.push_back(t.token_id);
      resp.reward = verify(instance, ids).reward;
      if (!group.responses.empty() && resp.reward != group.responses[0].reward) {
        spread = true;
      }
      group.responses.push_back(std::move(resp));
    }
    if (!spread) continue;
    return verify_theorem1(policy, instance.prompt, group, config.advantage,
                           config.fd_step, config.beta);
  }
  throw InvariantError("no group with reward spread found within the attempt budget");
}

}  // namespace epgrpo
