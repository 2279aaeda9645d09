#pragma once

/**
 * Surrogate objective.
 *
 * Clipped importance-ratio loss with a k3 KL penalty against the frozen
 * reference, assembled over a rollout group with token-count normalization,
 * plus the quadratic log-ratio potential used to cross-check that the
 * progress term of the shaped gradient is conservative: the analytic
 * policy-gradient form of the progress term must match finite differences of
 * the potential when the per-token weights are frozen at sampling time.
 */

#include <cstdint>
#include <span>
#include <vector>

#include "epgrpo/rollout.hpp"

namespace epgrpo {

struct PolicyParams;  // policy.hpp

struct LossConfig {
  double clip_eps = 0.2;   // ratio clip half-width, > 0
  double kl_beta = 0.001;  // KL penalty coefficient, >= 0

  void validate() const;  // throws ConfigError
};

// ===== pointwise terms =====

// k3 estimator rho - ln(rho) - 1 with rho = exp(logp_ref - logp_cur).
// The log-ratio is clamped to +-30 before exponentiation. Non-negative,
// exactly 0 when the log-probs coincide.
double kl_estimate(double logp_cur, double logp_ref);

// PPO-style pessimistic surrogate: min(ratio * adv, clip(ratio) * adv).
double clipped_term(double ratio, double advantage, double clip_eps);

// ===== group loss =====

struct LossResult {
  double loss = 0.0;         // -(1/total_tokens) * sum(token_terms)
  double reward_loss = 0.0;  // contribution of the clipped surrogate alone
  double kl_loss = 0.0;      // contribution of the KL penalty alone
  std::vector<std::vector<double>> token_terms;  // clipped - beta * kl, per token
};

// Assemble the group loss from final advantages and current/old importance
// ratios (ratios carry the whole dependence on the current policy: the
// current log-prob of a token is its stored logp_cur + ln(ratio)).
// `ratios` must match the group's token shape exactly.
LossResult assemble_loss(const RolloutGroup& group, const GroupAdvantages& adv,
                         const std::vector<std::vector<double>>& ratios,
                         const LossConfig& config);

// Quadratic potential (beta/2) * mean_{i,t}[ weight * (logp_cur - logp_ref)^2 ]
// over the group's stored log-probs. `weights` must match the token shape.
double regularizer_F(const RolloutGroup& group,
                     const std::vector<std::vector<double>>& weights,
                     double beta);

// ===== gradient-equivalence check =====

struct TheoremCheckReport {
  double analytic_grad_norm = 0.0;
  double finite_diff_grad_norm = 0.0;
  double max_relative_error = 0.0;  // over components with magnitude > 1e-8
  int compared_components = 0;
  bool all_buckets_degenerate = false;  // every per-token weight was zero
  std::vector<std::vector<double>> lambda_weights;  // frozen per-token weights
};

// Verify that the analytic progress-term policy gradient equals the central
// finite-difference gradient of regularizer_F with the per-token weights
// frozen from the sampling-time advantage pipeline.
//
// `group` must have been sampled from `policy` over `prompt` with raw
// log-softmax recording (temperature 1, no nucleus truncation) and must have
// reward spread; zero-variance groups are rejected with InvariantError.
// Tokens in degenerate buckets carry weight zero (their progress advantage is
// constant in the parameters); a group where every weight is zero is flagged
// in the report rather than failed.
TheoremCheckReport verify_theorem1(const PolicyParams& policy,
                                   std::span<const int> prompt,
                                   const RolloutGroup& group,
                                   const AdvantageConfig& config,
                                   double fd_step = 1e-6,
                                   double beta = 0.001);

// Self-contained harness: builds a small random policy and an independent
// random reference, samples groups until one has reward spread, and runs
// verify_theorem1 on it.
struct TheoremHarnessConfig {
  std::uint64_t seed = 0;
  int vocab_size = 8;      // param count = context_order * vocab^2, keep <= 500
  int context_order = 2;
  int group_size = 6;
  int max_len = 6;
  double weight_scale = 0.7;  // std of the random policy/reference weights
  double fd_step = 1e-6;
  double beta = 0.001;
  int max_attempts = 500;  // resample budget for finding reward spread
  AdvantageConfig advantage;
};

TheoremCheckReport run_theorem_check(const TheoremHarnessConfig& config);

}  // namespace epgrpo
