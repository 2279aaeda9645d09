#pragma once

/**
 * Advantage engine.
 *
 * Pure functions turning a RolloutGroup into its per-token advantage
 * decomposition: group-normalized outcome advantages, a sigmoid gate on
 * standardized token entropy, an implicit per-token progress signal anchored
 * by the response-level outcome direction, and a bucket z-score over
 * cumulative-entropy progress. No I/O, no hidden state, no mutation.
 *
 * Numeric conventions (shared with the verification oracle in tests/):
 *   - all statistics use the population convention (divide by N)
 *   - a statistic is treated as zero-spread iff all its inputs are equal
 *   - the gate argument is clamped to +-36 so the gate stays strictly
 *     inside (0, 1) in double precision
 */

#include <span>
#include <vector>

#include "epgrpo/rollout.hpp"

namespace epgrpo {

// Which shaping mechanisms participate in the final advantage. All three on
// is the full method; all three off reduces exactly to the group-normalized
// outcome baseline.
struct AblationFlags {
  bool entropy_gate = true;               // multiply outcome advantages by the gate
  bool implicit_progress = true;          // add the bucket-normalized progress term
  bool zero_variance_degradation = true;  // anchor on reward threshold when rewards tie

  static AblationFlags all_on() { return {true, true, true}; }
  static AblationFlags all_off() { return {false, false, false}; }
};

// ===== scalar building blocks =====

// Shannon entropy -sum(p ln p) of a distribution (0 ln 0 := 0).
// Entries must be non-negative and sum to 1 within 1e-9.
double token_entropy(std::span<const double> dist);

// Group-normalized outcome advantages (r - mean) / (std + delta) with
// population std. All-equal rewards yield exactly zero for every element.
std::vector<double> grpo_advantage(std::span<const double> rewards, double delta);

struct EntropyStats {
  double mean = 0.0;
  double stddev = 0.0;
};

// Mean and population std of token entropies pooled across every response.
EntropyStats group_entropy_stats(const RolloutGroup& group);

// Sigmoid gate of standardized entropy: logistic(gamma * (h - mean) / (std + eps)).
// The standardized argument is clamped to +-36, keeping the result in (0, 1).
double entropy_gate(double entropy, double entropy_mean, double entropy_std,
                    double gamma, double eps_stab);

// Token-level outcome advantage: gate weight times the response advantage.
inline double gated_outcome_advantage(double gate_weight, double response_advantage) {
  return gate_weight * response_advantage;
}

// Per-token implicit progress signal s = lambda * (logp_cur - logp_ref).
inline double implicit_signal(double logp_cur, double logp_ref, double lambda) {
  return lambda * (logp_cur - logp_ref);
}

// Per-response anchor directions in {-1, 0, +1}. With reward spread the
// anchor is sign(advantage), falling back to sign(reward - threshold) when an
// advantage is exactly zero. With zero spread: sign(reward - threshold) when
// degrade_on_zero_variance, otherwise 0 (progress term mutes).
std::vector<int> anchor_sign(std::span<const double> rewards,
                             std::span<const double> advantages,
                             double reward_threshold,
                             bool degrade_on_zero_variance = true);

// Normalized cumulative entropy tau_t = sum_{k<=t} H_k / sum_k H_k, one value
// per token, non-decreasing, ending at exactly 1. A zero entropy total falls
// back to positional progress (t+1)/T.
std::vector<double> cumulative_progress(std::span<const double> entropies);

// Equal-width progress bucket: min(floor(tau * num_buckets), num_buckets - 1).
int bucket_index(double tau, int num_buckets);

// Per-bucket population statistics over pooled values. A bucket is
// degenerate when it has fewer than two members or zero spread.
struct BucketStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<bool> degenerate;
};

BucketStats bucket_stats(std::span<const double> values,
                         std::span<const int> buckets, int num_buckets);

// Z-score of each value within its bucket, pooled over the whole input.
// Degenerate buckets yield exactly 0.
std::vector<double> bucket_normalize(std::span<const double> values,
                                     std::span<const int> buckets,
                                     int num_buckets, double eps_stab);

// ===== full pipeline =====

// Complete per-group decomposition. `flags` selects the participating
// mechanisms; the two-argument overload runs the full method.
GroupAdvantages compute_group_advantages(const RolloutGroup& group,
                                         const AdvantageConfig& config,
                                         const AblationFlags& flags);
GroupAdvantages compute_group_advantages(const RolloutGroup& group,
                                         const AdvantageConfig& config);

}  // namespace epgrpo
