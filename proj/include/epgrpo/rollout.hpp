#pragma once

/**
 * Rollout data model.
 *
 * Value types shared by the whole pipeline: per-token sampling records,
 * per-prompt response groups, the advantage-shaping configuration, and the
 * per-token advantage decomposition computed from a group. JSONL
 * parse/serialize routines for the two on-disk record shapes live here too.
 *
 * Invariants (checked by validate(), enforced on every parse):
 *   - log-probabilities are finite and <= 0
 *   - entropies are finite and >= 0 (<= ln(vocab) cannot be checked here;
 *     the record does not carry the vocabulary size)
 *   - every response has at least one token
 *   - every group has at least two responses
 *   - rewards are finite scalars
 *
 * All types are plain immutable-by-convention values: construct, validate,
 * never mutate. Sharing const references across threads is safe.
 */

#include <string>
#include <vector>

#include "epgrpo/errors.hpp"

namespace epgrpo {

// Shared token alphabet: 0 pads/begins, 1 terminates, symbols start at 2.
inline constexpr int kPadToken = 0;
inline constexpr int kTerminatorToken = 1;
inline constexpr int kFirstSymbolToken = 2;

// ===== sampled rollout records =====

struct TokenRecord {
  int token_id = 0;
  double logp_cur = 0.0;  // log-prob under the sampling distribution actually drawn from
  double logp_ref = 0.0;  // log-prob of the same token under the frozen reference
  double entropy = 0.0;   // entropy of the sampling distribution at this step

  void validate() const;
};

struct ResponseRecord {
  std::vector<TokenRecord> tokens;  // non-empty
  double reward = 0.0;              // scalar verifier output

  void validate() const;
};

struct RolloutGroup {
  std::string prompt_id;
  std::vector<ResponseRecord> responses;  // size >= 2

  void validate() const;
  std::size_t total_tokens() const;
};

// ===== advantage-shaping configuration =====

struct AdvantageConfig {
  double gamma = 5.0;             // gate steepness, > 0
  double lambda = 0.1;            // implicit-signal scale, > 0
  double eta = 0.2;               // progress-advantage scale, >= 0
  int num_buckets = 10;           // progress buckets, >= 1
  double reward_threshold = 0.5;  // anchor fallback threshold on raw reward
  double delta = 1e-4;            // reward-std stabilizer, > 0
  double eps_stab = 1e-8;         // denominator stabilizer for gate/bucket stats, > 0

  void validate() const;  // throws ConfigError on any out-of-range field
};

// ===== advantage decomposition =====

struct TokenAdvantage {
  double gate_weight = 0.0;        // sigmoid entropy gate W, in (0, 1)
  double implicit_signal = 0.0;    // s = lambda * (logp_cur - logp_ref)
  double anchored_signal = 0.0;    // s~ = anchor * s
  double progress = 0.0;           // cumulative-entropy progress tau, in [0, 1]
  int bucket = 0;                  // progress bucket index, in [0, num_buckets)
  double normalized_signal = 0.0;  // bucket z-score of s~
  double outcome_adv = 0.0;
  double progress_adv = 0.0;
  double final_adv = 0.0;          // == outcome_adv + progress_adv exactly

  void validate() const;
};

struct GroupAdvantages {
  std::string prompt_id;
  std::vector<std::vector<TokenAdvantage>> responses;
  double entropy_mean = 0.0;  // pooled over every token in the group
  double entropy_std = 0.0;   // population std of the pooled entropies
  double reward_mean = 0.0;
  double reward_std = 0.0;    // population std; exactly 0 iff all rewards equal
  std::vector<double> outcome_advantage;  // per-response group-normalized advantage
  std::vector<int> anchor;                // per-response direction in {-1, 0, +1}
  bool zero_variance = false;             // true iff reward_std == 0

  void validate() const;
};

// ===== JSONL codec =====
//
// Rollout line:
//   {"prompt_id": str, "responses": [{"reward": float,
//     "tokens": [{"id": int, "logp_cur": float, "logp_ref": float, "entropy": float}]}]}
// Advantage line mirrors it, replacing the sampled fields with the
// decomposition fields of TokenAdvantage plus the group-level statistics.
// serialize/parse round-trip losslessly for every valid value; parsers throw
// ParseError on malformed input and InvariantError on contract violations.

RolloutGroup parse_rollout_group(const std::string& json_line);
std::string serialize_rollout_group(const RolloutGroup& group);

GroupAdvantages parse_group_advantages(const std::string& json_line);
std::string serialize_group_advantages(const GroupAdvantages& adv);

}  // namespace epgrpo
