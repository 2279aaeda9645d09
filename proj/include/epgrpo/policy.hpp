#pragma once

/**
 * Toy autoregressive policy.
 *
 * Linear-softmax language model over one-hot features of the last
 * `context_order` tokens: logit(v | ctx) = sum_p W[p][ctx[p]][v]. Small
 * enough for exact finite-difference checks, rich enough to train with
 * policy gradients on the synthetic tasks.
 *
 * Token conventions: 0 is begin/padding, 1 is the terminator, symbols start
 * at 2. Sampling applies temperature then nucleus truncation, records the
 * log-prob and entropy of the truncated renormalized distribution (the
 * distribution actually drawn from), and stops at the terminator or max_len.
 * Temperature 0 is the greedy argmax limit. Reference annotation records raw
 * log-softmax probabilities of the frozen snapshot.
 *
 * All randomness flows through explicit seeds; identical seeds give
 * bit-identical samples on every platform.
 */

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "epgrpo/objective.hpp"
#include "epgrpo/rollout.hpp"

namespace epgrpo {

// ===== parameters =====

struct PolicyConfig {
  int vocab_size = 16;
  int context_order = 2;

  void validate() const;  // vocab_size >= 3, context_order >= 1
  std::size_t param_count() const {
    return static_cast<std::size_t>(context_order) * vocab_size * vocab_size;
  }
};

enum class OptimizerKind { Sgd, AdamW };

struct OptimizerState {
  std::int64_t step = 0;
  std::vector<double> m;  // first moment (AdamW)
  std::vector<double> v;  // second moment (AdamW)
};

struct PolicyParams {
  PolicyConfig config;
  std::vector<double> weights;  // [context_order][vocab][vocab], row-major
  OptimizerState opt;

  static PolicyParams zeros(const PolicyConfig& config);
  static PolicyParams random_init(const PolicyConfig& config, std::uint64_t seed,
                                  double scale);

  std::size_t weight_index(int position, int context_token, int out_token) const;
};

// Frozen copy of the weights used for reference log-probs and KL anchoring.
struct ReferenceSnapshot {
  PolicyConfig config;
  std::vector<double> weights;
};

ReferenceSnapshot freeze_reference(const PolicyParams& params);

// ===== distributions =====

struct SamplingConfig {
  double temperature = 1.0;  // >= 0; 0 selects the argmax
  double top_p = 0.95;       // in (0, 1]
  int max_len = 8;           // >= 1

  void validate() const;
};

// Raw logits for the next token given a padded context window of exactly
// `context_order` tokens.
std::vector<double> policy_logits(const PolicyConfig& config,
                                  std::span<const double> weights,
                                  std::span<const int> context);

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

// Temperature + nucleus-truncated distribution over the full vocabulary
// (zeros off the kept set). Temperature 0 returns a point mass on the argmax
// (lowest index wins ties). Nucleus selection orders by probability
// descending with index-ascending tie-breaks and keeps the smallest prefix
// whose mass reaches top_p.
std::vector<double> adjusted_distribution(std::span<const double> logits,
                                          double temperature, double top_p);

// Left-padded window of the last `order` tokens of prompt + generated.
std::vector<int> context_window(std::span<const int> prompt,
                                std::span<const int> generated, int order);

// ===== rollout =====

// Sample one response. Records logp_cur and entropy of the adjusted sampling
// distribution per token; reward is left 0 and logp_ref unfilled until
// annotate_reference. The terminator, when drawn, is recorded as the final
// token.
ResponseRecord sample_response(const PolicyParams& params,
                               std::span<const int> prompt,
                               const SamplingConfig& sampling,
                               std::uint64_t seed);

// Fill logp_ref with the snapshot's raw log-softmax probability of each
// realized token given its context.
void annotate_reference(ResponseRecord& response, const ReferenceSnapshot& ref,
                        std::span<const int> prompt);

// ===== loss and gradient =====

// Loss of one group under the current parameters, plus (optionally) the
// exact analytic gradient accumulated into two buffers of param_count()
// doubles: the clipped-surrogate part and the KL-penalty part (already
// scaled by kl_beta); the total gradient is their sum. Current per-token
// log-probs are recomputed under `sampling`'s temperature/top-p adjustment,
// so at the sampling parameters every ratio is exactly 1. Loss equals
// assemble_loss of those ratios exactly.
LossResult accumulate_gradient(const PolicyParams& params,
                               std::span<const int> prompt,
                               const RolloutGroup& group,
                               const GroupAdvantages& adv,
                               const LossConfig& loss_config,
                               const SamplingConfig& sampling,
                               std::vector<double>* grad_reward,
                               std::vector<double>* grad_kl);

// One optimizer step over the full weight vector. SGD: plain step. AdamW:
// bias-corrected moments plus decoupled weight decay.
struct UpdateConfig {
  OptimizerKind kind = OptimizerKind::AdamW;
  double learning_rate = 0.01;
  double weight_decay = 0.001;  // AdamW only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

void apply_update(PolicyParams& params, std::span<const double> gradient,
                  const UpdateConfig& update);

// ===== checkpoints =====

// Versioned JSON checkpoint (weights + optimizer state). Round-trips exactly.
std::string serialize_policy(const PolicyParams& params);
PolicyParams parse_policy(const std::string& text);
void save_policy(const PolicyParams& params, const std::string& path);
PolicyParams load_policy(const std::string& path);

}  // namespace epgrpo
