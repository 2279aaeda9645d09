#include "epgrpo/advantage.hpp"

#include <cmath>
#include <cstddef>

namespace epgrpo {
namespace {

constexpr double kGateArgClamp = 36.0;  // logistic(+-36) is strictly inside (0, 1)

bool all_equal(std::span<const double> xs) {
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i] != xs[0]) return false;
  }
  return true;
}

double sign_of(double x) {
  if (x > 0.0) return 1.0;
  if (x < 0.0) return -1.0;
  return 0.0;
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // population convention; exactly 0 iff all inputs equal
};

MeanStd population_stats(std::span<const double> xs) {
  MeanStd out;
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / static_cast<double>(xs.size());
  if (all_equal(xs)) {
    out.stddev = 0.0;
    return out;
  }
  double acc = 0.0;
  for (double x : xs) {
    double d = x - out.mean;
    acc += d * d;
  }
  out.stddev = std::sqrt(acc / static_cast<double>(xs.size()));
  return out;
}

}  // namespace

double token_entropy(std::span<const double> dist) {
  if (dist.empty()) throw InvariantError("entropy of an empty distribution");
  double sum = 0.0;
  double h = 0.0;
  for (double p : dist) {
    if (!std::isfinite(p) || p < 0.0) {
      throw InvariantError("distribution entries must be finite and non-negative");
    }
    sum += p;
    if (p > 0.0) h -= p * std::log(p);
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw InvariantError("distribution must sum to 1 within 1e-9");
  }
  return h;
}

std::vector<double> grpo_advantage(std::span<const double> rewards, double delta) {
  if (rewards.empty()) throw InvariantError("advantages of an empty reward list");
  if (all_equal(rewards)) {
    return std::vector<double>(rewards.size(), 0.0);
  }
  MeanStd stats = population_stats(rewards);
  std::vector<double> out(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    out[i] = (rewards[i] - stats.mean) / (stats.stddev + delta);
  }
  return out;
}

EntropyStats group_entropy_stats(const RolloutGroup& group) {
  std::vector<double> pooled;
  pooled.reserve(group.total_tokens());
  for (const ResponseRecord& r : group.responses) {
    for (const TokenRecord& t : r.tokens) pooled.push_back(t.entropy);
  }
  if (pooled.empty()) throw InvariantError("entropy stats of an empty group");
  MeanStd stats = population_stats(pooled);
  return EntropyStats{stats.mean, stats.stddev};
}

double entropy_gate(double entropy, double entropy_mean, double entropy_std,
                    double gamma, double eps_stab) {
  double z = gamma * (entropy - entropy_mean) / (entropy_std + eps_stab);
  if (z > kGateArgClamp) z = kGateArgClamp;
  if (z < -kGateArgClamp) z = -kGateArgClamp;
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<int> anchor_sign(std::span<const double> rewards,
                             std::span<const double> advantages,
                             double reward_threshold,
                             bool degrade_on_zero_variance) {
  if (rewards.size() != advantages.size()) {
    throw InvariantError("anchor inputs must have matching sizes");
  }
  const bool spread = !all_equal(rewards);
  std::vector<int> out(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    double d;
    if (spread) {
      d = sign_of(advantages[i]);
      if (d == 0.0) d = sign_of(rewards[i] - reward_threshold);
    } else if (degrade_on_zero_variance) {
      d = sign_of(rewards[i] - reward_threshold);
    } else {
      d = 0.0;
    }
    out[i] = static_cast<int>(d);
  }
  return out;
}

std::vector<double> cumulative_progress(std::span<const double> entropies) {
  if (entropies.empty()) throw InvariantError("progress of an empty response");
  const std::size_t T = entropies.size();
  double total = 0.0;
  for (double h : entropies) total += h;
  std::vector<double> out(T);
  if (total == 0.0) {
    for (std::size_t t = 0; t < T; ++t) {
      out[t] = static_cast<double>(t + 1) / static_cast<double>(T);
    }
    return out;
  }
  double running = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    running += entropies[t];
    out[t] = running / total;
  }
  return out;
}

int bucket_index(double tau, int num_buckets) {
  if (num_buckets < 1) throw ConfigError("num_buckets must be >= 1");
  if (!(tau >= 0.0 && tau <= 1.0)) throw InvariantError("tau must lie in [0, 1]");
  int k = static_cast<int>(std::floor(tau * num_buckets));
  if (k > num_buckets - 1) k = num_buckets - 1;
  if (k < 0) k = 0;
  return k;
}

BucketStats bucket_stats(std::span<const double> values,
                         std::span<const int> buckets, int num_buckets) {
  if (values.size() != buckets.size()) {
    throw InvariantError("bucket labels must match values");
  }
  BucketStats out;
  out.mean.assign(num_buckets, 0.0);
  out.stddev.assign(num_buckets, 0.0);
  out.degenerate.assign(num_buckets, true);
  for (int k = 0; k < num_buckets; ++k) {
    std::vector<double> members;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (buckets[i] == k) members.push_back(values[i]);
    }
    if (members.size() < 2 || all_equal(members)) continue;
    MeanStd stats = population_stats(members);
    out.mean[k] = stats.mean;
    out.stddev[k] = stats.stddev;
    out.degenerate[k] = false;
  }
  return out;
}

std::vector<double> bucket_normalize(std::span<const double> values,
                                     std::span<const int> buckets,
                                     int num_buckets, double eps_stab) {
  BucketStats stats = bucket_stats(values, buckets, num_buckets);
  std::vector<double> out(values.size(), 0.0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    int k = buckets[i];
    if (k < 0 || k >= num_buckets || stats.degenerate[k]) continue;
    out[i] = (values[i] - stats.mean[k]) / (stats.stddev[k] + eps_stab);
  }
  return out;
}

GroupAdvantages compute_group_advantages(const RolloutGroup& group,
                                         const AdvantageConfig& config,
                                         const AblationFlags& flags) {
  group.validate();
  config.validate();
  const std::size_t G = group.responses.size();

  GroupAdvantages adv;
  adv.prompt_id = group.prompt_id;
  adv.responses.resize(G);

  std::vector<double> rewards(G);
  for (std::size_t i = 0; i < G; ++i) rewards[i] = group.responses[i].reward;
  MeanStd reward_stats = population_stats(rewards);
  adv.reward_mean = reward_stats.mean;
  adv.reward_std = reward_stats.stddev;
  adv.zero_variance = reward_stats.stddev == 0.0;
  adv.outcome_advantage = grpo_advantage(rewards, config.delta);
  adv.anchor = anchor_sign(rewards, adv.outcome_advantage, config.reward_threshold,
                           flags.zero_variance_degradation);

  EntropyStats hstats = group_entropy_stats(group);
  adv.entropy_mean = hstats.mean;
  adv.entropy_std = hstats.stddev;

  // Per-token gate, signal, progress coordinate, bucket label.
  std::vector<double> pooled_anchored;
  std::vector<int> pooled_buckets;
  pooled_anchored.reserve(group.total_tokens());
  pooled_buckets.reserve(group.total_tokens());
  for (std::size_t i = 0; i < G; ++i) {
    const std::vector<TokenRecord>& tokens = group.responses[i].tokens;
    std::vector<double> entropies(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) entropies[t] = tokens[t].entropy;
    std::vector<double> tau = cumulative_progress(entropies);

    adv.responses[i].resize(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      TokenAdvantage& tok = adv.responses[i][t];
      tok.gate_weight = entropy_gate(tokens[t].entropy, hstats.mean, hstats.stddev,
                                     config.gamma, config.eps_stab);
      tok.implicit_signal =
          implicit_signal(tokens[t].logp_cur, tokens[t].logp_ref, config.lambda);
      tok.anchored_signal = static_cast<double>(adv.anchor[i]) * tok.implicit_signal;
      tok.progress = tau[t];
      tok.bucket = bucket_index(tau[t], config.num_buckets);
      pooled_anchored.push_back(tok.anchored_signal);
      pooled_buckets.push_back(tok.bucket);
    }
  }

  std::vector<double> normalized = bucket_normalize(pooled_anchored, pooled_buckets,
                                                    config.num_buckets, config.eps_stab);

  std::size_t flat = 0;
  for (std::size_t i = 0; i < G; ++i) {
    for (TokenAdvantage& tok : adv.responses[i]) {
      tok.normalized_signal = normalized[flat++];
      double w = flags.entropy_gate ? tok.gate_weight : 1.0;
      tok.outcome_adv = gated_outcome_advantage(w, adv.outcome_advantage[i]);
      tok.progress_adv =
          flags.implicit_progress ? config.eta * tok.normalized_signal : 0.0;
      tok.final_adv = tok.outcome_adv + tok.progress_adv;
    }
  }
  return adv;
}

GroupAdvantages compute_group_advantages(const RolloutGroup& group,
                                         const AdvantageConfig& config) {
  return compute_group_advantages(group, config, AblationFlags::all_on());
}

}  // namespace epgrpo
