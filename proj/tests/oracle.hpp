#pragma once

/**
 * Brute-force reference for the advantage pipeline, kept deliberately
 * independent of the library: raw arrays in, plain double loops transcribing
 * each formula one step at a time, no shared helpers. Unit and acceptance
 * tests compare the engine against this implementation componentwise.
 *
 * Shared numeric conventions (the library documents the same ones):
 * population statistics, zero spread iff all inputs equal, gate argument
 * clamped to +-36, degenerate buckets (fewer than two members or zero
 * spread) normalize to 0.
 */

#include <vector>

namespace oracle {

struct Config {
  double gamma = 5.0;
  double lambda = 0.1;
  double eta = 0.2;
  int num_buckets = 10;
  double reward_threshold = 0.5;
  double delta = 1e-4;
  double eps_stab = 1e-8;
  bool entropy_gate = true;
  bool implicit_progress = true;
  bool zero_variance_degradation = true;
};

struct TokenOut {
  double gate = 0.0;
  double signal = 0.0;
  double anchored = 0.0;
  double progress = 0.0;
  int bucket = 0;
  double normalized = 0.0;
  double outcome_adv = 0.0;
  double progress_adv = 0.0;
  double final_adv = 0.0;
};

struct GroupOut {
  std::vector<std::vector<TokenOut>> responses;
  double entropy_mean = 0.0;
  double entropy_std = 0.0;
  double reward_mean = 0.0;
  double reward_std = 0.0;
  std::vector<double> outcome_advantage;
  std::vector<int> anchor;
  bool zero_variance = false;
};

// Full pipeline over one group. Outer index: response; inner index: token.
GroupOut compute(const std::vector<std::vector<double>>& logp_cur,
                 const std::vector<std::vector<double>>& logp_ref,
                 const std::vector<std::vector<double>>& entropy,
                 const std::vector<double>& rewards, const Config& cfg);

}  // namespace oracle
