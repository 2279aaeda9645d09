#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "epgrpo/advantage.hpp"
#include "test_util.hpp"

using namespace epgrpo;

namespace {

// Group with chosen rewards and per-token (logp_cur, logp_ref, entropy) rows.
RolloutGroup build_group(const std::vector<double>& rewards,
                         const std::vector<std::vector<std::array<double, 3>>>& rows) {
  RolloutGroup group;
  group.prompt_id = "fixture";
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    ResponseRecord resp;
    resp.reward = rewards[i];
    for (const auto& row : rows[i]) {
      TokenRecord tok;
      tok.token_id = 2;
      tok.logp_cur = row[0];
      tok.logp_ref = row[1];
      tok.entropy = row[2];
      resp.tokens.push_back(tok);
    }
    group.responses.push_back(std::move(resp));
  }
  return group;
}

}  // namespace

// ===== frozen scalar values =====

TEST_CASE("group-normalized advantages match hand-computed values") {
  SUBCASE("one success among four, delta 1e-4") {
    std::vector<double> r = {1.0, 0.0, 0.0, 0.0};
    std::vector<double> adv = grpo_advantage(r, 1e-4);
    CHECK(adv[0] == doctest::Approx(1.731650899923592).epsilon(1e-13));
    for (int i = 1; i < 4; ++i) {
      CHECK(adv[i] == doctest::Approx(-0.5772169666411974).epsilon(1e-13));
    }
  }
  SUBCASE("two-point group without stabilizer is exactly +-1") {
    std::vector<double> r = {1.0, 0.0};
    std::vector<double> adv = grpo_advantage(r, 0.0);
    CHECK(adv[0] == 1.0);
    CHECK(adv[1] == -1.0);
  }
  SUBCASE("all-equal rewards collapse to exact zeros") {
    for (double v : {0.0, 1.0, 0.37}) {
      std::vector<double> r = {v, v, v, v, v};
      for (double a : grpo_advantage(r, 1e-4)) CHECK(a == 0.0);
    }
  }
  SUBCASE("binary rewards with spread rank successes strictly above failures") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      int g = 2 + static_cast<int>(uniform_unit(rng) * 7);
      std::vector<double> r;
      for (int i = 0; i < g; ++i) r.push_back(uniform_unit(rng) < 0.5 ? 0.0 : 1.0);
      bool has0 = false, has1 = false;
      for (double v : r) (v == 0.0 ? has0 : has1) = true;
      std::vector<double> adv = grpo_advantage(r, 1e-4);
      if (has0 && has1) {
        for (std::size_t i = 0; i < r.size(); ++i) {
          CHECK((r[i] == 1.0 ? adv[i] > 0.0 : adv[i] < 0.0));
        }
      } else {
        for (double a : adv) CHECK(a == 0.0);
      }
    }
  }
}

TEST_CASE("entropy gate hits the logistic at standardized arguments") {
  // (H - mean)/std = +-1 with gamma 5 and no stabilizer -> logistic(+-5).
  CHECK(entropy_gate(2.0, 1.0, 1.0, 5.0, 0.0) ==
        doctest::Approx(0.9933071490757153).epsilon(1e-13));
  CHECK(entropy_gate(0.0, 1.0, 1.0, 5.0, 0.0) ==
        doctest::Approx(0.0066928509242848554).epsilon(1e-13));
  CHECK(entropy_gate(1.0, 1.0, 1.0, 5.0, 0.0) == 0.5);

  SUBCASE("monotone in entropy and symmetric around the mean") {
    double prev = -1.0;
    for (int i = 0; i <= 40; ++i) {
      double h = 0.05 * i;
      double w = entropy_gate(h, 1.0, 0.5, 5.0, 1e-8);
      CHECK(w > 0.0);
      CHECK(w < 1.0);
      CHECK(w > prev);
      prev = w;
    }
    for (double d : {0.1, 0.5, 2.0, 10.0}) {
      double up = entropy_gate(1.0 + d, 1.0, 0.5, 5.0, 1e-8);
      double dn = entropy_gate(1.0 - d, 1.0, 0.5, 5.0, 1e-8);
      CHECK(std::abs(up + dn - 1.0) < 1e-12);
    }
  }
  SUBCASE("extreme standardized arguments stay strictly inside (0, 1)") {
    double hi = entropy_gate(1e6, 0.0, 1.0, 5.0, 0.0);
    double lo = entropy_gate(-1e6, 0.0, 1.0, 5.0, 0.0);
    CHECK(hi < 1.0);
    CHECK(hi > 0.999999);
    CHECK(lo > 0.0);
    CHECK(lo < 1e-6);
  }
}

TEST_CASE("token entropy of reference distributions") {
  std::vector<double> uniform4 = {0.25, 0.25, 0.25, 0.25};
  CHECK(token_entropy(uniform4) == doctest::Approx(std::log(4.0)).epsilon(1e-13));
  std::vector<double> two = {0.5, 0.5, 0.0, 0.0};  // zero entries contribute 0
  CHECK(token_entropy(two) == doctest::Approx(std::log(2.0)).epsilon(1e-13));
  std::vector<double> point = {1.0, 0.0, 0.0};
  CHECK(token_entropy(point) == 0.0);
}

TEST_CASE("cumulative progress normalizes entropy mass") {
  std::vector<double> h = {2.0, 1.0, 1.0};
  std::vector<double> tau = cumulative_progress(h);
  CHECK(tau[0] == 0.5);
  CHECK(tau[1] == 0.75);
  CHECK(tau[2] == 1.0);

  SUBCASE("zero total falls back to positional progress") {
    std::vector<double> zeros = {0.0, 0.0};
    std::vector<double> pos = cumulative_progress(zeros);
    CHECK(pos[0] == 0.5);
    CHECK(pos[1] == 1.0);
  }
  SUBCASE("non-decreasing and terminal for random inputs") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      int n = 1 + static_cast<int>(uniform_unit(rng) * 20);
      std::vector<double> hs;
      for (int i = 0; i < n; ++i) hs.push_back(2.5 * uniform_unit(rng));
      std::vector<double> t = cumulative_progress(hs);
      for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i] >= t[i - 1]);
      CHECK(t.back() == 1.0);
      for (double v : t) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }
}

TEST_CASE("bucket index uses equal widths with a closed top bucket") {
  CHECK(bucket_index(0.0, 10) == 0);
  CHECK(bucket_index(0.25, 10) == 2);
  CHECK(bucket_index(0.999, 10) == 9);
  CHECK(bucket_index(1.0, 10) == 9);  // tau = 1 joins the last bucket
  CHECK(bucket_index(0.5, 4) == 2);
}

TEST_CASE("bucket normalization z-scores within buckets") {
  SUBCASE("two-member bucket hand value") {
    std::vector<double> values = {1.0, 3.0};
    std::vector<int> buckets = {0, 0};
    std::vector<double> norm = bucket_normalize(values, buckets, 10, 1e-8);
    // mean 2, population std 1 -> (v - 2) / (1 + 1e-8)
    CHECK(norm[0] == -0.9999999900000002);
    CHECK(norm[1] == 0.9999999900000002);
  }
  SUBCASE("degenerate buckets emit exactly zero") {
    std::vector<double> values = {5.0, 2.0, 2.0, 2.0};
    std::vector<int> buckets = {3, 7, 7, 7};  // bucket 3: one member; bucket 7: tied
    std::vector<double> norm = bucket_normalize(values, buckets, 10, 1e-8);
    for (double v : norm) CHECK(v == 0.0);
  }
  SUBCASE("non-degenerate buckets have zero mean and predictable spread") {
    std::mt19937_64 rng(9);
    const int num_buckets = 10;
    const double eps = 1e-8;
    for (int trial = 0; trial < 50; ++trial) {
      int n = 2 + static_cast<int>(uniform_unit(rng) * 60);
      std::vector<double> values;
      std::vector<int> buckets;
      for (int i = 0; i < n; ++i) {
        values.push_back(2.0 * uniform_unit(rng) - 1.0);
        buckets.push_back(static_cast<int>(uniform_unit(rng) * num_buckets));
      }
      BucketStats stats = bucket_stats(values, buckets, num_buckets);
      std::vector<double> norm = bucket_normalize(values, buckets, num_buckets, eps);
      for (int k = 0; k < num_buckets; ++k) {
        if (stats.degenerate[k]) continue;
        double sum = 0.0, sq = 0.0;
        int count = 0;
        for (int i = 0; i < n; ++i) {
          if (buckets[i] != k) continue;
          sum += norm[i];
          ++count;
        }
        double mean = sum / count;
        for (int i = 0; i < n; ++i) {
          if (buckets[i] != k) continue;
          sq += (norm[i] - mean) * (norm[i] - mean);
        }
        double sd = std::sqrt(sq / count);
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(sd - stats.stddev[k] / (stats.stddev[k] + eps)) < 1e-6);
      }
    }
  }
}

TEST_CASE("implicit signal scales the log-probability gap") {
  CHECK(implicit_signal(-0.5, -1.0, 0.1) == 0.05);
  CHECK(implicit_signal(-1.5, -1.0, 0.1) == doctest::Approx(-0.05).epsilon(1e-15));
  CHECK(implicit_signal(-2.0, -1.0, 0.1) == -0.1);
  CHECK(implicit_signal(-1.0, -1.0, 0.1) == 0.0);
}

TEST_CASE("anchors follow outcome direction with threshold fallbacks") {
  SUBCASE("reward spread anchors on the advantage sign") {
    std::vector<double> r = {1.0, 0.0, 0.0};
    std::vector<double> adv = grpo_advantage(r, 1e-4);
    std::vector<int> d = anchor_sign(r, adv, 0.5);
    CHECK(d[0] == 1);
    CHECK(d[1] == -1);
    CHECK(d[2] == -1);
  }
  SUBCASE("zero advantage inside a spread group falls back to the threshold") {
    std::vector<double> r = {1.0, 0.0, 0.5};  // mean 0.5 -> third advantage is 0
    std::vector<double> adv = grpo_advantage(r, 1e-4);
    REQUIRE(adv[2] == 0.0);
    std::vector<int> d = anchor_sign(r, adv, 0.5);
    CHECK(d[0] == 1);
    CHECK(d[1] == -1);
    CHECK(d[2] == 0);  // reward sits exactly on the threshold
    std::vector<int> d_low = anchor_sign(r, adv, 0.25);
    CHECK(d_low[2] == 1);
  }
  SUBCASE("zero variance degrades to the reward threshold when enabled") {
    std::vector<double> ones = {1.0, 1.0};
    std::vector<double> zeros = {0.0, 0.0};
    std::vector<double> adv = {0.0, 0.0};
    CHECK(anchor_sign(ones, adv, 0.5) == std::vector<int>{1, 1});
    CHECK(anchor_sign(zeros, adv, 0.5) == std::vector<int>{-1, -1});
    CHECK(anchor_sign(ones, adv, 0.5, false) == std::vector<int>{0, 0});
    CHECK(anchor_sign(zeros, adv, 0.5, false) == std::vector<int>{0, 0});
  }
}

// ===== pipeline properties =====

TEST_CASE("anchored signal reproduces the four polarity quadrants") {
  // Response 0 wins (advantage > 0), response 1 loses. First token of each has
  // logp_cur > logp_ref (signal > 0), second the reverse.
  RolloutGroup group = build_group(
      {1.0, 0.0},
      {{{-0.5, -1.0, 0.8}, {-1.5, -1.0, 0.6}},    // TP then FP
       {{-0.5, -1.0, 0.7}, {-1.5, -1.0, 0.5}}});  // FN then TN
  GroupAdvantages adv = compute_group_advantages(group, AdvantageConfig{});
  const auto& win = adv.responses[0];
  const auto& lose = adv.responses[1];
  CHECK(win[0].anchored_signal > 0.0);   // confident correct reinforced
  CHECK(win[1].anchored_signal < 0.0);   // wavering correct damped
  CHECK(lose[0].anchored_signal < 0.0);  // confident wrong penalized
  CHECK(lose[1].anchored_signal > 0.0);  // wavering wrong tolerated
  for (const auto& resp : adv.responses) {
    for (const auto& tok : resp) {
      double expected_sign = (tok.implicit_signal > 0 ? 1.0 : -1.0);
      int i = &resp == &adv.responses[0] ? 0 : 1;
      double d = adv.anchor[i];
      if (tok.anchored_signal != 0.0) {
        CHECK(tok.anchored_signal == doctest::Approx(d * tok.implicit_signal));
        CHECK((tok.anchored_signal > 0) ==
              ((adv.outcome_advantage[i] > 0) == (expected_sign > 0)));
      }
    }
  }
}

TEST_CASE("decomposition identity holds exactly") {
  std::mt19937_64 rng(17);
  AdvantageConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    RolloutGroup group = testutil::make_random_group(rng, trial);
    GroupAdvantages adv = compute_group_advantages(group, cfg);
    for (const auto& resp : adv.responses) {
      for (const auto& tok : resp) {
        CHECK(tok.final_adv == tok.outcome_adv + tok.progress_adv);
        CHECK(tok.gate_weight > 0.0);
        CHECK(tok.gate_weight < 1.0);
        CHECK(tok.progress >= 0.0);
        CHECK(tok.progress <= 1.0);
        CHECK(tok.bucket >= 0);
        CHECK(tok.bucket < cfg.num_buckets);
      }
    }
  }
}

TEST_CASE("eta = 0 reduces the final advantage to the gated outcome") {
  std::mt19937_64 rng(19);
  AdvantageConfig cfg;
  cfg.eta = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    RolloutGroup group = testutil::make_random_group(rng, trial);
    GroupAdvantages adv = compute_group_advantages(group, cfg);
    for (std::size_t i = 0; i < adv.responses.size(); ++i) {
      for (const auto& tok : adv.responses[i]) {
        CHECK(std::abs(tok.final_adv -
                       tok.gate_weight * adv.outcome_advantage[i]) <= 1e-12);
        if (adv.outcome_advantage[i] != 0.0) {
          CHECK((tok.final_adv > 0) == (adv.outcome_advantage[i] > 0));
        } else {
          CHECK(tok.final_adv == 0.0);
        }
      }
    }
  }
}

TEST_CASE("ablation flags reduce the pipeline to its parts") {
  std::mt19937_64 rng(23);
  AdvantageConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    RolloutGroup group = testutil::make_random_group(rng, trial);
    std::vector<double> rewards;
    for (const auto& resp : group.responses) rewards.push_back(resp.reward);
    std::vector<double> plain = grpo_advantage(rewards, cfg.delta);

    GroupAdvantages off = compute_group_advantages(group, cfg, AblationFlags::all_off());
    for (std::size_t i = 0; i < off.responses.size(); ++i) {
      for (const auto& tok : off.responses[i]) {
        CHECK(std::abs(tok.outcome_adv - plain[i]) <= 1e-12);
        CHECK(tok.progress_adv == 0.0);
        CHECK(std::abs(tok.final_adv - plain[i]) <= 1e-12);
      }
    }

    AblationFlags eg_only{true, false, false};
    GroupAdvantages eg = compute_group_advantages(group, cfg, eg_only);
    for (std::size_t i = 0; i < eg.responses.size(); ++i) {
      for (const auto& tok : eg.responses[i]) {
        CHECK(std::abs(tok.outcome_adv - tok.gate_weight * plain[i]) <= 1e-12);
        CHECK(tok.progress_adv == 0.0);
      }
    }
  }
}

TEST_CASE("zero-variance groups keep a live progress term") {
  // All rewards equal: the outcome term is identically zero, yet distinct
  // current/reference log-probs leave the progress advantages non-degenerate.
  RolloutGroup group = build_group(
      {1.0, 1.0},
      {{{-0.2, -1.0, 1.0}, {-0.9, -0.4, 1.0}, {-1.4, -0.3, 1.0}, {-0.1, -1.2, 1.0}},
       {{-1.1, -0.2, 1.0}, {-0.3, -1.3, 1.0}, {-0.8, -0.9, 1.0}, {-1.0, -0.5, 1.0}}});
  GroupAdvantages adv = compute_group_advantages(group, AdvantageConfig{});
  REQUIRE(adv.zero_variance);
  double outcome_mass = 0.0;
  double progress_mass = 0.0;
  for (const auto& resp : adv.responses) {
    for (const auto& tok : resp) {
      outcome_mass += std::abs(tok.outcome_adv);
      progress_mass += std::abs(tok.progress_adv);
    }
  }
  CHECK(outcome_mass == 0.0);
  CHECK(progress_mass > 0.0);

  SUBCASE("disabling the degradation branch mutes the progress term too") {
    AblationFlags no_zvd{true, true, false};
    GroupAdvantages muted = compute_group_advantages(group, AdvantageConfig{}, no_zvd);
    for (const auto& resp : muted.responses) {
      for (const auto& tok : resp) CHECK(tok.final_adv == 0.0);
    }
  }
}

// ===== oracle equivalence =====

TEST_CASE("engine matches the brute-force oracle componentwise") {
  std::mt19937_64 rng(29);
  AdvantageConfig cfg;
  const AblationFlags combos[] = {AblationFlags::all_on(), AblationFlags::all_off(),
                                  {true, false, false}, {false, true, true},
                                  {false, true, false}, {true, true, false}};
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    RolloutGroup group = testutil::make_random_group(rng, trial);
    const AblationFlags& flags = combos[trial % 6];
    GroupAdvantages got = compute_group_advantages(group, cfg, flags);
    testutil::OracleInputs in = testutil::to_oracle_inputs(group);
    oracle::GroupOut want = oracle::compute(in.logp_cur, in.logp_ref, in.entropy,
                                            in.rewards, testutil::to_oracle_config(cfg, flags));
    worst = std::max(worst, testutil::max_component_diff(got, want));
  }
  CHECK(worst < 1e-10);
}
