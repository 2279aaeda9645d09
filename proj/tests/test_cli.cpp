/**
 * End-to-end tests that drive the command-line binary as a subprocess:
 * exit codes, run-directory artifacts, JSONL piping with line-numbered
 * errors, golden advantage replay, byte-stable reruns, and run-root
 * nesting through the environment.
 */

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "doctest.h"
#include "epgrpo/rollout.hpp"
#include "json.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = EPGRPO_CLI_PATH;
const fs::path kDataDir = EPGRPO_TEST_DATA_DIR;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "epgrpo_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(static_cast<bool>(in), "cannot open ", path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE_MESSAGE(static_cast<bool>(out), "cannot write ", path.string());
  out << content;
}

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Spawn the binary through the shell, capturing both streams. `env_prefix`
// can carry VAR=value assignments for the child process.
CliResult run_cli_process(const std::string& args, const std::string& env_prefix = "") {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() / "epgrpo_cli_tests";
  fs::create_directories(dir);
  const fs::path out_path = dir / ("stdout_" + std::to_string(counter) + ".txt");
  const fs::path err_path = dir / ("stderr_" + std::to_string(counter) + ".txt");
  ++counter;
  const std::string cmd = env_prefix + kCli + " " + args + " > " + out_path.string() +
                          " 2> " + err_path.string();
  const int raw = std::system(cmd.c_str());
  CliResult result;
  result.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  result.out = read_file(out_path);
  result.err = read_file(err_path);
  return result;
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) n += c == '\n' ? 1 : 0;
  return n;
}

// Numeric-aware JSON comparison: numbers match within `tol`, everything
// else (keys, strings, bools, shapes) must match exactly.
bool json_close(const json& a, const json& b, double tol) {
  if (a.is_number() && b.is_number()) {
    return std::abs(a.get<double>() - b.get<double>()) <= tol;
  }
  if (a.type() != b.type()) return false;
  if (a.is_object()) {
    if (a.size() != b.size()) return false;
    for (auto it = a.begin(); it != a.end(); ++it) {
      if (!b.contains(it.key())) return false;
      if (!json_close(it.value(), b.at(it.key()), tol)) return false;
    }
    return true;
  }
  if (a.is_array()) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!json_close(a[i], b[i], tol)) return false;
    }
    return true;
  }
  return a == b;
}

// Deterministic fixture groups shared by the regeneration case and the
// malformed-input test. Groups 5 and 8 are forced to zero reward variance
// so the golden file exercises the degraded path too.
epgrpo::RolloutGroup fixture_group(std::mt19937_64& rng, int index) {
  epgrpo::RolloutGroup group = testutil::make_random_group(rng, index, 2, 8, 1, 12);
  if (index == 5) {
    for (epgrpo::ResponseRecord& r : group.responses) r.reward = 1.0;
  }
  if (index == 8) {
    for (epgrpo::ResponseRecord& r : group.responses) r.reward = 0.0;
  }
  return group;
}

constexpr std::uint64_t kFixtureSeed = 20240817ULL;
constexpr int kFixtureGroups = 12;

}  // namespace

// ===== exit codes and usage =====

TEST_CASE("cli usage errors exit with code 1") {
  CHECK(run_cli_process("").exit_code == 1);
  CHECK(run_cli_process("frobnicate").exit_code == 1);
  CHECK(run_cli_process("train --bogus-flag 3").exit_code == 1);

  // Invalid ablation combo is a configuration error, reported as usage.
  const fs::path dir = scratch_dir("usage");
  CliResult bad_algo = run_cli_process("train --algorithm grpo+zvd --steps 1 --out " +
                                       (dir / "run").string());
  CHECK(bad_algo.exit_code == 1);
  CHECK(bad_algo.err.find("error") != std::string::npos);

  // Zero temperature cannot train (no exploration, no gradient signal).
  CliResult bad_temp = run_cli_process("train --temperature 0 --steps 1 --out " +
                                       (dir / "run2").string());
  CHECK(bad_temp.exit_code == 1);
}

TEST_CASE("help exits with code 0 and lists the subcommands") {
  CliResult r = run_cli_process("--help");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("train") != std::string::npos);
  CHECK(r.out.find("advantages") != std::string::npos);
  CHECK(r.out.find("verify-theorem") != std::string::npos);
  CHECK(r.out.find("analyze") != std::string::npos);
}

TEST_CASE("missing config file exits with the data code and names the path") {
  CliResult r = run_cli_process("train --config /no/such/config.json");
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("/no/such/config.json") != std::string::npos);
}

// ===== train =====

TEST_CASE("train writes the run artifacts and prints a summary") {
  const fs::path dir = scratch_dir("train_e2e");
  const fs::path run_dir = dir / "run";
  const std::string args =
      "train --algorithm epgrpo --task copy --steps 5 --group-size 4 "
      "--batch-prompts 2 --vocab 8 --len-min 1 --len-max 2 --max-len 4 "
      "--seed 9 --out " +
      run_dir.string();
  CliResult r = run_cli_process(args);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(run_dir / "config.json"));
  CHECK(fs::exists(run_dir / "summary.json"));
  CHECK(fs::exists(run_dir / "checkpoint_final.json"));
  CHECK(count_lines(read_file(run_dir / "metrics.jsonl")) == 5);

  const json summary = json::parse(r.out);
  CHECK(summary.at("steps").get<int>() == 5);
  CHECK(summary.at("final_smoothed_reward").is_number());
  CHECK(summary.at("pooled_zero_variance_ratio").is_number());
}

TEST_CASE("training reruns are byte-identical") {
  const fs::path dir = scratch_dir("determinism");
  const std::string base =
      "train --algorithm epgrpo --task modsum --steps 4 --group-size 4 "
      "--batch-prompts 2 --vocab 8 --len-min 1 --len-max 2 --max-len 4 "
      "--seed 11 --out ";
  CliResult r1 = run_cli_process(base + (dir / "r1").string());
  CliResult r2 = run_cli_process(base + (dir / "r2").string());
  CAPTURE(r1.err);
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  const std::string m1 = read_file(dir / "r1" / "metrics.jsonl");
  CHECK(!m1.empty());
  CHECK(m1 == read_file(dir / "r2" / "metrics.jsonl"));
  CHECK(read_file(dir / "r1" / "checkpoint_final.json") ==
        read_file(dir / "r2" / "checkpoint_final.json"));
  CHECK(r1.out == r2.out);
}

TEST_CASE("relative run dirs nest under EPGRPO_RUN_ROOT") {
  const fs::path root = scratch_dir("run_root");
  const std::string env = "EPGRPO_RUN_ROOT=" + root.string() + " ";
  const std::string args =
      "train --algorithm grpo --task copy --steps 2 --group-size 4 "
      "--batch-prompts 2 --vocab 8 --len-min 1 --len-max 2 --max-len 4 "
      "--seed 3 --out nested/run";
  CliResult r = run_cli_process(args, env);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(root / "nested" / "run" / "metrics.jsonl"));
}

// ===== advantages =====

TEST_CASE("advantages on empty input produces an empty output file") {
  const fs::path dir = scratch_dir("adv_empty");
  write_file(dir / "in.jsonl", "");
  CliResult r = run_cli_process("advantages --in " + (dir / "in.jsonl").string() +
                                " --out " + (dir / "out.jsonl").string());
  CHECK(r.exit_code == 0);
  CHECK(read_file(dir / "out.jsonl").empty());
}

TEST_CASE("advantages reports the failing input line number") {
  const fs::path dir = scratch_dir("adv_bad");
  std::mt19937_64 rng(7);
  const std::string line1 = epgrpo::serialize_rollout_group(testutil::make_random_group(rng, 0));
  const std::string line2 = epgrpo::serialize_rollout_group(testutil::make_random_group(rng, 1));
  write_file(dir / "in.jsonl", line1 + "\n" + line2 + "\nnot json at all\n");
  CliResult r = run_cli_process("advantages --in " + (dir / "in.jsonl").string() +
                                " --out " + (dir / "out.jsonl").string());
  CHECK(r.exit_code == 2);
  CHECK(r.err.find(":3:") != std::string::npos);

  CliResult missing = run_cli_process("advantages --in /no/such.jsonl --out " +
                                      (dir / "o.jsonl").string());
  CHECK(missing.exit_code == 2);
  CHECK(missing.err.find("/no/such.jsonl") != std::string::npos);

  CliResult bad_combo = run_cli_process("advantages --algorithm grpo+zvd --in " +
                                        (dir / "in.jsonl").string() + " --out " +
                                        (dir / "o2.jsonl").string());
  CHECK(bad_combo.exit_code == 1);
}

TEST_CASE("advantages replay matches the committed golden output") {
  const fs::path in_path = kDataDir / "rollout_fixture.jsonl";
  const fs::path golden_path = kDataDir / "advantages_golden.jsonl";
  REQUIRE_MESSAGE(fs::exists(in_path),
                  "fixture missing; run the regeneration test case once");
  REQUIRE(fs::exists(golden_path));
  const fs::path dir = scratch_dir("golden");
  const fs::path out_path = dir / "advantages.jsonl";
  CliResult r =
      run_cli_process("advantages --in " + in_path.string() + " --out " + out_path.string());
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);

  std::istringstream got(read_file(out_path));
  std::istringstream want(read_file(golden_path));
  std::string got_line;
  std::string want_line;
  int line = 0;
  while (std::getline(want, want_line)) {
    ++line;
    CAPTURE(line);
    REQUIRE(std::getline(got, got_line));
    CHECK_MESSAGE(json_close(json::parse(got_line), json::parse(want_line), 1e-9),
                  "line ", line, " differs from golden");
  }
  CHECK(line == kFixtureGroups);
  CHECK_FALSE(std::getline(got, got_line));  // no extra output lines
}

TEST_CASE("advantages output is byte-stable across reruns") {
  const fs::path in_path = kDataDir / "rollout_fixture.jsonl";
  REQUIRE(fs::exists(in_path));
  const fs::path dir = scratch_dir("stable");
  const fs::path out1 = dir / "a1.jsonl";
  const fs::path out2 = dir / "a2.jsonl";
  REQUIRE(run_cli_process("advantages --in " + in_path.string() + " --out " + out1.string())
              .exit_code == 0);
  REQUIRE(run_cli_process("advantages --in " + in_path.string() + " --out " + out2.string())
              .exit_code == 0);
  const std::string bytes = read_file(out1);
  CHECK(!bytes.empty());
  CHECK(bytes == read_file(out2));
}

// ===== verify-theorem =====

TEST_CASE("verify-theorem quick run passes and writes a report") {
  const fs::path dir = scratch_dir("theorem");
  const fs::path json_path = dir / "report.json";
  CliResult r = run_cli_process("verify-theorem --seeds 2 --seed 5 --json " +
                                json_path.string());
  CAPTURE(r.out);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("\"pass\":true") != std::string::npos);
  const json report = json::parse(read_file(json_path));
  CHECK(report.at("reports").size() == 2);
  CHECK(report.at("summary").at("pass").get<bool>());
  CHECK(report.at("summary").at("worst_max_relative_error").get<double>() < 1e-4);
}

// ===== analyze =====

TEST_CASE("analyze renders a table and optional artifacts") {
  const fs::path dir = scratch_dir("analyze");
  const std::string base =
      "train --task copy --steps 3 --group-size 4 --batch-prompts 2 --vocab 8 "
      "--len-min 1 --len-max 2 --max-len 4 --seed 2 ";
  REQUIRE(run_cli_process(base + "--algorithm grpo --out " + (dir / "g").string())
              .exit_code == 0);
  REQUIRE(run_cli_process(base + "--algorithm epgrpo --out " + (dir / "e").string())
              .exit_code == 0);

  const std::string g_metrics = (dir / "g" / "metrics.jsonl").string();
  const std::string e_metrics = (dir / "e" / "metrics.jsonl").string();
  const fs::path json_path = dir / "analysis.json";
  const fs::path svg_path = dir / "reward.svg";
  CliResult r = run_cli_process("analyze " + g_metrics + " " + e_metrics +
                                " --labels grpo,epgrpo --json " + json_path.string() +
                                " --plot " + svg_path.string());
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("grpo") != std::string::npos);
  CHECK(r.out.find("epgrpo") != std::string::npos);

  const json analysis = json::parse(read_file(json_path));
  REQUIRE(analysis.is_array());
  CHECK(analysis.size() == 2);
  const std::string svg = read_file(svg_path);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("polyline") != std::string::npos);

  CliResult mismatch = run_cli_process("analyze " + g_metrics + " --labels a,b");
  CHECK(mismatch.exit_code == 1);

  write_file(dir / "bad.jsonl", "{\"step\": }\n");
  CliResult malformed = run_cli_process("analyze " + (dir / "bad.jsonl").string());
  CHECK(malformed.exit_code == 2);
}

// ===== fixture regeneration (skipped by default) =====

// Run explicitly after an intentional pipeline change:
//   ./epgrpo_tests --no-skip -tc="regenerate golden fixtures"
// Inputs come from the shared random generator; expected values come from
// the brute-force oracle, so the golden file never depends on the engine.
TEST_CASE("regenerate golden fixtures" * doctest::skip()) {
  std::mt19937_64 rng(kFixtureSeed);
  std::ostringstream rollout_lines;
  std::ostringstream golden_lines;
  for (int i = 0; i < kFixtureGroups; ++i) {
    const epgrpo::RolloutGroup group = fixture_group(rng, i);
    rollout_lines << epgrpo::serialize_rollout_group(group) << "\n";

    const testutil::OracleInputs in = testutil::to_oracle_inputs(group);
    const oracle::Config cfg;  // defaults mirror the CLI defaults
    const oracle::GroupOut ref =
        oracle::compute(in.logp_cur, in.logp_ref, in.entropy, in.rewards, cfg);

    json responses = json::array();
    for (std::size_t r = 0; r < ref.responses.size(); ++r) {
      json tokens = json::array();
      for (const oracle::TokenOut& t : ref.responses[r]) {
        tokens.push_back({{"gate_weight", t.gate},
                          {"implicit_signal", t.signal},
                          {"anchored_signal", t.anchored},
                          {"progress", t.progress},
                          {"bucket", t.bucket},
                          {"normalized_signal", t.normalized},
                          {"outcome_adv", t.outcome_adv},
                          {"progress_adv", t.progress_adv},
                          {"final_adv", t.final_adv}});
      }
      responses.push_back({{"outcome_advantage", ref.outcome_advantage[r]},
                           {"anchor", ref.anchor[r]},
                           {"tokens", std::move(tokens)}});
    }
    const json record = {{"prompt_id", group.prompt_id},
                         {"entropy_mean", ref.entropy_mean},
                         {"entropy_std", ref.entropy_std},
                         {"reward_mean", ref.reward_mean},
                         {"reward_std", ref.reward_std},
                         {"zero_variance", ref.zero_variance},
                         {"responses", responses}};
    golden_lines << record.dump() << "\n";
  }
  fs::create_directories(kDataDir);
  write_file(kDataDir / "rollout_fixture.jsonl", rollout_lines.str());
  write_file(kDataDir / "advantages_golden.jsonl", golden_lines.str());
  MESSAGE("fixtures regenerated under ", kDataDir.string());
}
