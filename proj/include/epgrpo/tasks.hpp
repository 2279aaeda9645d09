#pragma once

/**
 * Synthetic verifiable-reward tasks.
 *
 * Three prompt->target families over the shared token alphabet (0 pad,
 * 1 terminator, symbols from 2): COPY echoes the prompt, REVERSE emits it
 * backwards, MODSUM emits the single symbol encoding the sum of the prompt's
 * digit values modulo `modulus`. The verifier is exact match against the
 * expected completion (terminator included), reward in {0, 1}.
 */

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "epgrpo/rollout.hpp"

namespace epgrpo {

enum class TaskKind { Copy, Reverse, ModSum };

TaskKind parse_task_kind(const std::string& name);  // "copy" | "reverse" | "modsum"
std::string task_kind_name(TaskKind kind);

struct TaskConfig {
  TaskKind kind = TaskKind::ModSum;
  int len_min = 2;     // prompt length range, inclusive
  int len_max = 6;
  int vocab_size = 16;
  int modulus = 0;     // MODSUM only; 0 means vocab_size - 2

  void validate() const;
  int effective_modulus() const { return modulus > 0 ? modulus : vocab_size - 2; }
};

struct TaskInstance {
  TaskKind kind = TaskKind::Copy;
  std::vector<int> prompt;    // symbol tokens in [2, vocab)
  std::vector<int> expected;  // target completion, ends with the terminator
};

// Deterministic instance from a seed: prompt length uniform on
// [len_min, len_max], symbols uniform on [2, vocab).
TaskInstance generate_instance(const TaskConfig& config, std::uint64_t seed);

struct VerifyResult {
  double reward = 0.0;   // 1 iff response == expected
  bool format_ok = false;  // response non-empty and ends with the terminator
};

VerifyResult verify(const TaskInstance& instance, std::span<const int> response_tokens);

}  // namespace epgrpo
