#include "epgrpo/tasks.hpp"

#include <algorithm>
#include <random>

#include "epgrpo/seeding.hpp"

namespace epgrpo {
namespace {

int uniform_int(std::mt19937_64& gen, int lo, int hi) {
  // Inclusive range via the portable 53-bit uniform; hi - lo stays tiny here.
  int span = hi - lo + 1;
  int v = lo + static_cast<int>(uniform_unit(gen) * span);
  return std::min(v, hi);
}

}  // namespace

TaskKind parse_task_kind(const std::string& name) {
  if (name == "copy") return TaskKind::Copy;
  if (name == "reverse") return TaskKind::Reverse;
  if (name == "modsum") return TaskKind::ModSum;
  throw ConfigError("unknown task \"" + name + "\" (expected copy, reverse, or modsum)");
}

std::string task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::Copy: return "copy";
    case TaskKind::Reverse: return "reverse";
    case TaskKind::ModSum: return "modsum";
  }
  throw ConfigError("invalid task kind");
}

void TaskConfig::validate() const {
  if (vocab_size < 4) throw ConfigError("task vocab_size must be >= 4");
  if (len_min < 1 || len_max < len_min) {
    throw ConfigError("prompt length range must satisfy 1 <= len_min <= len_max");
  }
  if (modulus != 0 && (modulus < 2 || modulus > vocab_size - 2)) {
    throw ConfigError("modulus must be 0 (vocab-tied) or in [2, vocab_size - 2]");
  }
}

TaskInstance generate_instance(const TaskConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 gen(seed);
  TaskInstance instance;
  instance.kind = config.kind;
  int len = uniform_int(gen, config.len_min, config.len_max);
  instance.prompt.resize(len);
  for (int i = 0; i < len; ++i) {
    instance.prompt[i] = uniform_int(gen, kFirstSymbolToken, config.vocab_size - 1);
  }
  switch (config.kind) {
    case TaskKind::Copy:
      instance.expected = instance.prompt;
      break;
    case TaskKind::Reverse:
      instance.expected.assign(instance.prompt.rbegin(), instance.prompt.rend());
      break;
    case TaskKind::ModSum: {
      int m = config.effective_modulus();
      int sum = 0;
      for (int tok : instance.prompt) sum = (sum + (tok - kFirstSymbolToken)) % m;
      instance.expected = {kFirstSymbolToken + sum};
      break;
    }
  }
  instance.expected.push_back(kTerminatorToken);
  return instance;
}

VerifyResult verify(const TaskInstance& instance, std::span<const int> response_tokens) {
  VerifyResult result;
  result.format_ok =
      !response_tokens.empty() && response_tokens.back() == kTerminatorToken;
  result.reward =
      response_tokens.size() == instance.expected.size() &&
              std::equal(response_tokens.begin(), response_tokens.end(),
                         instance.expected.begin())
          ? 1.0
          : 0.0;
  return result;
}

}  // namespace epgrpo
