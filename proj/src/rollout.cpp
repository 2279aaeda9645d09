#include "epgrpo/rollout.hpp"

#include <cmath>
#include <cstddef>
#include <string>

#include "json.hpp"

namespace epgrpo {
namespace {

using nlohmann::json;

json parse_json_line(const std::string& line) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
}

const json& require_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw ParseError(std::string("missing field \"") + key + "\"");
  }
  return *it;
}

double require_number(const json& j, const char* key) {
  const json& v = require_field(j, key);
  if (!v.is_number()) {
    throw ParseError(std::string("field \"") + key + "\" must be a number");
  }
  return v.get<double>();
}

int require_int(const json& j, const char* key) {
  const json& v = require_field(j, key);
  if (!v.is_number_integer()) {
    throw ParseError(std::string("field \"") + key + "\" must be an integer");
  }
  return v.get<int>();
}

bool require_bool(const json& j, const char* key) {
  const json& v = require_field(j, key);
  if (!v.is_boolean()) {
    throw ParseError(std::string("field \"") + key + "\" must be a boolean");
  }
  return v.get<bool>();
}

std::string require_string(const json& j, const char* key) {
  const json& v = require_field(j, key);
  if (!v.is_string()) {
    throw ParseError(std::string("field \"") + key + "\" must be a string");
  }
  return v.get<std::string>();
}

const json& require_array(const json& j, const char* key) {
  const json& v = require_field(j, key);
  if (!v.is_array()) {
    throw ParseError(std::string("field \"") + key + "\" must be an array");
  }
  return v;
}

}  // namespace

// ===== validation =====

void TokenRecord::validate() const {
  if (token_id < 0) throw InvariantError("token id must be non-negative");
  if (!std::isfinite(logp_cur) || logp_cur > 0.0) {
    throw InvariantError("logp_cur must be finite and <= 0");
  }
  if (!std::isfinite(logp_ref) || logp_ref > 0.0) {
    throw InvariantError("logp_ref must be finite and <= 0");
  }
  if (!std::isfinite(entropy) || entropy < 0.0) {
    throw InvariantError("entropy must be finite and >= 0");
  }
}

void ResponseRecord::validate() const {
  if (tokens.empty()) throw InvariantError("response must carry at least one token");
  if (!std::isfinite(reward)) throw InvariantError("reward must be finite");
  for (const TokenRecord& t : tokens) t.validate();
}

void RolloutGroup::validate() const {
  if (responses.size() < 2) {
    throw InvariantError("group must carry at least two responses");
  }
  for (const ResponseRecord& r : responses) r.validate();
}

std::size_t RolloutGroup::total_tokens() const {
  std::size_t n = 0;
  for (const ResponseRecord& r : responses) n += r.tokens.size();
  return n;
}

void AdvantageConfig::validate() const {
  if (!std::isfinite(gamma) || gamma <= 0.0) throw ConfigError("gamma must be > 0");
  if (!std::isfinite(lambda) || lambda <= 0.0) throw ConfigError("lambda must be > 0");
  if (!std::isfinite(eta) || eta < 0.0) throw ConfigError("eta must be >= 0");
  if (num_buckets < 1) throw ConfigError("num_buckets must be >= 1");
  if (!std::isfinite(reward_threshold)) throw ConfigError("reward_threshold must be finite");
  if (!std::isfinite(delta) || delta <= 0.0) throw ConfigError("delta must be > 0");
  if (!std::isfinite(eps_stab) || eps_stab <= 0.0) throw ConfigError("eps_stab must be > 0");
}

void TokenAdvantage::validate() const {
  if (!(gate_weight > 0.0 && gate_weight < 1.0)) {
    throw InvariantError("gate weight must lie strictly inside (0, 1)");
  }
  if (!std::isfinite(implicit_signal) || !std::isfinite(anchored_signal) ||
      !std::isfinite(normalized_signal) || !std::isfinite(outcome_adv) ||
      !std::isfinite(progress_adv) || !std::isfinite(final_adv)) {
    throw InvariantError("advantage fields must be finite");
  }
  if (!(progress >= 0.0 && progress <= 1.0)) {
    throw InvariantError("progress must lie in [0, 1]");
  }
  if (bucket < 0) throw InvariantError("bucket index must be non-negative");
  if (final_adv != outcome_adv + progress_adv) {
    throw InvariantError("final_adv must equal outcome_adv + progress_adv exactly");
  }
}

void GroupAdvantages::validate() const {
  const std::size_t G = responses.size();
  if (G < 2) throw InvariantError("advantage group must carry at least two responses");
  if (outcome_advantage.size() != G || anchor.size() != G) {
    throw InvariantError("per-response arrays must match the response count");
  }
  if (!std::isfinite(entropy_mean) || !std::isfinite(entropy_std) || entropy_std < 0.0) {
    throw InvariantError("entropy statistics must be finite, std non-negative");
  }
  if (!std::isfinite(reward_mean) || !std::isfinite(reward_std) || reward_std < 0.0) {
    throw InvariantError("reward statistics must be finite, std non-negative");
  }
  if (zero_variance != (reward_std == 0.0)) {
    throw InvariantError("zero_variance must hold exactly when reward std is 0");
  }
  for (std::size_t i = 0; i < G; ++i) {
    if (anchor[i] < -1 || anchor[i] > 1) {
      throw InvariantError("anchor must be -1, 0, or +1");
    }
    if (!std::isfinite(outcome_advantage[i])) {
      throw InvariantError("outcome advantage must be finite");
    }
    if (zero_variance && outcome_advantage[i] != 0.0) {
      throw InvariantError("zero-variance groups must have zero outcome advantages");
    }
    if (responses[i].empty()) {
      throw InvariantError("advantage response must carry at least one token");
    }
    for (const TokenAdvantage& t : responses[i]) {
      t.validate();
      if (zero_variance && t.outcome_adv != 0.0) {
        throw InvariantError("zero-variance groups must have zero token outcome advantages");
      }
    }
  }
}

// ===== rollout codec =====

RolloutGroup parse_rollout_group(const std::string& json_line) {
  json j = parse_json_line(json_line);
  if (!j.is_object()) throw ParseError("rollout record must be a JSON object");
  RolloutGroup group;
  group.prompt_id = require_string(j, "prompt_id");
  const json& responses = require_array(j, "responses");
  for (const json& jr : responses) {
    if (!jr.is_object()) throw ParseError("response must be a JSON object");
    ResponseRecord resp;
    resp.reward = require_number(jr, "reward");
    const json& tokens = require_array(jr, "tokens");
    for (const json& jt : tokens) {
      if (!jt.is_object()) throw ParseError("token must be a JSON object");
      TokenRecord tok;
      tok.token_id = require_int(jt, "id");
      tok.logp_cur = require_number(jt, "logp_cur");
      tok.logp_ref = require_number(jt, "logp_ref");
      tok.entropy = require_number(jt, "entropy");
      resp.tokens.push_back(tok);
    }
    group.responses.push_back(std::move(resp));
  }
  // A record that decodes but violates the contract is malformed input.
  try {
    group.validate();
  } catch (const InvariantError& e) {
    throw ParseError(e.what());
  }
  return group;
}

std::string serialize_rollout_group(const RolloutGroup& group) {
  json responses = json::array();
  for (const ResponseRecord& r : group.responses) {
    json tokens = json::array();
    for (const TokenRecord& t : r.tokens) {
      tokens.push_back({{"id", t.token_id},
                        {"logp_cur", t.logp_cur},
                        {"logp_ref", t.logp_ref},
                        {"entropy", t.entropy}});
    }
    responses.push_back({{"reward", r.reward}, {"tokens", std::move(tokens)}});
  }
  json j = {{"prompt_id", group.prompt_id}, {"responses", std::move(responses)}};
  return j.dump();
}

// ===== advantage codec =====

GroupAdvantages parse_group_advantages(const std::string& json_line) {
  json j = parse_json_line(json_line);
  if (!j.is_object()) throw ParseError("advantage record must be a JSON object");
  GroupAdvantages adv;
  adv.prompt_id = require_string(j, "prompt_id");
  adv.entropy_mean = require_number(j, "entropy_mean");
  adv.entropy_std = require_number(j, "entropy_std");
  adv.reward_mean = require_number(j, "reward_mean");
  adv.reward_std = require_number(j, "reward_std");
  adv.zero_variance = require_bool(j, "zero_variance");
  const json& responses = require_array(j, "responses");
  for (const json& jr : responses) {
    if (!jr.is_object()) throw ParseError("advantage response must be a JSON object");
    adv.outcome_advantage.push_back(require_number(jr, "outcome_advantage"));
    adv.anchor.push_back(require_int(jr, "anchor"));
    std::vector<TokenAdvantage> tokens;
    for (const json& jt : require_array(jr, "tokens")) {
      if (!jt.is_object()) throw ParseError("advantage token must be a JSON object");
      TokenAdvantage tok;
      tok.gate_weight = require_number(jt, "gate_weight");
      tok.implicit_signal = require_number(jt, "implicit_signal");
      tok.anchored_signal = require_number(jt, "anchored_signal");
      tok.progress = require_number(jt, "progress");
      tok.bucket = require_int(jt, "bucket");
      tok.normalized_signal = require_number(jt, "normalized_signal");
      tok.outcome_adv = require_number(jt, "outcome_adv");
      tok.progress_adv = require_number(jt, "progress_adv");
      tok.final_adv = require_number(jt, "final_adv");
      tokens.push_back(tok);
    }
    adv.responses.push_back(std::move(tokens));
  }
  // A record that decodes but violates the contract is malformed input.
  try {
    adv.validate();
  } catch (const InvariantError& e) {
    throw ParseError(e.what());
  }
  return adv;
}

std::string serialize_group_advantages(const GroupAdvantages& adv) {
  json responses = json::array();
  for (std::size_t i = 0; i < adv.responses.size(); ++i) {
    json tokens = json::array();
    for (const TokenAdvantage& t : adv.responses[i]) {
      tokens.push_back({{"gate_weight", t.gate_weight},
                        {"implicit_signal", t.implicit_signal},
                        {"anchored_signal", t.anchored_signal},
                        {"progress", t.progress},
                        {"bucket", t.bucket},
                        {"normalized_signal", t.normalized_signal},
                        {"outcome_adv", t.outcome_adv},
                        {"progress_adv", t.progress_adv},
                        {"final_adv", t.final_adv}});
    }
    responses.push_back({{"outcome_advantage", adv.outcome_advantage[i]},
                         {"anchor", adv.anchor[i]},
                         {"tokens", std::move(tokens)}});
  }
  json j = {{"prompt_id", adv.prompt_id},
            {"entropy_mean", adv.entropy_mean},
            {"entropy_std", adv.entropy_std},
            {"reward_mean", adv.reward_mean},
            {"reward_std", adv.reward_std},
            {"zero_variance", adv.zero_variance},
            {"responses", std::move(responses)}};
  return j.dump();
}

}  // namespace epgrpo
