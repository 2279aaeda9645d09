#include "epgrpo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "epgrpo/seeding.hpp"
#include "json.hpp"

namespace epgrpo {
namespace {

using nlohmann::json;

double standard_normal(std::mt19937_64& gen) {
  double u1 = 0.0;
  do {
    u1 = uniform_unit(gen);
  } while (u1 == 0.0);
  double u2 = uniform_unit(gen);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// log-prob and entropy of the adjusted distribution, with guards that keep
// the recorded values inside their invariant ranges against rounding.
double guarded_log(double p) {
  double lp = std::log(p);
  return lp > 0.0 ? 0.0 : lp;
}

double dist_entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h < 0.0 ? 0.0 : h;
}

}  // namespace

// ===== parameters =====

void PolicyConfig::validate() const {
  if (vocab_size < 3) throw ConfigError("vocab_size must be >= 3");
  if (context_order < 1) throw ConfigError("context_order must be >= 1");
}

void SamplingConfig::validate() const {
  if (!std::isfinite(temperature) || temperature < 0.0) {
    throw ConfigError("temperature must be finite and >= 0");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
}

PolicyParams PolicyParams::zeros(const PolicyConfig& config) {
  config.validate();
  PolicyParams p;
  p.config = config;
  p.weights.assign(config.param_count(), 0.0);
  p.opt.m.assign(config.param_count(), 0.0);
  p.opt.v.assign(config.param_count(), 0.0);
  return p;
}

PolicyParams PolicyParams::random_init(const PolicyConfig& config, std::uint64_t seed,
                                       double scale) {
  PolicyParams p = zeros(config);
  std::mt19937_64 gen(seed);
  for (double& w : p.weights) w = scale * standard_normal(gen);
  return p;
}

std::size_t PolicyParams::weight_index(int position, int context_token,
                                       int out_token) const {
  const int V = config.vocab_size;
  return (static_cast<std::size_t>(position) * V + context_token) * V + out_token;
}

ReferenceSnapshot freeze_reference(const PolicyParams& params) {
  return ReferenceSnapshot{params.config, params.weights};
}

// ===== distributions =====

std::vector<double> policy_logits(const PolicyConfig& config,
                                  std::span<const double> weights,
                                  std::span<const int> context) {
  const int V = config.vocab_size;
  if (context.size() != static_cast<std::size_t>(config.context_order)) {
    throw InvariantError("context window must have exactly context_order tokens");
  }
  std::vector<double> logits(V, 0.0);
  for (int p = 0; p < config.context_order; ++p) {
    int c = context[p];
    if (c < 0 || c >= V) throw InvariantError("context token outside the vocabulary");
    const double* row = weights.data() + (static_cast<std::size_t>(p) * V + c) * V;
    for (int v = 0; v < V; ++v) logits[v] += row[v];
  }
  return logits;
}

std::vector<double> softmax(std::span<const double> logits) {
  double max_logit = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - max_logit);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  double max_logit = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double x : logits) sum += std::exp(x - max_logit);
  double lse = max_logit + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::vector<double> adjusted_distribution(std::span<const double> logits,
                                          double temperature, double top_p) {
  const std::size_t V = logits.size();
  if (temperature == 0.0) {
    // Greedy limit: point mass on the argmax, lowest index winning ties.
    std::size_t best = 0;
    for (std::size_t v = 1; v < V; ++v) {
      if (logits[v] > logits[best]) best = v;
    }
    std::vector<double> out(V, 0.0);
    out[best] = 1.0;
    return out;
  }

  std::vector<double> scaled(V);
  for (std::size_t v = 0; v < V; ++v) scaled[v] = logits[v] / temperature;
  std::vector<double> probs = softmax(scaled);
  if (top_p >= 1.0) return probs;

  // Nucleus: order by probability descending (index ascending on ties), keep
  // the smallest prefix reaching top_p, renormalize over the kept set.
  std::vector<std::size_t> order(V);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return a < b;
  });
  std::vector<double> out(V, 0.0);
  double mass = 0.0;
  std::size_t kept = 0;
  for (std::size_t r = 0; r < V; ++r) {
    mass += probs[order[r]];
    kept = r + 1;
    if (mass >= top_p) break;
  }
  for (std::size_t r = 0; r < kept; ++r) {
    out[order[r]] = probs[order[r]] / mass;
  }
  return out;
}

std::vector<int> context_window(std::span<const int> prompt,
                                std::span<const int> generated, int order) {
  std::vector<int> window(order, kPadToken);
  const std::size_t total = prompt.size() + generated.size();
  for (int p = 0; p < order; ++p) {
    // Token at history position total - order + p, when it exists.
    std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(total) - order + p;
    if (idx < 0) continue;
    std::size_t u = static_cast<std::size_t>(idx);
    window[p] = u < prompt.size() ? prompt[u] : generated[u - prompt.size()];
  }
  return window;
}

// ===== rollout =====

ResponseRecord sample_response(const PolicyParams& params,
                               std::span<const int> prompt,
                               const SamplingConfig& sampling,
                               std::uint64_t seed) {
  params.config.validate();
  sampling.validate();
  std::mt19937_64 gen(seed);
  ResponseRecord response;
  std::vector<int> generated;
  for (int step = 0; step < sampling.max_len; ++step) {
    std::vector<int> ctx = context_window(prompt, generated, params.config.context_order);
    std::vector<double> logits = policy_logits(params.config, params.weights, ctx);
    std::vector<double> dist =
        adjusted_distribution(logits, sampling.temperature, sampling.top_p);

    double u = uniform_unit(gen);
    int token = -1;
    double cum = 0.0;
    for (std::size_t v = 0; v < dist.size(); ++v) {
      if (dist[v] <= 0.0) continue;
      cum += dist[v];
      token = static_cast<int>(v);
      if (u < cum) break;  // rounding shortfall at the tail keeps the last entry
    }

    TokenRecord record;
    record.token_id = token;
    record.logp_cur = guarded_log(dist[token]);
    record.logp_ref = 0.0;
    record.entropy = dist_entropy(dist);
    response.tokens.push_back(record);
    generated.push_back(token);
    if (token == kTerminatorToken) break;
  }
  return response;
}

void annotate_reference(ResponseRecord& response, const ReferenceSnapshot& ref,
                        std::span<const int> prompt) {
  std::vector<int> generated;
  for (TokenRecord& record : response.tokens) {
    std::vector<int> ctx = context_window(prompt, generated, ref.config.context_order);
    std::vector<double> logits = policy_logits(ref.config, ref.weights, ctx);
    std::vector<double> lsf = log_softmax(logits);
    record.logp_ref = lsf[record.token_id];
    generated.push_back(record.token_id);
  }
}

// ===== loss and gradient =====

LossResult accumulate_gradient(const PolicyParams& params,
                               std::span<const int> prompt,
                               const RolloutGroup& group,
                               const GroupAdvantages& adv,
                               const LossConfig& loss_config,
                               const SamplingConfig& sampling,
                               std::vector<double>* grad_reward,
                               std::vector<double>* grad_kl) {
  loss_config.validate();
  sampling.validate();
  if ((grad_reward || grad_kl) && sampling.temperature <= 0.0) {
    throw ConfigError("gradient accumulation requires a positive temperature");
  }
  const std::size_t n_tokens = group.total_tokens();
  const double inv_n = 1.0 / static_cast<double>(n_tokens);
  const int order = params.config.context_order;

  std::vector<std::vector<double>> ratios(group.responses.size());
  for (std::size_t i = 0; i < group.responses.size(); ++i) {
    const ResponseRecord& resp = group.responses[i];
    ratios[i].resize(resp.tokens.size());
    std::vector<int> generated;
    for (std::size_t t = 0; t < resp.tokens.size(); ++t) {
      const TokenRecord& stored = resp.tokens[t];
      std::vector<int> ctx = context_window(prompt, generated, order);
      std::vector<double> logits = policy_logits(params.config, params.weights, ctx);
      std::vector<double> dist =
          adjusted_distribution(logits, sampling.temperature, sampling.top_p);
      double cur_logp = guarded_log(dist[stored.token_id]);
      double ratio = std::exp(cur_logp - stored.logp_cur);
      ratios[i][t] = ratio;

      if (grad_reward || grad_kl) {
        double advantage = adv.responses[i][t].final_adv;
        // d min(r*A, clip(r)*A) / d logp: A*r while the unclipped branch is
        // active, 0 once the clip binds.
        bool active = advantage >= 0.0 ? ratio <= 1.0 + loss_config.clip_eps
                                       : ratio >= 1.0 - loss_config.clip_eps;
        double d_sur = active ? advantage * ratio : 0.0;
        // d k3 / d logp, zero in the clamped region of the log-ratio.
        double log_ratio_ref = stored.logp_ref - cur_logp;
        double d_kl = 0.0;
        if (log_ratio_ref > -30.0 && log_ratio_ref < 30.0) {
          d_kl = 1.0 - std::exp(log_ratio_ref);
        }
        double coef_reward = -inv_n * d_sur;
        double coef_kl = inv_n * loss_config.kl_beta * d_kl;
        for (int v = 0; v < params.config.vocab_size; ++v) {
          double score =
              ((v == stored.token_id ? 1.0 : 0.0) - dist[v]) / sampling.temperature;
          if (score == 0.0) continue;
          for (int p = 0; p < order; ++p) {
            std::size_t w = params.weight_index(p, ctx[p], v);
            if (grad_reward) (*grad_reward)[w] += coef_reward * score;
            if (grad_kl) (*grad_kl)[w] += coef_kl * score;
          }
        }
      }
      generated.push_back(stored.token_id);
    }
  }
  return assemble_loss(group, adv, ratios, loss_config);
}

void apply_update(PolicyParams& params, std::span<const double> gradient,
                  const UpdateConfig& update) {
  const std::size_t n = params.weights.size();
  if (gradient.size() != n) throw InvariantError("gradient size must match weights");
  if (update.kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < n; ++i) {
      params.weights[i] -= update.learning_rate * gradient[i];
    }
    params.opt.step += 1;
    return;
  }
  if (params.opt.m.size() != n) params.opt.m.assign(n, 0.0);
  if (params.opt.v.size() != n) params.opt.v.assign(n, 0.0);
  params.opt.step += 1;
  const double t = static_cast<double>(params.opt.step);
  const double bc1 = 1.0 - std::pow(update.beta1, t);
  const double bc2 = 1.0 - std::pow(update.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    double g = gradient[i];
    params.opt.m[i] = update.beta1 * params.opt.m[i] + (1.0 - update.beta1) * g;
    params.opt.v[i] = update.beta2 * params.opt.v[i] + (1.0 - update.beta2) * g * g;
    double mhat = params.opt.m[i] / bc1;
    double vhat = params.opt.v[i] / bc2;
    params.weights[i] -= update.learning_rate *
                         (mhat / (std::sqrt(vhat) + update.eps) +
                          update.weight_decay * params.weights[i]);
  }
}

// ===== checkpoints =====

std::string serialize_policy(const PolicyParams& params) {
  json j = {{"schema_version", 1},
            {"vocab_size", params.config.vocab_size},
            {"context_order", params.config.context_order},
            {"weights", params.weights},
            {"optimizer",
             {{"step", params.opt.step}, {"m", params.opt.m}, {"v", params.opt.v}}}};
  return j.dump();
}

PolicyParams parse_policy(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid policy checkpoint: ") + e.what());
  }
  if (!j.is_object() || !j.contains("schema_version")) {
    throw ParseError("policy checkpoint must be an object with schema_version");
  }
  if (j["schema_version"].get<int>() != 1) {
    throw ParseError("unsupported policy checkpoint schema_version");
  }
  PolicyConfig config;
  config.vocab_size = j.at("vocab_size").get<int>();
  config.context_order = j.at("context_order").get<int>();
  PolicyParams params = PolicyParams::zeros(config);
  params.weights = j.at("weights").get<std::vector<double>>();
  if (params.weights.size() != config.param_count()) {
    throw ParseError("policy checkpoint weight count does not match its shape");
  }
  if (j.contains("optimizer")) {
    const json& opt = j["optimizer"];
    params.opt.step = opt.at("step").get<std::int64_t>();
    params.opt.m = opt.at("m").get<std::vector<double>>();
    params.opt.v = opt.at("v").get<std::vector<double>>();
    if (params.opt.m.size() != params.weights.size() ||
        params.opt.v.size() != params.weights.size()) {
      throw ParseError("optimizer state size does not match the weights");
    }
  }
  return params;
}

void save_policy(const PolicyParams& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << serialize_policy(params) << "\n";
  if (!out) throw IoError("failed writing: " + path);
}

PolicyParams load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_policy(buf.str());
}

}  // namespace epgrpo
