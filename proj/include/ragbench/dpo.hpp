// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ragbench/encoder.hpp"  // tokenize

namespace ragbench {

struct PreferencePair {
  std::string prompt;
  std::string chosen;
  std::string rejected;
  std::string annotator_id;
  std::string created_at;

  void validate() const {
    if (trim(prompt).empty()) throw Error("preference pair: empty prompt");
    if (chosen == rejected) throw Error("preference pair: chosen equals rejected");
  }
};

inline PreferencePair preference_from_json(const json& r) {
  PreferencePair p{require_string(r, "prompt"), require_string(r, "chosen"), require_string(r, "rejected"),
                   r.value("annotator_id", std::string{}), r.value("created_at", std::string{})};
  p.validate();
  return p;
}

inline json preference_to_json(const PreferencePair& p) {
  json j = {{"prompt", p.prompt}, {"chosen", p.chosen}, {"rejected", p.rejected}, {"created_at", p.created_at}};
  if (!p.annotator_id.empty()) j["annotator_id"] = p.annotator_id;
  return j;
}

inline std::vector<PreferencePair> load_preferences(const std::string& path) {
  std::vector<PreferencePair> out;
  jsonl::for_each(path, [&](const json& r, std::size_t line) {
    try {
      out.push_back(preference_from_json(r));
    } catch (const Error& e) {
      throw RecordError(path, line, e.what());
    }
  });
  return out;
}

/// Log-linear bigram policy. Row c of the table holds next-token logits
/// given previous token c; the extra last row is the start context used
/// when the prompt has no tokens.
class PolicyParams {
 public:
  PolicyParams() = default;

  /// Vocabulary closed over every token of the given pairs; logits zero.
  static PolicyParams from_pairs(const std::vector<PreferencePair>& pairs) {
    PolicyParams p;
    for (const auto& pair : pairs)
      for (const auto* s : {&pair.prompt, &pair.chosen, &pair.rejected})
        for (auto& t : tokenize(*s)) p.add_token(t);
    p.logits_.assign(p.contexts() * p.vocab_size(), 0.0);
    return p;
  }

  static PolicyParams from_vocab(const std::vector<std::string>& vocab) {
    PolicyParams p;
    for (const auto& t : vocab) p.add_token(t);
    p.logits_.assign(p.contexts() * p.vocab_size(), 0.0);
    return p;
  }

  std::size_t vocab_size() const { return words_.size(); }
  std::size_t contexts() const { return words_.size() + 1; }
  std::size_t start_context() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  std::size_t id(const std::string& token) const {
    auto it = vocab_.find(token);
    if (it == vocab_.end()) throw Error("token outside policy vocabulary: '" + token + "'");
    return it->second;
  }
  bool has(const std::string& token) const { return vocab_.count(token) != 0; }

  double& logit(std::size_t ctx, std::size_t tok) { return logits_[ctx * vocab_size() + tok]; }
  double logit(std::size_t ctx, std::size_t tok) const { return logits_[ctx * vocab_size() + tok]; }
  std::vector<double>& table() { return logits_; }
  const std::vector<double>& table() const { return logits_; }

  bool finite() const {
    return std::all_of(logits_.begin(), logits_.end(), [](double v) { return std::isfinite(v); });
  }
  bool same_vocab(const PolicyParams& o) const { return words_ == o.words_; }

 private:
  void add_token(const std::string& t) {
    if (vocab_.emplace(t, words_.size()).second) words_.push_back(t);
  }

  std::unordered_map<std::string, std::size_t> vocab_;
  std::vector<std::string> words_;
  std::vector<double> logits_;
};

/// (context, token) pairs a completion visits, in order.
inline std::vector<std::pair<std::size_t, std::size_t>> completion_path(const PolicyParams& params,
                                                                       const std::string& prompt,
                                                                       const std::string& completion) {
  auto ctoks = tokenize(completion);
  if (ctoks.empty()) throw Error("sequence_logprob: completion has no tokens");
  auto ptoks = tokenize(prompt);
  std::size_t ctx = ptoks.empty() ? params.start_context() : params.id(ptoks.back());
  std::vector<std::pair<std::size_t, std::size_t>> path;
  path.reserve(ctoks.size());
  for (const auto& t : ctoks) {
    std::size_t tok = params.id(t);
    path.emplace_back(ctx, tok);
    ctx = tok;
  }
  return path;
}

inline double log_softmax_at(const double* row, std::size_t n, std::size_t k) {
  double mx = *std::max_element(row, row + n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(row[i] - mx);
  return row[k] - mx - std::log(s);
}

/// log pi(completion | prompt): sum of bigram log-softmax terms. The last
/// prompt token conditions the first completion token.
inline double sequence_logprob(const PolicyParams& params, const std::string& prompt, const std::string& completion) {
  double lp = 0.0;
  const std::size_t v = params.vocab_size();
  for (auto [ctx, tok] : completion_path(params, prompt, completion))
    lp += log_softmax_at(params.table().data() + ctx * v, v, tok);
  return lp;
}

/// Adds scale * d logpi(completion|prompt) / d table into grad.
inline void accumulate_logprob_grad(const PolicyParams& params, const std::string& prompt, const std::string& completion,
                                    double scale, std::vector<double>& grad) {
  const std::size_t v = params.vocab_size();
  std::vector<double> probs(v);
  for (auto [ctx, tok] : completion_path(params, prompt, completion)) {
    const double* row = params.table().data() + ctx * v;
    double mx = *std::max_element(row, row + v);
    double s = 0.0;
    for (std::size_t i = 0; i < v; ++i) s += (probs[i] = std::exp(row[i] - mx));
    double* g = grad.data() + ctx * v;
    for (std::size_t i = 0; i < v; ++i) g[i] -= scale * probs[i] / s;
    g[tok] += scale;
  }
}

/// The bracketed DPO margin h: policy log-ratio of chosen over rejected,
/// minus the same quantity under the reference.
inline double preference_logit(const PreferencePair& pair, const PolicyParams& theta, const PolicyParams& ref) {
  if (!theta.same_vocab(ref)) throw Error("policy and reference vocabularies differ");
  double h = (sequence_logprob(theta, pair.prompt, pair.chosen) - sequence_logprob(theta, pair.prompt, pair.rejected)) -
             (sequence_logprob(ref, pair.prompt, pair.chosen) - sequence_logprob(ref, pair.prompt, pair.rejected));
  if (!std::isfinite(h)) throw Error("non-finite log-probabilities");
  return h;
}

/// beta * h, the implicit reward margin.
inline double implicit_reward_margin(const PreferencePair& pair, const PolicyParams& theta, const PolicyParams& ref,
                                     double beta) {
  if (beta < 0) throw Error("beta must be >= 0");
  return beta * preference_logit(pair, theta, ref);
}

/// -log sigmoid(beta * h), as softplus(-beta * h).
inline double dpo_loss(const PreferencePair& pair, const PolicyParams& theta, const PolicyParams& ref, double beta) {
  return softplus(-implicit_reward_margin(pair, theta, ref, beta));
}

/// Adds scale * d dpo_loss / d theta into grad; returns (loss, margin).
inline std::pair<double, double> accumulate_dpo_grad(const PreferencePair& pair, const PolicyParams& theta,
                                                     const PolicyParams& ref, double beta, double scale,
                                                     std::vector<double>& grad) {
  double m = implicit_reward_margin(pair, theta, ref, beta);
  // dL/dh = -beta * sigmoid(-beta h)
  double c = -beta * sigmoid(-m) * scale;
  if (c != 0.0) {
    accumulate_logprob_grad(theta, pair.prompt, pair.chosen, c, grad);
    accumulate_logprob_grad(theta, pair.prompt, pair.rejected, -c, grad);
  }
  return {softplus(-m), m};
}

struct DpoConfig {
  double beta = 0.1;
  double lr = 0.05;
  std::size_t epochs = 1;
  std::size_t batch_size = 2;
  std::size_t grad_accum_steps = 8;
  std::uint64_t seed = 0;

  static constexpr double kFullScaleLr = 5e-6;
  static constexpr double kDeskLr = 0.05;

  std::size_t effective_batch() const { return batch_size * grad_accum_steps; }

  void validate() const {
    if (beta < 0) throw Error("beta must be >= 0");
    if (!(lr > 0)) throw Error("lr must be > 0");
    if (batch_size == 0 || grad_accum_steps == 0) throw Error("batch_size and grad_accum_steps must be >= 1");
  }
};

struct DpoUpdateLog {
  std::size_t update = 0;
  std::size_t pairs = 0;
  double mean_loss = 0.0;    // before the update
  double mean_margin = 0.0;  // before the update

  bool operator==(const DpoUpdateLog&) const = default;
};

struct DpoEpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double mean_margin = 0.0;
  std::size_t updates = 0;

  bool operator==(const DpoEpochLog&) const = default;
};

struct DpoLog {
  std::vector<DpoEpochLog> epochs;
  std::vector<DpoUpdateLog> updates;

  bool operator==(const DpoLog&) const = default;
};

inline json dpo_log_to_json(const DpoLog& log) {
  json ep = json::array();
  for (const auto& e : log.epochs)
    ep.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"mean_margin", e.mean_margin}, {"updates", e.updates}});
  return {{"epochs", ep}, {"total_updates", log.updates.size()}};
}

struct DpoResult {
  PolicyParams params;
  PolicyParams reference;
  DpoLog log;
};

/// DPO with plain gradient descent. Micro-batches of batch_size pairs are
/// accumulated for grad_accum_steps before each update; a partial window at
/// the end of an epoch is flushed as its own update. The reference is a
/// frozen copy of the starting parameters.
inline DpoResult train_dpo(const std::vector<PreferencePair>& pairs, const DpoConfig& cfg,
                           std::optional<PolicyParams> initial = std::nullopt) {
  cfg.validate();
  if (pairs.empty()) throw Error("train_dpo: no preference pairs");
  for (const auto& p : pairs) p.validate();
  PolicyParams theta = initial ? std::move(*initial) : PolicyParams::from_pairs(pairs);
  DpoResult out{theta, theta, {}};
  const std::size_t window = cfg.effective_batch();

  std::vector<std::size_t> order(pairs.size());
  std::vector<double> grad(out.params.table().size());
  std::size_t update_no = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    seeded_shuffle(order, cfg.seed * 0x9e3779b97f4a7c15ULL + e);
    DpoEpochLog ep{e + 1, 0.0, 0.0, 0};
    for (std::size_t start = 0; start < order.size(); start += window) {
      std::size_t end = std::min(order.size(), start + window);
      std::fill(grad.begin(), grad.end(), 0.0);
      double n = static_cast<double>(end - start);
      double loss = 0.0, margin = 0.0;
      // micro-batches of batch_size; the accumulated gradient is the mean over the window
      for (std::size_t mb = start; mb < end; mb += cfg.batch_size)
        for (std::size_t i = mb; i < std::min(end, mb + cfg.batch_size); ++i) {
          auto [l, m] = accumulate_dpo_grad(pairs[order[i]], out.params, out.reference, cfg.beta, 1.0 / n, grad);
          loss += l;
          margin += m;
        }
      for (double g : grad)
        if (!std::isfinite(g)) throw Error("train_dpo: non-finite gradient at update " + std::to_string(update_no + 1));
      auto& tbl = out.params.table();
      for (std::size_t i = 0; i < tbl.size(); ++i) tbl[i] -= cfg.lr * grad[i];
      ++update_no;
      out.log.updates.push_back({update_no, end - start, loss / n, margin / n});
      ep.mean_loss += loss;
      ep.mean_margin += margin;
      ++ep.updates;
    }
    ep.mean_loss /= static_cast<double>(pairs.size());
    ep.mean_margin /= static_cast<double>(pairs.size());
    out.log.epochs.push_back(ep);
  }
  return out;
}

// Policy persistence: {"vocab": [...], "logits": [[...], ...]} (one row per context).
inline json policy_to_json(const PolicyParams& p) {
  json rows = json::array();
  for (std::size_t c = 0; c < p.contexts(); ++c) {
    json row = json::array();
    for (std::size_t t = 0; t < p.vocab_size(); ++t) row.push_back(p.logit(c, t));
    rows.push_back(std::move(row));
  }
  return {{"vocab", p.words()}, {"logits", rows}};
}

inline PolicyParams policy_from_json(const json& j) {
  auto p = PolicyParams::from_vocab(j.at("vocab").get<std::vector<std::string>>());
  const auto& rows = j.at("logits");
  if (rows.size() != p.contexts()) throw Error("policy file: wrong number of logit rows");
  for (std::size_t c = 0; c < p.contexts(); ++c) {
    if (rows[c].size() != p.vocab_size()) throw Error("policy file: wrong logit row width");
    for (std::size_t t = 0; t < p.vocab_size(); ++t) p.logit(c, t) = rows[c][t].get<double>();
  }
  if (!p.finite()) throw Error("policy file: non-finite logits");
  return p;
}

}  // namespace ragbench
