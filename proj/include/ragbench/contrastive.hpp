// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "ragbench/corpus.hpp"
#include "ragbench/encoder.hpp"
#include "ragbench/retriever.hpp"

namespace ragbench {

struct LabeledQuery {
  std::string query_id;
  std::string query;
  std::vector<std::string> positives;  // insertion ordered, unique
  std::vector<std::string> negatives;
};

struct TrainingTriple {
  std::string query;
  std::string positive;
  std::string negative;

  bool operator==(const TrainingTriple&) const = default;
};

enum class NegativeSource { Labeled, Mined, Mixed };

struct NegativeStrategy {
  NegativeSource source = NegativeSource::Labeled;
  std::size_t mined_count = 8;

  bool mines() const { return source != NegativeSource::Labeled; }

  static NegativeSource parse(std::string_view name) {
    if (name == "labeled") return NegativeSource::Labeled;
    if (name == "mined") return NegativeSource::Mined;
    if (name == "mixed") return NegativeSource::Mixed;
    throw Error("unknown negative strategy: " + std::string(name));
  }
};

struct ContrastiveConfig {
  double tau = 1.0;
  double lr = 1e-3;
  std::size_t epochs = 1;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  NegativeStrategy strategy;

  void validate() const {
    if (!(tau > 0)) throw Error("tau must be > 0");
    if (!(lr >= 0)) throw Error("lr must be >= 0");
    if (batch_size == 0) throw Error("batch_size must be >= 1");
    if (strategy.mines() && strategy.mined_count == 0) throw Error("mined_count must be >= 1 when mining");
  }
};

namespace detail {
inline void push_unique(std::vector<std::string>& v, const std::string& s) {
  if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
}
}  // namespace detail

inline LabeledQuery labeled_query_from_json(const json& rec) {
  LabeledQuery q;
  q.query_id = rec.value("query_id", std::string{});
  q.query = require_string(rec, "query");
  for (const auto& p : string_list(rec, "positives")) detail::push_unique(q.positives, p);
  for (const auto& n : string_list(rec, "negatives")) detail::push_unique(q.negatives, n);
  for (const auto& p : q.positives)
    if (std::find(q.negatives.begin(), q.negatives.end(), p) != q.negatives.end())
      throw Error("chunk '" + p + "' is labeled both positive and negative");
  return q;
}

inline json labeled_query_to_json(const LabeledQuery& q) {
  json j = {{"query", q.query}, {"positives", q.positives}, {"negatives", q.negatives}};
  if (!q.query_id.empty()) j["query_id"] = q.query_id;
  return j;
}

inline std::vector<LabeledQuery> load_labeled_queries(const std::string& path) {
  std::vector<LabeledQuery> out;
  jsonl::for_each(path, [&](const json& r, std::size_t line) {
    try {
      out.push_back(labeled_query_from_json(r));
    } catch (const Error& e) {
      throw RecordError(path, line, e.what());
    }
  });
  return out;
}

inline json triple_to_json(const TrainingTriple& t) {
  return {{"query", t.query}, {"positive", t.positive}, {"negative", t.negative}};
}

/// Hard negatives: the top (M + |positives|) results for the query, minus
/// the labeled positives, truncated to M.
inline std::vector<std::string> mine_negatives(const std::string& query, const std::vector<std::string>& positives,
                                               const LateInteractionIndex& index, std::size_t mined_count) {
  if (mined_count == 0) throw Error("mine_negatives: M must be >= 1");
  auto ranked = search(index, query, mined_count + positives.size());
  std::set<std::string> pos(positives.begin(), positives.end());
  std::vector<std::string> out;
  for (const auto& h : ranked.hits) {
    if (out.size() == mined_count) break;
    if (!pos.count(h.chunk_id)) out.push_back(h.chunk_id);
  }
  return out;
}

struct TripleExpansion {
  std::vector<TrainingTriple> triples;
  Warnings warnings;  // one per skipped query
};

/// Expands every labeled query into all (positive, negative) pairs. The
/// negative set comes from the labels, from mining, or from their union,
/// depending on the strategy. Queries with no positives or no usable
/// negatives are skipped with a warning.
inline TripleExpansion expand_triples(const std::vector<LabeledQuery>& labeled, const NegativeStrategy& strategy,
                                      const LateInteractionIndex* index = nullptr) {
  if (strategy.mines() && !index) throw Error("expand_triples: mining strategy requires an index");
  TripleExpansion out;
  for (const auto& q : labeled) {
    if (q.positives.empty()) {
      out.warnings.push_back("query skipped (no positives): " + q.query);
      continue;
    }
    std::vector<std::string> negatives;
    if (strategy.source != NegativeSource::Mined) negatives = q.negatives;
    if (strategy.mines())
      for (const auto& n : mine_negatives(q.query, q.positives, *index, strategy.mined_count))
        detail::push_unique(negatives, n);
    if (negatives.empty()) {
      out.warnings.push_back("query skipped (no usable negatives): " + q.query);
      continue;
    }
    for (const auto& p : q.positives)
      for (const auto& n : negatives) out.triples.push_back({q.query, p, n});
  }
  return out;
}

/// Binary InfoNCE with temperature: -log(e^{s+/tau} / (e^{s+/tau} + e^{s-/tau})),
/// evaluated as softplus((s- - s+)/tau).
inline double infonce_loss(double s_pos, double s_neg, double tau) {
  if (!(tau > 0)) throw Error("infonce_loss: tau must be > 0");
  if (!std::isfinite(s_pos) || !std::isfinite(s_neg) || !std::isfinite(tau))
    throw Error("infonce_loss: non-finite input");
  return softplus((s_neg - s_pos) / tau);
}

/// Loss of one triple under `params`, recomputed from scratch.
inline double triple_loss(const EncoderParams& params, const std::string& query, const std::string& pos_text,
                          const std::string& neg_text, double tau) {
  auto q = embed(query, params);
  return infonce_loss(maxsim(q, embed(pos_text, params)), maxsim(q, embed(neg_text, params)), tau);
}

/// A triple with its passages already resolved to text.
struct ResolvedTriple {
  const std::string* query;
  const std::string* positive;
  const std::string* negative;
};

/// Mean InfoNCE loss over a batch and its gradient with respect to the
/// projection (same layout). Each distinct text is embedded once.
inline double batch_loss_and_grad(const EncoderParams& params, const std::vector<ResolvedTriple>& batch, double tau,
                                  std::vector<double>& grad) {
  grad.assign(params.projection.size(), 0.0);
  if (batch.empty()) throw Error("empty batch");
  std::unordered_map<std::string_view, std::size_t> slot;
  std::vector<EmbeddingTrace> traces;
  std::vector<TokenEmbeddingMatrix> row_grads;
  auto trace_of = [&](const std::string& text) {
    auto [it, inserted] = slot.try_emplace(text, traces.size());
    if (inserted) {
      traces.push_back(embed_traced(text, params));
      TokenEmbeddingMatrix g;
      g.dim = params.out_dim;
      g.values.assign(traces.back().matrix.values.size(), 0.0);
      row_grads.push_back(std::move(g));
    }
    return it->second;
  };

  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  std::vector<std::size_t> win_pos, win_neg;
  for (const auto& t : batch) {
    std::size_t qi = trace_of(*t.query), pi = trace_of(*t.positive), ni = trace_of(*t.negative);
    const auto& q = traces[qi].matrix;
    const auto& p = traces[pi].matrix;
    const auto& n = traces[ni].matrix;
    double s_pos = maxsim_argmax(q, p, win_pos);
    double s_neg = maxsim_argmax(q, n, win_neg);
    double x = (s_neg - s_pos) / tau;
    total += softplus(x);
    double c = sigmoid(x) / tau * inv_n;  // dL/ds_neg; dL/ds_pos = -c
    auto spread = [&](std::size_t passage, const std::vector<std::size_t>& winners, double coef) {
      const auto& pm = traces[passage].matrix;
      for (std::size_t r = 0; r < q.rows(); ++r) {
        auto u = q.row(r);
        auto v = pm.row(winners[r]);
        auto gq = row_grads[qi].row(r);
        auto gp = row_grads[passage].row(winners[r]);
        for (std::size_t j = 0; j < q.dim; ++j) {
          gq[j] += coef * v[j];
          gp[j] += coef * u[j];
        }
      }
    };
    spread(pi, win_pos, -c);
    spread(ni, win_neg, c);
  }
  for (std::size_t i = 0; i < traces.size(); ++i) backprop_embedding(traces[i], row_grads[i], grad, params.out_dim);
  return total * inv_n;
}

struct StepResult {
  EncoderParams params;
  double mean_loss = 0.0;
};

/// One gradient-descent step on the mean batch loss. Passages are rendered
/// from the corpus and embedded with the current parameters.
inline StepResult train_step(const EncoderParams& params, const std::vector<TrainingTriple>& batch,
                             const Corpus& corpus, const ContrastiveConfig& cfg) {
  if (batch.empty()) throw Error("train_step: empty batch");
  std::unordered_map<std::string, std::string> rendered;
  auto text_of = [&](const std::string& id) -> const std::string& {
    auto it = rendered.find(id);
    if (it == rendered.end()) it = rendered.emplace(id, render_chunk(corpus.at(id))).first;
    return it->second;
  };
  std::vector<ResolvedTriple> resolved;
  resolved.reserve(batch.size());
  for (const auto& t : batch) text_of(t.positive), text_of(t.negative);
  for (const auto& t : batch) resolved.push_back({&t.query, &rendered.at(t.positive), &rendered.at(t.negative)});

  std::vector<double> grad;
  double loss = batch_loss_and_grad(params, resolved, cfg.tau, grad);
  for (double g : grad)
    if (!std::isfinite(g)) throw Error("train_step: non-finite gradient (loss=" + std::to_string(loss) + ")");
  StepResult out{params, loss};
  if (cfg.lr != 0.0)
    for (std::size_t i = 0; i < grad.size(); ++i) out.params.projection[i] -= cfg.lr * grad[i];
  return out;
}

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::size_t triples = 0;
  std::size_t steps = 0;

  bool operator==(const EpochLog&) const = default;
};

struct TrainingLog {
  std::size_t triple_count = 0;
  std::vector<EpochLog> epochs;
  Warnings warnings;

  bool operator==(const TrainingLog&) const = default;
};

inline json training_log_to_json(const TrainingLog& log) {
  json ep = json::array();
  for (const auto& e : log.epochs)
    ep.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"triples", e.triples}, {"steps", e.steps}});
  return {{"triple_count", log.triple_count}, {"epochs", ep}, {"warnings", log.warnings}};
}

struct ContrastiveResult {
  EncoderParams params;
  TrainingLog log;
  std::vector<TrainingTriple> triples;
};

/// Full training run. Mining (when enabled) uses an index built once with
/// the initial parameters. Each epoch shuffles the triples with a seed
/// derived from (cfg.seed, epoch) and walks them in batches.
inline ContrastiveResult train_contrastive(const std::vector<LabeledQuery>& labeled, const Corpus& corpus,
                                           const ContrastiveConfig& cfg, EncoderParams initial) {
  cfg.validate();
  ContrastiveResult out{std::move(initial), {}, {}};
  std::optional<LateInteractionIndex> index;
  if (cfg.strategy.mines()) index = build_index(corpus, out.params);
  auto expansion = expand_triples(labeled, cfg.strategy, index ? &*index : nullptr);
  out.log.warnings = std::move(expansion.warnings);
  out.triples = std::move(expansion.triples);
  out.log.triple_count = out.triples.size();
  if (out.triples.empty()) throw Error("no training triples after expansion");
  for (const auto& t : out.triples) corpus.at(t.positive), corpus.at(t.negative);

  std::vector<std::size_t> order(out.triples.size());
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    seeded_shuffle(order, cfg.seed * 0x9e3779b97f4a7c15ULL + e);
    EpochLog ep{e + 1, 0.0, order.size(), 0};
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<TrainingTriple> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
        batch.push_back(out.triples[order[i]]);
      auto step = train_step(out.params, batch, corpus, cfg);
      loss_sum += step.mean_loss * static_cast<double>(batch.size());
      out.params = std::move(step.params);
      ++ep.steps;
    }
    ep.mean_loss = loss_sum / static_cast<double>(order.size());
    out.log.epochs.push_back(ep);
  }
  if (!out.params.finite()) throw Error("training produced non-finite parameters");
  return out;
}

}  // namespace ragbench
