// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "ragbench/corpus.hpp"
#include "ragbench/llm.hpp"

namespace ragbench {

inline const std::set<std::string>& known_slots() {
  static const std::set<std::string> slots{"tag", "tags", "authority", "date", "date_range", "document"};
  return slots;
}

/// A query-generation prompt. "{slot}" marks a required fillable value and
/// "<...>" marks an optional span that may itself contain slots.
struct PromptTemplate {
  std::string template_id;
  std::string text;

  struct Piece {
    enum Kind { Literal, Slot } kind;
    std::string value;  // literal text or slot name
    int optional = -1;  // index of the enclosing optional span, -1 if none
  };

  /// Validates the markers and splits the text into pieces. Markers must be
  /// balanced and non-nested; every slot must be a known name.
  std::vector<Piece> parse() const {
    std::vector<Piece> pieces;
    std::string lit;
    int optional = -1, optional_count = 0;
    auto flush = [&] {
      if (!lit.empty()) pieces.push_back({Piece::Literal, lit, optional});
      lit.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
      char c = text[i];
      if (c == '{') {
        auto close = text.find('}', i + 1);
        if (close == std::string::npos) throw Error(where() + "unbalanced '{'");
        std::string name = text.substr(i + 1, close - i - 1);
        if (name.find_first_of("{<>") != std::string::npos) throw Error(where() + "nested marker inside {}");
        if (!known_slots().count(name)) throw Error(where() + "unknown slot {" + name + "}");
        flush();
        pieces.push_back({Piece::Slot, name, optional});
        i = close;
      } else if (c == '}') {
        throw Error(where() + "unbalanced '}'");
      } else if (c == '<') {
        if (optional >= 0) throw Error(where() + "nested optional span");
        flush();
        optional = optional_count++;
      } else if (c == '>') {
        if (optional < 0) throw Error(where() + "unbalanced '>'");
        flush();
        optional = -1;
      } else {
        lit.push_back(c);
      }
    }
    if (optional >= 0) throw Error(where() + "unbalanced '<'");
    flush();
    return pieces;
  }

  std::set<std::string> slots() const {
    std::set<std::string> out;
    for (const auto& p : parse())
      if (p.kind == Piece::Slot) out.insert(p.value);
    return out;
  }

 private:
  std::string where() const { return "template '" + template_id + "': "; }
};

struct FilledPrompt {
  std::string template_id;
  std::string final_text;
  std::map<std::string, std::string> bindings;
  std::set<int> included_optionals;
};

/// Observed metadata values that slots are drawn from, each list sorted and
/// de-duplicated.
struct SlotValues {
  std::vector<std::string> tags;
  std::vector<std::string> authorities;
  std::vector<std::string> dates;
  std::vector<std::string> documents;

  static SlotValues from_corpus(const Corpus& corpus) {
    std::set<std::string> tags, auth, dates, docs;
    for (const auto& c : corpus.chunks()) {
      if (c.tags) tags.insert(c.tags->begin(), c.tags->end());
      if (!c.authority.empty()) auth.insert(c.authority);
      dates.insert(c.dates.begin(), c.dates.end());
      if (!c.document_name.empty()) docs.insert(c.document_name);
    }
    return {{tags.begin(), tags.end()}, {auth.begin(), auth.end()}, {dates.begin(), dates.end()}, {docs.begin(), docs.end()}};
  }

  const std::vector<std::string>& pool(const std::string& slot) const {
    if (slot == "tag" || slot == "tags") return tags;
    if (slot == "authority") return authorities;
    if (slot == "date" || slot == "date_range") return dates;
    return documents;
  }

  std::size_t minimum(const std::string& slot) const { return (slot == "tags" || slot == "date_range") ? 2 : 1; }
};

namespace detail {

inline std::string sample_slot(const std::string& slot, const SlotValues& values, SplitMix64& rng) {
  const auto& pool = values.pool(slot);
  if (slot == "tags" || slot == "date_range") {
    std::size_t a = rng.below(pool.size());
    std::size_t b = rng.below(pool.size() - 1);
    if (b >= a) ++b;
    if (slot == "tags") return pool[a] + " and " + pool[b];
    return pool[std::min(a, b)] + " to " + pool[std::max(a, b)];
  }
  return pool[rng.below(pool.size())];
}

}  // namespace detail

/// Renders a template from recorded bindings and optional-span choices.
/// Used both by fill_template and to re-derive a prompt from provenance.
inline std::string render_template(const PromptTemplate& t, const std::map<std::string, std::string>& bindings,
                                   const std::set<int>& included) {
  std::string out;
  for (const auto& p : t.parse()) {
    if (p.optional >= 0 && !included.count(p.optional)) continue;
    if (p.kind == PromptTemplate::Piece::Literal) {
      out += p.value;
    } else {
      auto it = bindings.find(p.value);
      if (it == bindings.end()) throw Error("no binding for slot {" + p.value + "}");
      out += it->second;
    }
  }
  return out;
}

/// Fills a template: each optional span is kept with probability 1/2 and
/// each slot is bound (once per slot name) to a uniformly drawn observed
/// value. Draws happen left to right from a SplitMix64 stream seeded with
/// `seed`, so the result is a pure function of its inputs.
inline FilledPrompt fill_template(const PromptTemplate& t, const SlotValues& values, std::uint64_t seed) {
  auto pieces = t.parse();
  for (const auto& slot : t.slots())
    if (values.pool(slot).size() < values.minimum(slot))
      throw Error("template '" + t.template_id + "': no observed values for slot {" + slot + "}");
  SplitMix64 rng(seed);
  FilledPrompt out{t.template_id, {}, {}, {}};
  int decided = -1;
  for (const auto& p : pieces) {
    if (p.optional > decided) {
      decided = p.optional;
      if (rng.coin()) out.included_optionals.insert(p.optional);
    }
    if (p.optional >= 0 && !out.included_optionals.count(p.optional)) continue;
    if (p.kind == PromptTemplate::Piece::Slot && !out.bindings.count(p.value))
      out.bindings[p.value] = detail::sample_slot(p.value, values, rng);
  }
  out.final_text = render_template(t, out.bindings, out.included_optionals);
  return out;
}

inline FilledPrompt fill_template(const PromptTemplate& t, const Corpus& corpus, std::uint64_t seed) {
  return fill_template(t, SlotValues::from_corpus(corpus), seed);
}

inline std::vector<PromptTemplate> load_templates(const std::string& path) {
  std::vector<PromptTemplate> out;
  jsonl::for_each(path, [&](const json& r, std::size_t line) {
    try {
      PromptTemplate t{require_string(r, "template_id"), require_string(r, "text")};
      t.parse();
      out.push_back(std::move(t));
    } catch (const RecordError&) {
      throw;
    } catch (const Error& e) {
      throw RecordError(path, line, e.what());
    }
  });
  return out;
}

inline constexpr const char* kQueryInstruction =
    "You write search questions for a library of AI policy documents. The user message is a topic prompt. "
    "Write exactly one well-formed question that a policy researcher could answer from the documents. "
    "Reply with the question only.";

struct GeneratedQuery {
  std::string query_id;
  std::string query;
  std::string template_id;
  std::map<std::string, std::string> bindings;
  std::set<int> included_optionals;
  std::string prompt;
  std::string raw_response;
  std::string split = "train";
};

inline json generated_query_to_json(const GeneratedQuery& q) {
  return {{"query_id", q.query_id},
          {"query", q.query},
          {"template_id", q.template_id},
          {"bindings", q.bindings},
          {"included_optionals", q.included_optionals},
          {"prompt", q.prompt},
          {"raw_response", q.raw_response},
          {"split", q.split}};
}

inline GeneratedQuery generated_query_from_json(const json& r) {
  GeneratedQuery q;
  q.query_id = require_string(r, "query_id");
  q.query = require_string(r, "query");
  q.template_id = r.value("template_id", std::string{});
  if (r.contains("bindings")) q.bindings = r["bindings"].get<std::map<std::string, std::string>>();
  if (r.contains("included_optionals")) q.included_optionals = r["included_optionals"].get<std::set<int>>();
  q.prompt = r.value("prompt", std::string{});
  q.raw_response = r.value("raw_response", std::string{});
  q.split = r.value("split", std::string("train"));
  return q;
}

inline std::vector<GeneratedQuery> load_queries(const std::string& path) {
  std::vector<GeneratedQuery> out;
  jsonl::for_each(path, [&](const json& r, std::size_t line) {
    try {
      out.push_back(generated_query_from_json(r));
    } catch (const Error& e) {
      throw RecordError(path, line, e.what());
    }
  });
  return out;
}

struct GenerationOutcome {
  std::vector<GeneratedQuery> queries;
  Warnings failures;
  std::size_t requested = 0;

  std::size_t shortfall() const { return requested - queries.size(); }
};

/// Produces n prompts round-robin over the templates (prompt i uses a seed
/// derived from (seed, i)), sends each to the LLM with a fixed instruction,
/// and records provenance. A fraction `test_fraction` of the queries is
/// assigned to the "test" split by a seeded draw. LLM failures are logged
/// and skipped.
inline GenerationOutcome generate_queries(const std::vector<PromptTemplate>& templates, const Corpus& corpus,
                                          ChatBackend& llm, std::size_t n, std::uint64_t seed,
                                          double test_fraction = 0.0, const GenerationConfig& cfg = {}) {
  if (n == 0) throw Error("generate_queries: n must be >= 1");
  if (templates.empty()) throw Error("generate_queries: no templates");
  auto values = SlotValues::from_corpus(corpus);
  GenerationOutcome out;
  out.requested = n;
  SplitMix64 split_rng(seed ^ 0x5bd1e995ULL);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = templates[i % templates.size()];
    auto filled = fill_template(t, values, seed * 1000003ULL + i);
    bool test = split_rng.uniform() < test_fraction;
    char id[32];
    std::snprintf(id, sizeof id, "q%05zu", i);
    try {
      auto ex = llm.chat({{"system", kQueryInstruction}, {"user", filled.final_text}}, cfg);
      GeneratedQuery q{id, trim(ex.response_text), t.template_id, filled.bindings, filled.included_optionals,
                       filled.final_text, ex.response_text, test ? "test" : "train"};
      if (q.query.empty()) throw Error("empty LLM response");
      out.queries.push_back(std::move(q));
    } catch (const Error& e) {
      out.failures.push_back(std::string(id) + ": " + e.what());
    }
  }
  return out;
}

/// Keeps queries whose decision is keep (or missing, with a warning), in
/// their original order. Decisions file records: {query_id, keep: bool}.
inline std::vector<GeneratedQuery> screen_queries(const std::vector<GeneratedQuery>& queries,
                                                  const std::map<std::string, bool>& decisions,
                                                  Warnings* warnings = nullptr) {
  std::set<std::string> ids;
  for (const auto& q : queries) ids.insert(q.query_id);
  for (const auto& [id, keep] : decisions)
    if (!ids.count(id)) throw Error("decision references unknown query id: " + id);
  std::vector<GeneratedQuery> kept;
  for (const auto& q : queries) {
    auto it = decisions.find(q.query_id);
    if (it == decisions.end()) {
      if (warnings) warnings->push_back("no decision for " + q.query_id + "; keeping");
      kept.push_back(q);
    } else if (it->second) {
      kept.push_back(q);
    }
  }
  return kept;
}

inline std::map<std::string, bool> load_decisions(const std::string& path) {
  std::map<std::string, bool> out;
  jsonl::for_each(path, [&](const json& r, std::size_t line) {
    auto id = require_string(r, "query_id");
    if (!r.contains("keep") || !r["keep"].is_boolean()) throw RecordError(path, line, "field 'keep' must be a boolean");
    out[id] = r["keep"].get<bool>();
  });
  return out;
}

}  // namespace ragbench
