// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "ragbench/encoder.hpp"  // tokenize
#include "ragbench/llm.hpp"

namespace ragbench {

// query_id -> relevant chunk ids
using Qrels = std::map<std::string, std::set<std::string>>;
// query_id -> ranked chunk ids
using RetrievalRun = std::map<std::string, std::vector<std::string>>;

inline Qrels load_qrels(const std::string& path) {
  Qrels q;
  jsonl::for_each(path, [&](const json& r, std::size_t line) {
    try {
      auto id = require_string(r, "query_id");
      auto rel = string_list(r, "relevant");
      if (rel.empty()) throw Error("query '" + id + "' has no relevant chunks");
      if (!q.emplace(id, std::set<std::string>(rel.begin(), rel.end())).second)
        throw Error("duplicate query_id '" + id + "'");
    } catch (const RecordError&) {
      throw;
    } catch (const Error& e) {
      throw RecordError(path, line, e.what());
    }
  });
  return q;
}

inline RetrievalRun load_run(const std::string& path) {
  RetrievalRun run;
  jsonl::for_each(path, [&](const json& r, std::size_t line) {
    try {
      auto id = require_string(r, "query_id");
      if (!run.emplace(id, string_list(r, "ranking")).second) throw Error("duplicate query_id '" + id + "'");
    } catch (const RecordError&) {
      throw;
    } catch (const Error& e) {
      throw RecordError(path, line, e.what());
    }
  });
  return run;
}

namespace metrics {

inline double reciprocal_rank(const std::vector<std::string>& ranking, const std::set<std::string>& relevant) {
  for (std::size_t i = 0; i < ranking.size(); ++i)
    if (relevant.count(ranking[i])) return 1.0 / static_cast<double>(i + 1);
  return 0.0;
}

inline double recall_at(const std::vector<std::string>& ranking, const std::set<std::string>& relevant, std::size_t k) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranking.size() && i < k; ++i) hits += relevant.count(ranking[i]);
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

// AP@k normalized by min(|relevant|, k).
inline double average_precision_at(const std::vector<std::string>& ranking, const std::set<std::string>& relevant,
                                   std::size_t k) {
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranking.size() && i < k; ++i) {
    if (relevant.count(ranking[i])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(std::min(relevant.size(), k));
}

}  // namespace metrics

namespace detail {

// Pairs every evaluated query with its ranking. Queries in qrels but not
// in the run get an empty ranking and score 0.
template <typename Fn>
double mean_over_queries(const RetrievalRun& run, const Qrels& qrels, Fn&& per_query) {
  for (const auto& [qid, ranking] : run) {
    auto it = qrels.find(qid);
    if (it == qrels.end()) throw Error("query missing from qrels: " + qid);
    if (it->second.empty()) throw Error("query has no relevant chunks: " + qid);
    std::set<std::string> seen;
    for (const auto& id : ranking)
      if (!seen.insert(id).second) throw Error("duplicate chunk '" + id + "' in ranking for " + qid);
  }
  if (qrels.empty()) throw Error("qrels are empty");
  static const std::vector<std::string> none;
  double sum = 0.0;
  for (const auto& [qid, rel] : qrels) {
    if (rel.empty()) throw Error("query has no relevant chunks: " + qid);
    auto it = run.find(qid);
    sum += per_query(it == run.end() ? none : it->second, rel);
  }
  return sum / static_cast<double>(qrels.size());
}

}  // namespace detail

inline double mrr(const RetrievalRun& run, const Qrels& qrels) {
  return detail::mean_over_queries(run, qrels, metrics::reciprocal_rank);
}

inline double recall_at_k(const RetrievalRun& run, const Qrels& qrels, std::size_t k) {
  if (k == 0) throw Error("recall@k: k must be >= 1");
  return detail::mean_over_queries(run, qrels, [k](const auto& r, const auto& rel) { return metrics::recall_at(r, rel, k); });
}

inline double map_at_k(const RetrievalRun& run, const Qrels& qrels, std::size_t k) {
  if (k == 0) throw Error("MAP@k: k must be >= 1");
  return detail::mean_over_queries(run, qrels,
                                   [k](const auto& r, const auto& rel) { return metrics::average_precision_at(r, rel, k); });
}

struct QueryScores {
  std::string query_id;
  double reciprocal_rank = 0.0;
  std::map<std::size_t, double> recall_at;
  std::map<std::size_t, double> ap_at;
};

struct EvalReport {
  double mrr = 0.0;
  std::map<std::size_t, double> recall_at;
  std::map<std::size_t, double> map_at;
  std::vector<QueryScores> per_query;
  std::optional<double> faithfulness;
  std::optional<double> relevancy;
  std::optional<double> accuracy;
};

inline EvalReport evaluate_run(const RetrievalRun& run, const Qrels& qrels, const std::vector<std::size_t>& ks) {
  EvalReport rep;
  rep.mrr = mrr(run, qrels);
  for (auto k : ks) {
    rep.recall_at[k] = recall_at_k(run, qrels, k);
    rep.map_at[k] = map_at_k(run, qrels, k);
  }
  static const std::vector<std::string> none;
  for (const auto& [qid, rel] : qrels) {
    auto it = run.find(qid);
    const auto& ranking = it == run.end() ? none : it->second;
    QueryScores qs{qid, metrics::reciprocal_rank(ranking, rel), {}, {}};
    for (auto k : ks) {
      qs.recall_at[k] = metrics::recall_at(ranking, rel, k);
      qs.ap_at[k] = metrics::average_precision_at(ranking, rel, k);
    }
    rep.per_query.push_back(std::move(qs));
  }
  return rep;
}

/// Report columns: MRR, Recall@k..., MAP@k..., then generation metrics
/// when present.
inline json report_to_json(const EvalReport& r, bool with_per_query = false) {
  json j = json::object();
  j["MRR"] = r.mrr;
  for (auto& [k, v] : r.recall_at) j["Recall@" + std::to_string(k)] = v;
  for (auto& [k, v] : r.map_at) j["MAP@" + std::to_string(k)] = v;
  if (r.faithfulness) j["Faithfulness"] = *r.faithfulness;
  if (r.relevancy) j["AnswerRelevancy"] = *r.relevancy;
  if (r.accuracy) j["AnswerAccuracy"] = *r.accuracy;
  if (with_per_query) {
    json pq = json::array();
    for (const auto& q : r.per_query) {
      json e = {{"query_id", q.query_id}, {"RR", q.reciprocal_rank}};
      for (auto& [k, v] : q.recall_at) e["Recall@" + std::to_string(k)] = v;
      for (auto& [k, v] : q.ap_at) e["AP@" + std::to_string(k)] = v;
      pq.push_back(std::move(e));
    }
    j["per_query"] = pq;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Generation metrics

/// Scores answers. One interface covers claim extraction, claim support,
/// relevancy and accuracy so a single LLM judge can back all of them.
class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::vector<std::string> extract_claims(const std::string& answer) = 0;
  virtual bool supported(const std::string& claim, const std::vector<std::string>& contexts) = 0;
  virtual double relevancy(const std::string& question, const std::string& answer) = 0;
  virtual double accuracy(const std::string& answer, const std::string& reference) = 0;
};

/// Splits on '.', '!' or '?' followed by whitespace or end of text.
inline std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    cur.push_back(text[i]);
    bool terminal = text[i] == '.' || text[i] == '!' || text[i] == '?';
    if (terminal && (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])))) {
      if (auto s = trim(cur); !s.empty()) out.push_back(s);
      cur.clear();
    }
  }
  if (auto s = trim(cur); !s.empty()) out.push_back(s);
  return out;
}

/// Rule-based judge for tests and offline runs.
///   claims    - sentences of the answer
///   supported - claim (citation markers and terminal punctuation stripped)
///               is a case-insensitive substring of some context
///   relevancy - share of distinct question tokens that occur in the answer;
///               0 for an empty answer
///   accuracy  - token-level F1 between answer and reference
class MockJudge : public Judge {
 public:
  std::vector<std::string> extract_claims(const std::string& answer) override { return split_sentences(answer); }

  bool supported(const std::string& claim, const std::vector<std::string>& contexts) override {
    static const std::regex marker(R"(\s*\[[^\]\n]+\])");
    std::string c = std::regex_replace(claim, marker, "");
    while (!c.empty() && (c.back() == '.' || c.back() == '!' || c.back() == '?')) c.pop_back();
    c = to_lower(trim(c));
    if (c.empty()) return false;
    for (const auto& ctx : contexts)
      if (to_lower(ctx).find(c) != std::string::npos) return true;
    return false;
  }

  double relevancy(const std::string& question, const std::string& answer) override {
    auto q = tokenize(question);
    auto a = tokenize(answer);
    if (q.empty() || a.empty()) return 0.0;
    std::set<std::string> qs(q.begin(), q.end()), as(a.begin(), a.end());
    std::size_t hit = 0;
    for (const auto& t : qs) hit += as.count(t);
    return static_cast<double>(hit) / static_cast<double>(qs.size());
  }

  double accuracy(const std::string& answer, const std::string& reference) override {
    auto a = tokenize(answer);
    auto r = tokenize(reference);
    if (a.empty() || r.empty()) return 0.0;
    std::map<std::string, int> rc;
    for (const auto& t : r) ++rc[t];
    std::size_t common = 0;
    for (const auto& t : a)
      if (auto it = rc.find(t); it != rc.end() && it->second > 0) {
        --it->second;
        ++common;
      }
    if (common == 0) return 0.0;
    double p = static_cast<double>(common) / static_cast<double>(a.size());
    double rec = static_cast<double>(common) / static_cast<double>(r.size());
    return 2 * p * rec / (p + rec);
  }
};

namespace judge_prompts {

inline constexpr const char* kVersion = "judge-prompts/1";

inline constexpr const char* kClaims =
    "Break the following answer into short, self-contained factual claims. "
    "Respond with a JSON array of strings and nothing else.\n\nAnswer:\n";

inline constexpr const char* kSupport =
    "Decide whether the claim can be inferred from the context. Respond with exactly 'yes' or 'no'.\n\n";

inline constexpr const char* kRelevancy =
    "Rate how directly the answer addresses the question on a scale from 0 to 1. "
    "Respond with a single number and nothing else.\n\n";

inline constexpr const char* kAccuracy =
    "Rate how factually consistent the answer is with the reference answer on a scale from 0 to 1. "
    "Respond with a single number and nothing else.\n\n";

}  // namespace judge_prompts

/// Judge backed by a chat model. Any response that does not follow the
/// requested shape is a judge failure.
class LlmJudge : public Judge {
 public:
  explicit LlmJudge(std::shared_ptr<ChatBackend> backend)
      : backend_(std::move(backend)),
        cfg_{"judge", "You are a strict evaluator of question answering systems.", 0.0, 1.0, 1, 512} {}

  std::vector<std::string> extract_claims(const std::string& answer) override {
    auto text = ask(std::string(judge_prompts::kClaims) + answer);
    try {
      auto start = text.find('[');
      auto end = text.rfind(']');
      if (start == std::string::npos || end == std::string::npos || end < start) throw Error("no JSON array");
      return json::parse(text.substr(start, end - start + 1)).get<std::vector<std::string>>();
    } catch (const std::exception& e) {
      throw Error(std::string("judge failure: malformed claim list: ") + e.what());
    }
  }

  bool supported(const std::string& claim, const std::vector<std::string>& contexts) override {
    std::string prompt = judge_prompts::kSupport;
    prompt += "Context:\n" + join(contexts, "\n\n") + "\n\nClaim: " + claim;
    auto r = to_lower(trim(ask(prompt)));
    if (r.rfind("yes", 0) == 0) return true;
    if (r.rfind("no", 0) == 0) return false;
    throw Error("judge failure: expected yes/no, got '" + r + "'");
  }

  double relevancy(const std::string& question, const std::string& answer) override {
    return score(std::string(judge_prompts::kRelevancy) + "Question: " + question + "\n\nAnswer: " + answer);
  }

  double accuracy(const std::string& answer, const std::string& reference) override {
    return score(std::string(judge_prompts::kAccuracy) + "Reference: " + reference + "\n\nAnswer: " + answer);
  }

 private:
  std::string ask(const std::string& prompt) {
    try {
      return backend_->chat({{"system", cfg_.system_prompt}, {"user", prompt}}, cfg_).response_text;
    } catch (const GatewayError& e) {
      throw Error(std::string("judge failure: ") + e.what());
    }
  }

  double score(const std::string& prompt) {
    auto r = trim(ask(prompt));
    try {
      std::size_t used = 0;
      double v = std::stod(r, &used);
      if (used != r.size()) throw Error("trailing text");
      if (v < 0 || v > 1 || !std::isfinite(v)) throw Error("out of range");
      return v;
    } catch (const std::exception&) {
      throw Error("judge failure: expected a number in [0,1], got '" + r + "'");
    }
  }

  std::shared_ptr<ChatBackend> backend_;
  GenerationConfig cfg_;
};

/// Fraction of the answer's claims supported by the contexts.
inline double faithfulness(const std::string& answer, const std::vector<std::string>& contexts, Judge& judge) {
  if (trim(answer).empty()) throw Error("faithfulness: empty answer");
  auto claims = judge.extract_claims(answer);
  if (claims.empty()) throw Error("no claims");
  std::size_t ok = 0;
  for (const auto& c : claims) ok += judge.supported(c, contexts) ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(claims.size());
}

struct AnswerScores {
  double relevancy = 0.0;
  double accuracy = 0.0;
};

inline AnswerScores answer_scores(const std::string& question, const std::string& answer, const std::string& reference,
                                  Judge& judge) {
  return {judge.relevancy(question, answer), judge.accuracy(answer, reference)};
}

inline std::unique_ptr<Judge> make_judge(const std::string& locator) {
  if (locator.empty() || locator == "mock") return std::make_unique<MockJudge>();
  return std::make_unique<LlmJudge>(make_backend(locator));
}

}  // namespace ragbench
