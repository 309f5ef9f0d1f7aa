// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "ragbench/eval.hpp"
#include "ragbench/llm.hpp"
#include "ragbench/retriever.hpp"

namespace ragbench {

inline constexpr const char* kAnswerSystemPrompt =
    "You answer questions about AI policy documents using only the numbered context chunks provided. "
    "Each chunk starts with its id in square brackets. Cite every chunk you rely on by writing its id in "
    "square brackets, for example [segment_12_0]. If the context does not contain the answer, say so.";

struct GroundedAnswer {
  std::string question;
  std::string answer_text;
  std::vector<std::string> cited_chunk_ids;
  RankedList retrieval;
  std::string generator_preset;
  std::vector<std::string> context_chunk_ids;  // hits that fit the context budget, in rank order
};

inline json grounded_answer_to_json(const GroundedAnswer& a) {
  return {{"question", a.question},
          {"answer_text", a.answer_text},
          {"cited_chunk_ids", a.cited_chunk_ids},
          {"retrieval", ranked_list_to_json(a.retrieval)},
          {"generator_preset", a.generator_preset},
          {"context_chunk_ids", a.context_chunk_ids}};
}

inline GroundedAnswer grounded_answer_from_json(const json& j) {
  return {j.at("question").get<std::string>(),
          j.at("answer_text").get<std::string>(),
          j.at("cited_chunk_ids").get<std::vector<std::string>>(),
          ranked_list_from_json(j.at("retrieval")),
          j.at("generator_preset").get<std::string>(),
          j.value("context_chunk_ids", std::vector<std::string>{})};
}

/// Ids written as "[id]" in `text`, first occurrence order, restricted to
/// `allowed`.
inline std::vector<std::string> extract_citations(const std::string& text, const std::set<std::string>& allowed) {
  static const std::regex cite(R"(\[([^\[\]\n]+)\])");
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), cite); it != std::sregex_iterator(); ++it) {
    std::string id = trim((*it)[1].str());
    if (allowed.count(id) && seen.insert(id).second) out.push_back(id);
  }
  return out;
}

struct PipelineOptions {
  std::string preset = "detailed";
  std::size_t context_budget_chars = 0;  // 0 = unlimited
};

/// Retrieve, assemble context, generate, extract citations.
class RagPipeline {
 public:
  RagPipeline(std::shared_ptr<const LateInteractionIndex> index, std::shared_ptr<ChatBackend> generator,
              PipelineOptions opts = {})
      : index_(std::move(index)), generator_(std::move(generator)), opts_(std::move(opts)) {
    if (!index_) throw Error("pipeline: no index loaded");
    if (!generator_) throw Error("pipeline: no generator backend");
    presets::by_name(opts_.preset);
  }

  const LateInteractionIndex& index() const { return *index_; }

  /// Chunks kept for the context, in rank order. Over budget, the lowest
  /// ranked chunks are dropped first; the top chunk is always kept.
  std::vector<const IndexEntry*> context_entries(const RankedList& hits) const {
    std::vector<const IndexEntry*> out;
    std::size_t used = 0;
    for (const auto& h : hits.hits) {
      const IndexEntry* e = index_->find(h.chunk_id);
      if (!e) throw Error("retrieval returned unknown chunk " + h.chunk_id);
      std::size_t cost = block(*e).size();
      if (opts_.context_budget_chars && !out.empty() && used + cost > opts_.context_budget_chars) break;
      used += cost;
      out.push_back(e);
    }
    return out;
  }

  GroundedAnswer answer(const std::string& question, std::size_t k = 20) const {
    if (trim(question).empty()) throw Error("answer: empty query");
    GroundedAnswer out;
    out.question = question;
    out.generator_preset = opts_.preset;
    out.retrieval = search(*index_, question, k);
    std::string context;
    for (const auto* e : context_entries(out.retrieval)) {
      context += block(*e);
      out.context_chunk_ids.push_back(e->chunk_id);
    }
    std::vector<Message> messages{{"system", kAnswerSystemPrompt},
                                  {"user", "Context:\n" + context + "Question: " + question}};
    out.answer_text = generator_->chat(messages, presets::by_name(opts_.preset)).response_text;
    auto ids = out.retrieval.ids();
    out.cited_chunk_ids = extract_citations(out.answer_text, {ids.begin(), ids.end()});
    return out;
  }

  /// Rendered text of the chunks that went into the context.
  std::vector<std::string> contexts(const GroundedAnswer& a) const {
    std::vector<std::string> out;
    for (const auto& id : a.context_chunk_ids)
      if (const auto* e = index_->find(id)) out.push_back(e->rendered);
    return out;
  }

 private:
  static std::string block(const IndexEntry& e) { return "[" + e.chunk_id + "]\n" + e.rendered + "\n\n"; }

  std::shared_ptr<const LateInteractionIndex> index_;
  std::shared_ptr<ChatBackend> generator_;
  PipelineOptions opts_;
};

struct EvalQuestion {
  std::string question_id;
  std::string question;
  std::string reference_answer;
  std::vector<std::string> relevant;
};

inline std::vector<EvalQuestion> load_eval_questions(const std::string& path) {
  std::vector<EvalQuestion> out;
  jsonl::for_each(path, [&](const json& r, std::size_t line) {
    try {
      out.push_back({require_string(r, "question_id"), require_string(r, "question"),
                     r.value("reference_answer", std::string{}), string_list(r, "relevant")});
    } catch (const Error& e) {
      throw RecordError(path, line, e.what());
    }
  });
  return out;
}

struct RagEvaluation {
  EvalReport report;
  bool has_retrieval = false;
  std::vector<json> per_question;
};

/// Runs every question through the pipeline and scores the answers with
/// the judge. Retrieval metrics are added when the questions carry
/// relevant chunk ids.
inline RagEvaluation evaluate_rag(const std::vector<EvalQuestion>& questions, const RagPipeline& pipeline, Judge& judge,
                                  std::size_t k = 20, const std::vector<std::size_t>& ks = {5, 10, 20}) {
  if (questions.empty()) throw Error("eval-rag: no questions");
  RagEvaluation out;
  RetrievalRun run;
  Qrels qrels;
  double faith = 0, rel = 0, acc = 0;
  std::size_t faith_n = 0, acc_n = 0;
  for (const auto& q : questions) {
    auto ans = pipeline.answer(q.question, k);
    json rec = {{"question_id", q.question_id}, {"answer", ans.answer_text}, {"cited", ans.cited_chunk_ids}};
    try {
      double f = faithfulness(ans.answer_text, pipeline.contexts(ans), judge);
      faith += f;
      ++faith_n;
      rec["faithfulness"] = f;
    } catch (const Error& e) {
      rec["faithfulness_error"] = e.what();
    }
    auto scores = answer_scores(q.question, ans.answer_text, q.reference_answer, judge);
    rel += scores.relevancy;
    rec["relevancy"] = scores.relevancy;
    if (!q.reference_answer.empty()) {
      acc += scores.accuracy;
      ++acc_n;
      rec["accuracy"] = scores.accuracy;
    }
    if (!q.relevant.empty()) {
      run[q.question_id] = ans.retrieval.ids();
      qrels[q.question_id] = {q.relevant.begin(), q.relevant.end()};
    }
    out.per_question.push_back(std::move(rec));
  }
  if (!qrels.empty()) {
    out.report = evaluate_run(run, qrels, ks);
    out.has_retrieval = true;
  }
  if (faith_n) out.report.faithfulness = faith / static_cast<double>(faith_n);
  out.report.relevancy = rel / static_cast<double>(questions.size());
  if (acc_n) out.report.accuracy = acc / static_cast<double>(acc_n);
  return out;
}

inline json rag_report_to_json(const RagEvaluation& e) {
  json j = report_to_json(e.report);
  if (!e.has_retrieval)
    for (auto it = j.begin(); it != j.end();) {
      const auto& key = it.key();
      if (key == "MRR" || key.rfind("Recall@", 0) == 0 || key.rfind("MAP@", 0) == 0)
        it = j.erase(it);
      else
        ++it;
    }
  return j;
}

}  // namespace ragbench
