// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ragbench/contrastive.hpp"
#include "ragbench/dpo.hpp"
#include "ragbench/llm.hpp"
#include "ragbench/retriever.hpp"

namespace ragbench {

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  auto t = std::chrono::system_clock::to_time_t(now);
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char frac[8];
  std::snprintf(frac, sizeof frac, ".%03dZ", static_cast<int>(ms));
  return std::string(buf) + frac;
}

class NotFound : public Error {
 public:
  using Error::Error;
};

struct LabelRecord {
  std::uint64_t seq = 0;
  std::string task_id;
  json payload;
  std::string annotator_id;
  std::string timestamp;
  std::string token;  // client-supplied idempotency token, optional
};

inline json label_record_to_json(const LabelRecord& r) {
  json j = {{"seq", r.seq},
            {"task_id", r.task_id},
            {"payload", r.payload},
            {"annotator_id", r.annotator_id},
            {"timestamp", r.timestamp}};
  if (!r.token.empty()) j["token"] = r.token;
  return j;
}

struct Candidate {
  std::string chunk_id;
  std::string rendered;
};

struct RelevanceLabel {
  bool relevant = false;
  std::uint64_t seq = 0;
};

struct RelevanceTask {
  std::string task_id;
  std::string query_id;
  std::string query;
  std::size_t depth = 20;
  std::vector<Candidate> candidates;
  // annotator -> chunk -> latest label
  std::map<std::string, std::map<std::string, RelevanceLabel>> labels;

  bool has_candidate(const std::string& id) const {
    return std::any_of(candidates.begin(), candidates.end(), [&](const Candidate& c) { return c.chunk_id == id; });
  }

  /// Labels resolved across annotators: the most recent write per chunk.
  std::map<std::string, bool> merged_labels() const {
    std::map<std::string, RelevanceLabel> best;
    for (const auto& [who, m] : labels)
      for (const auto& [chunk, l] : m)
        if (auto it = best.find(chunk); it == best.end() || it->second.seq < l.seq) best[chunk] = l;
    std::map<std::string, bool> out;
    for (const auto& [chunk, l] : best) out[chunk] = l.relevant;
    return out;
  }

  bool open() const { return merged_labels().size() < candidates.size(); }
};

struct PreferenceChoice {
  std::string choice;  // "A" or "B"
  std::uint64_t seq = 0;
  std::string timestamp;
  json payload;
};

struct PreferenceTask {
  std::string task_id;
  std::string question_id;
  std::string question;
  std::string context;
  std::string answer_a;  // preset "detailed"
  std::string answer_b;  // preset "concise"
  bool failed = false;
  std::string failure;
  std::map<std::string, PreferenceChoice> choices;  // annotator -> latest choice

  bool open() const { return !failed && choices.empty(); }
};

/// Prompt recorded in exported preference pairs: the document context and
/// the question, as shown to the generator.
inline std::string preference_prompt(const std::string& question, const std::string& context) {
  return "Document:\n" + context + "\n\nQuestion: " + question;
}

inline json relevance_task_to_json(const RelevanceTask& t) {
  json cands = json::array();
  for (const auto& c : t.candidates) cands.push_back({{"chunk_id", c.chunk_id}, {"rendered", c.rendered}});
  json labels = json::object();
  for (const auto& [chunk, rel] : t.merged_labels()) labels[chunk] = rel ? "relevant" : "irrelevant";
  json by_annotator = json::object();
  for (const auto& [who, m] : t.labels) {
    json l = json::object();
    for (const auto& [chunk, rl] : m) l[chunk] = rl.relevant ? "relevant" : "irrelevant";
    by_annotator[who] = l;
  }
  return {{"task_id", t.task_id}, {"type", "relevance"}, {"query_id", t.query_id},
          {"query", t.query},     {"depth", t.depth},    {"candidates", cands},
          {"labels", labels},     {"labels_by_annotator", by_annotator},
          {"state", t.open() ? "open" : "done"}};
}

inline json preference_task_to_json(const PreferenceTask& t) {
  json choices = json::object();
  for (const auto& [who, c] : t.choices) choices[who] = c.payload;
  json j = {{"task_id", t.task_id}, {"type", "preference"}, {"question_id", t.question_id},
            {"question", t.question}, {"context", t.context}, {"answer_a", t.answer_a},
            {"answer_b", t.answer_b}, {"choices", choices},
            {"state", t.failed ? "failed" : (t.open() ? "open" : "done")}};
  if (t.failed) j["failure"] = t.failure;
  return j;
}

struct AnnotationState {
  std::map<std::string, RelevanceTask> relevance;
  std::map<std::string, PreferenceTask> preference;
  std::map<std::string, LabelRecord> by_token;  // "task|annotator|token" -> record
  std::uint64_t last_seq = 0;
};

struct QueryInput {
  std::string query_id;
  std::string query;
};

struct QuestionInput {
  std::string question_id;
  std::string question;
  std::string context;
};

struct PreferenceBatch {
  std::vector<std::string> task_ids;
  Warnings failures;
};

/// Task and label store backed by a single append-only JSONL event log.
/// Writers are serialized; readers work on an immutable snapshot.
class AnnotationStore {
 public:
  /// Opens (creating if needed) the log at `path` and replays it. An empty
  /// path keeps everything in memory.
  explicit AnnotationStore(std::string path = {}) : path_(std::move(path)), state_(std::make_shared<AnnotationState>()) {
    if (path_.empty()) return;
    std::ifstream probe(path_);
    if (probe) {
      AnnotationState st;
      jsonl::for_each(path_, [&](const json& ev, std::size_t line) {
        try {
          apply(st, ev);
        } catch (const Error& e) {
          throw RecordError(path_, line, e.what());
        }
      });
      state_ = std::make_shared<AnnotationState>(std::move(st));
    }
  }

  std::shared_ptr<const AnnotationState> snapshot() const {
    std::lock_guard lk(snap_mu_);
    return state_;
  }

  /// One task per query with the top-`depth` candidates. Existing
  /// (query_id, depth) tasks are returned unchanged.
  std::vector<std::string> create_relevance_tasks(const std::vector<QueryInput>& queries, std::size_t depth,
                                                  const LateInteractionIndex& index) {
    if (depth == 0) throw Error("depth must be >= 1");
    std::vector<std::string> ids;
    std::lock_guard wl(write_mu_);
    for (const auto& q : queries) {
      std::string id = "rel" + std::to_string(depth) + "-" + q.query_id;
      ids.push_back(id);
      if (snapshot()->relevance.count(id)) continue;
      auto hits = search(index, q.query, depth);
      json cands = json::array();
      for (const auto& h : hits.hits) cands.push_back({{"chunk_id", h.chunk_id}, {"rendered", index.find(h.chunk_id)->rendered}});
      commit({{"type", "relevance_task"},
              {"task_id", id},
              {"query_id", q.query_id},
              {"query", q.query},
              {"depth", depth},
              {"candidates", cands}});
    }
    return ids;
  }

  /// Generates the two answers for each question (presets "detailed" and
  /// "concise"). A generator failure marks that task failed; the batch
  /// continues. Existing successful tasks are left untouched.
  PreferenceBatch create_preference_tasks(const std::vector<QuestionInput>& questions, ChatBackend& generator) {
    PreferenceBatch out;
    std::lock_guard wl(write_mu_);
    for (const auto& q : questions) {
      std::string id = "pref-" + q.question_id;
      if (auto it = snapshot()->preference.find(id); it != snapshot()->preference.end() && !it->second.failed) {
        out.task_ids.push_back(id);
        continue;
      }
      std::vector<Message> msgs{{"user", preference_prompt(q.question, q.context)}};
      json ev = {{"type", "preference_task"}, {"task_id", id},         {"question_id", q.question_id},
                 {"question", q.question},    {"context", q.context}};
      try {
        ev["answer_a"] = generator.chat(msgs, presets::detailed()).response_text;
        ev["answer_b"] = generator.chat(msgs, presets::concise()).response_text;
        commit(ev);
        out.task_ids.push_back(id);
      } catch (const Error& e) {
        ev["failed"] = true;
        ev["failure"] = e.what();
        commit(ev);
        out.failures.push_back(id + ": " + e.what());
      }
    }
    return out;
  }

  /// Validates and appends a label. Re-posting a record with the same
  /// (task, annotator, token) returns the original without a new event.
  LabelRecord record_label(const std::string& task_id, const json& payload, const std::string& annotator_id,
                           const std::string& token = {}) {
    if (trim(annotator_id).empty()) throw Error("annotator_id is required");
    std::lock_guard wl(write_mu_);
    auto snap = snapshot();
    if (!token.empty())
      if (auto it = snap->by_token.find(token_key(task_id, annotator_id, token)); it != snap->by_token.end())
        return it->second;
    validate_payload(*snap, task_id, payload);
    json ev = {{"type", "label"}, {"task_id", task_id}, {"payload", payload}, {"annotator_id", annotator_id}};
    if (!token.empty()) ev["token"] = token;
    auto committed = commit(ev);
    return label_from_event(committed, committed.at("seq").get<std::uint64_t>());
  }

  // ---- exports -----------------------------------------------------------

  /// One LabeledQuery per relevance task with at least one relevant label;
  /// depth 0 exports every depth.
  std::vector<LabeledQuery> labeled_queries(std::size_t depth = 0) const {
    std::vector<LabeledQuery> out;
    for (const auto& [id, t] : snapshot()->relevance) {
      if (depth && t.depth != depth) continue;
      auto merged = t.merged_labels();
      LabeledQuery q{t.query_id, t.query, {}, {}};
      for (const auto& c : t.candidates) {
        auto it = merged.find(c.chunk_id);
        if (it == merged.end()) continue;
        (it->second ? q.positives : q.negatives).push_back(c.chunk_id);
      }
      if (!q.positives.empty()) out.push_back(std::move(q));
    }
    return out;
  }

  std::vector<json> qrels_records(std::size_t depth = 0) const {
    std::vector<json> out;
    for (const auto& q : labeled_queries(depth))
      out.push_back({{"query_id", q.query_id}, {"query", q.query}, {"relevant", q.positives}});
    return out;
  }

  /// One pair per (task, annotator) choice.
  std::vector<PreferencePair> preference_pairs() const {
    std::vector<PreferencePair> out;
    for (const auto& [id, t] : snapshot()->preference) {
      if (t.failed) continue;
      for (const auto& [who, c] : t.choices) {
        bool a = c.choice == "A";
        out.push_back({preference_prompt(t.question, t.context), a ? t.answer_a : t.answer_b, a ? t.answer_b : t.answer_a,
                       who, c.timestamp});
      }
    }
    return out;
  }

  std::vector<json> labeled_query_records(std::size_t depth = 0) const {
    std::vector<json> out;
    for (const auto& q : labeled_queries(depth)) out.push_back(labeled_query_to_json(q));
    return out;
  }

  std::vector<json> preference_records() const {
    std::vector<json> out;
    for (const auto& p : preference_pairs()) out.push_back(preference_to_json(p));
    return out;
  }

  const std::string& path() const { return path_; }

 private:
  static std::string token_key(const std::string& task, const std::string& who, const std::string& token) {
    return task + "|" + who + "|" + token;
  }

  static LabelRecord label_from_event(const json& ev, std::uint64_t seq) {
    return {seq, ev.at("task_id").get<std::string>(), ev.at("payload"), ev.at("annotator_id").get<std::string>(),
            ev.at("ts").get<std::string>(), ev.value("token", std::string{})};
  }

  static void validate_payload(const AnnotationState& st, const std::string& task_id, const json& payload) {
    if (!payload.is_object()) throw Error("malformed payload: expected an object");
    if (auto it = st.relevance.find(task_id); it != st.relevance.end()) {
      auto labels = payload.find("labels");
      if (labels == payload.end() || !labels->is_object() || labels->empty())
        throw Error("malformed payload: relevance labels must be a non-empty object");
      for (auto& [chunk, v] : labels->items()) {
        if (!it->second.has_candidate(chunk)) throw Error("chunk '" + chunk + "' is not a candidate of " + task_id);
        if (!v.is_string() || (v != "relevant" && v != "irrelevant"))
          throw Error("malformed payload: label must be 'relevant' or 'irrelevant'");
      }
      return;
    }
    if (auto it = st.preference.find(task_id); it != st.preference.end()) {
      if (it->second.failed) throw Error("task " + task_id + " failed generation and cannot be labeled");
      auto c = payload.find("choice");
      if (c == payload.end() || !c->is_string() || (*c != "A" && *c != "B"))
        throw Error("malformed payload: choice must be 'A' or 'B'");
      return;
    }
    throw NotFound("unknown task: " + task_id);
  }

  // Applies one event to a state. Shared by live writes and replay.
  static void apply(AnnotationState& st, const json& ev) {
    auto seq = ev.at("seq").get<std::uint64_t>();
    if (seq <= st.last_seq) throw Error("sequence numbers must be strictly increasing");
    st.last_seq = seq;
    auto type = ev.at("type").get<std::string>();
    if (type == "relevance_task") {
      RelevanceTask t;
      t.task_id = ev.at("task_id").get<std::string>();
      t.query_id = ev.at("query_id").get<std::string>();
      t.query = ev.at("query").get<std::string>();
      t.depth = ev.at("depth").get<std::size_t>();
      for (const auto& c : ev.at("candidates"))
        t.candidates.push_back({c.at("chunk_id").get<std::string>(), c.at("rendered").get<std::string>()});
      st.relevance[t.task_id] = std::move(t);
    } else if (type == "preference_task") {
      PreferenceTask t;
      t.task_id = ev.at("task_id").get<std::string>();
      t.question_id = ev.at("question_id").get<std::string>();
      t.question = ev.at("question").get<std::string>();
      t.context = ev.at("context").get<std::string>();
      t.answer_a = ev.value("answer_a", std::string{});
      t.answer_b = ev.value("answer_b", std::string{});
      t.failed = ev.value("failed", false);
      t.failure = ev.value("failure", std::string{});
      st.preference[t.task_id] = std::move(t);
    } else if (type == "label") {
      auto rec = label_from_event(ev, seq);
      if (auto it = st.relevance.find(rec.task_id); it != st.relevance.end()) {
        auto& mine = it->second.labels[rec.annotator_id];
        for (auto& [chunk, v] : rec.payload.at("labels").items()) mine[chunk] = {v == "relevant", seq};
      } else if (auto pt = st.preference.find(rec.task_id); pt != st.preference.end()) {
        pt->second.choices[rec.annotator_id] = {rec.payload.at("choice").get<std::string>(), seq, rec.timestamp,
                                                rec.payload};
      } else {
        throw Error("label for unknown task " + rec.task_id);
      }
      if (!rec.token.empty()) st.by_token[token_key(rec.task_id, rec.annotator_id, rec.token)] = rec;
    } else {
      throw Error("unknown event type: " + type);
    }
  }

  // Requires write_mu_. Copies the current state, applies the event,
  // appends it to the log, then publishes the new snapshot.
  json commit(json ev) {
    auto next = std::make_shared<AnnotationState>(*snapshot());
    ev["seq"] = next->last_seq + 1;
    ev["ts"] = utc_timestamp();
    apply(*next, ev);
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::app);
      if (!out) throw Error("cannot append to annotation log: " + path_);
      out << ev.dump() << '\n';
      out.flush();
      if (!out) throw Error("failed writing annotation log: " + path_);
    }
    std::lock_guard lk(snap_mu_);
    state_ = std::move(next);
    return ev;
  }

  std::string path_;
  std::mutex write_mu_;
  mutable std::mutex snap_mu_;
  std::shared_ptr<const AnnotationState> state_;
};

}  // namespace ragbench
