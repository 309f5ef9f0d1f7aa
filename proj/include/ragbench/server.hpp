// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <memory>
#include <string>

#include "httplib.h"
#include "ragbench/annotation.hpp"
#include "ragbench/pipeline.hpp"

namespace ragbench {

/// Settings shared by the CLI and the HTTP service. Loaded from a JSON file
/// and then overridden by environment variables.
struct WorkbenchConfig {
  std::string corpus;
  std::string index;
  std::string log = "annotations.jsonl";
  std::string llm;  // backend locator, see make_backend
  std::string judge = "mock";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t k = 20;
  std::size_t context_budget_chars = 0;
  std::uint64_t seed = 0;

  static WorkbenchConfig load(const std::string& path = {}) {
    WorkbenchConfig c;
    if (!path.empty()) {
      std::ifstream in(path);
      if (!in) throw Error("cannot open config: " + path);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw Error("config " + path + ": " + e.what());
      }
      c.corpus = j.value("corpus", c.corpus);
      c.index = j.value("index", c.index);
      c.log = j.value("log", c.log);
      c.llm = j.value("llm", c.llm);
      c.judge = j.value("judge", c.judge);
      c.host = j.value("host", c.host);
      c.port = j.value("port", c.port);
      c.k = j.value("k", c.k);
      c.context_budget_chars = j.value("context_budget_chars", c.context_budget_chars);
      c.seed = j.value("seed", c.seed);
    }
    c.apply_env();
    return c;
  }

  void apply_env() {
    auto env = [](const char* name) -> const char* {
      const char* v = std::getenv(name);
      return (v && *v) ? v : nullptr;
    };
    if (auto v = env("RAGBENCH_CORPUS")) corpus = v;
    if (auto v = env("RAGBENCH_INDEX")) index = v;
    if (auto v = env("RAGBENCH_LOG")) log = v;
    if (auto v = env("LLM_ENDPOINT")) llm = std::string("http:") + v;
    if (auto v = env("RAGBENCH_LLM")) llm = v;
    if (auto v = env("RAGBENCH_JUDGE")) judge = v;
    if (auto v = env("RAGBENCH_HOST")) host = v;
    if (auto v = env("RAGBENCH_PORT")) port = std::atoi(v);
    if (auto v = env("RAGBENCH_CONTEXT_BUDGET")) context_budget_chars = std::strtoull(v, nullptr, 10);
    if (auto v = env("RAGBENCH_SEED")) seed = std::strtoull(v, nullptr, 10);
  }
};

/// HTTP front end for the pipeline and the annotation store.
///
///   GET  /healthz
///   POST /query                {question, k?}              -> GroundedAnswer
///   POST /tasks/relevance      {queries:[{query_id, query}], depth?}
///   POST /tasks/preference     {questions:[{question_id, question, context}]}
///   GET  /tasks/relevance?state=open|done|all
///   GET  /tasks/preference?state=open|done|failed|all
///   GET  /tasks/<task_id>
///   POST /labels               {task_id, payload, annotator_id, token?}
///   GET  /export/labeled-queries[?depth=N]
///   GET  /export/preferences
///   GET  /export/qrels[?depth=N]
class WorkbenchServer {
 public:
  WorkbenchServer(std::shared_ptr<AnnotationStore> store, std::shared_ptr<const LateInteractionIndex> index,
                  std::shared_ptr<ChatBackend> generator, PipelineOptions opts = {})
      : store_(std::move(store)), index_(std::move(index)), generator_(std::move(generator)) {
    if (index_ && generator_) pipeline_ = std::make_unique<RagPipeline>(index_, generator_, opts);
    routes();
  }

  httplib::Server& http() { return server_; }

  /// Binds to host:port (port 0 picks a free port) and returns the port.
  int bind(const std::string& host, int port) {
    int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    return bound;
  }
  void listen_after_bind() { server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  static void send(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_jsonl(httplib::Response& res, const std::vector<json>& records) {
    res.status = 200;
    res.set_content(jsonl::dump(records), "application/x-ndjson");
    if (records.empty()) res.set_header("X-Warning", "no completed tasks");
  }

  template <typename Fn>
  static httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const NotFound& e) {
        send(res, 404, {{"error", e.what()}});
      } catch (const GatewayError& e) {
        send(res, 502, {{"error", e.what()}});
      } catch (const json::exception& e) {
        send(res, 400, {{"error", std::string("malformed request: ") + e.what()}});
      } catch (const Error& e) {
        send(res, 400, {{"error", e.what()}});
      }
    };
  }

  static std::string state_filter(const httplib::Request& req) {
    auto s = req.has_param("state") ? req.get_param_value("state") : "all";
    if (s != "open" && s != "done" && s != "failed" && s != "all") throw Error("state must be open, done, failed or all");
    return s;
  }

  static std::size_t depth_param(const httplib::Request& req) {
    return req.has_param("depth") ? std::stoul(req.get_param_value("depth")) : 0;
  }

  const LateInteractionIndex& require_index() const {
    if (!index_) throw Error("no index loaded");
    return *index_;
  }

  void routes() {
    server_.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { send(res, 200, {{"status", "ok"}}); });

    server_.Post("/query", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (!pipeline_) throw Error("query pipeline not configured (index and generator required)");
      auto body = json::parse(req.body);
      auto k = body.value("k", std::size_t{20});
      send(res, 200, grounded_answer_to_json(pipeline_->answer(body.at("question").get<std::string>(), k)));
    }));

    server_.Post("/tasks/relevance", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto body = json::parse(req.body);
      std::vector<QueryInput> qs;
      for (const auto& q : body.at("queries")) qs.push_back({q.at("query_id").get<std::string>(), q.at("query").get<std::string>()});
      auto ids = store_->create_relevance_tasks(qs, body.value("depth", std::size_t{20}), require_index());
      send(res, 200, {{"task_ids", ids}});
    }));

    server_.Post("/tasks/preference", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (!generator_) throw Error("no generator backend configured");
      auto body = json::parse(req.body);
      std::vector<QuestionInput> qs;
      for (const auto& q : body.at("questions"))
        qs.push_back({q.at("question_id").get<std::string>(), q.at("question").get<std::string>(),
                      q.at("context").get<std::string>()});
      auto batch = store_->create_preference_tasks(qs, *generator_);
      send(res, 200, {{"task_ids", batch.task_ids}, {"failures", batch.failures}});
    }));

    server_.Get("/tasks/relevance", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto state = state_filter(req);
      json out = json::array();
      for (const auto& [id, t] : store_->snapshot()->relevance) {
        bool open = t.open();
        if (state == "all" || (state == "open" && open) || (state == "done" && !open)) out.push_back(relevance_task_to_json(t));
      }
      send(res, 200, out);
    }));

    server_.Get("/tasks/preference", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto state = state_filter(req);
      json out = json::array();
      for (const auto& [id, t] : store_->snapshot()->preference) {
        std::string s = t.failed ? "failed" : (t.open() ? "open" : "done");
        if (state == "all" || state == s) out.push_back(preference_task_to_json(t));
      }
      send(res, 200, out);
    }));

    server_.Get(R"(/tasks/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::string id = req.matches[1];
      auto snap = store_->snapshot();
      if (auto it = snap->relevance.find(id); it != snap->relevance.end()) return send(res, 200, relevance_task_to_json(it->second));
      if (auto it = snap->preference.find(id); it != snap->preference.end())
        return send(res, 200, preference_task_to_json(it->second));
      throw NotFound("unknown task: " + id);
    }));

    server_.Post("/labels", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto body = json::parse(req.body);
      auto rec = store_->record_label(body.at("task_id").get<std::string>(), body.at("payload"),
                                      body.value("annotator_id", std::string{}), body.value("token", std::string{}));
      send(res, 200, label_record_to_json(rec));
    }));

    server_.Get("/export/labeled-queries", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_jsonl(res, store_->labeled_query_records(depth_param(req)));
    }));
    server_.Get("/export/preferences", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_jsonl(res, store_->preference_records());
    }));
    server_.Get("/export/qrels", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_jsonl(res, store_->qrels_records(depth_param(req)));
    }));
  }

  std::shared_ptr<AnnotationStore> store_;
  std::shared_ptr<const LateInteractionIndex> index_;
  std::shared_ptr<ChatBackend> generator_;
  std::unique_ptr<RagPipeline> pipeline_;
  httplib::Server server_;
};

}  // namespace ragbench
