// SPDX-License-Identifier: Apache-2.0
//
// ragbench command line: corpus ingest and statistics, index build/search,
// query generation, annotation tasks and service, exports, trainers and
// evaluation.

#include <csignal>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ragbench/ragbench.hpp"

using namespace ragbench;

namespace {

void print(const json& j) { std::cout << j.dump(2) << '\n'; }

void warn_all(const Warnings& w) {
  for (const auto& m : w) std::cerr << "warning: " << m << '\n';
}

std::vector<std::size_t> parse_ks(const std::string& spec) {
  std::vector<std::size_t> ks;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ',')) {
    auto k = std::stoul(trim(part));
    if (k == 0) throw Error("k must be >= 1");
    ks.push_back(k);
  }
  if (ks.empty()) throw Error("no k values given");
  return ks;
}

std::string need(const std::string& value, const char* what) {
  if (value.empty()) throw Error(std::string("missing ") + what + " (flag or config)");
  return value;
}

WorkbenchServer* g_server = nullptr;
void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ragbench: late-interaction retrieval, contrastive and preference training, RAG evaluation"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (env vars override it)");
  WorkbenchConfig cfg;
  app.parse_complete_callback([&] { cfg = WorkbenchConfig::load(config_path); });

  // ---- ingest / stats ------------------------------------------------------
  std::string corpus_path, out_path;
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate a chunk record file and report counts");
  ingest_cmd->add_option("--corpus", corpus_path, "Chunk record file (JSONL)");
  ingest_cmd->add_option("--out", out_path, "Re-export normalized records here");
  ingest_cmd->callback([&] {
    auto corpus = ingest(need(corpus_path.empty() ? cfg.corpus : corpus_path, "--corpus"));
    if (!out_path.empty()) export_corpus(corpus, out_path);
    print({{"doc_count", corpus.doc_count()}, {"chunk_count", corpus.chunk_count()}});
  });

  std::size_t top_n = 10;
  auto* stats_cmd = app.add_subcommand("stats", "Corpus statistics");
  stats_cmd->add_option("--corpus", corpus_path, "Chunk record file (JSONL)");
  stats_cmd->add_option("--top", top_n, "Ranked entries to show")->capture_default_str();
  stats_cmd->callback([&] { print(stats_to_json(stats(ingest(need(corpus_path.empty() ? cfg.corpus : corpus_path, "--corpus"))), top_n)); });

  // ---- encoder params ------------------------------------------------------
  std::size_t base_dim = 256, out_dim = 64;
  std::uint64_t hash_seed = 0, init_seed = 1;
  auto* init_cmd = app.add_subcommand("init-params", "Write a fresh random encoder projection");
  init_cmd->add_option("--out", out_path, "Output params file")->required();
  init_cmd->add_option("--base-dim", base_dim, "Hashed embedding width")->capture_default_str();
  init_cmd->add_option("--out-dim", out_dim, "Output embedding width")->capture_default_str();
  init_cmd->add_option("--hash-seed", hash_seed, "Token hash seed")->capture_default_str();
  init_cmd->add_option("--seed", init_seed, "Projection init seed")->capture_default_str();
  init_cmd->callback([&] { save_params(EncoderParams::random(base_dim, out_dim, hash_seed, init_seed), out_path); });

  // ---- index ---------------------------------------------------------------
  std::string params_path, index_path, query;
  std::size_t k = 20;
  auto* index_cmd = app.add_subcommand("index", "Build or search a late-interaction index");
  index_cmd->require_subcommand(1);
  auto* build_cmd = index_cmd->add_subcommand("build", "Embed every chunk of a corpus");
  build_cmd->add_option("--corpus", corpus_path, "Chunk record file")->required();
  build_cmd->add_option("--params", params_path, "Encoder params (default: fresh random projection)");
  build_cmd->add_option("--out", out_path, "Index file")->required();
  build_cmd->callback([&] {
    auto params = params_path.empty() ? EncoderParams::random() : load_params(params_path);
    Warnings w;
    auto index = build_index(ingest(corpus_path), params, &w);
    warn_all(w);
    save_index(index, out_path);
    print({{"entries", index.size()}, {"dim", index.dim()}, {"skipped", index.skipped()},
           {"encoder_fingerprint", index.encoder_fingerprint()}});
  });
  auto* search_cmd = index_cmd->add_subcommand("search", "Top-k MaxSim search");
  search_cmd->add_option("--index", index_path, "Index file");
  search_cmd->add_option("--query", query, "Query text")->required();
  search_cmd->add_option("--k", k, "Results to return")->capture_default_str();
  search_cmd->callback([&] { print(ranked_list_to_json(search(load_index(need(index_path.empty() ? cfg.index : index_path, "--index")), query, k))); });

  // ---- synthetic queries ---------------------------------------------------
  std::string templates_path, llm_loc;
  std::size_t n = 10;
  std::uint64_t seed = 0;
  double test_fraction = 0.0;
  auto* gen_cmd = app.add_subcommand("gen-queries", "Fill prompt templates and ask an LLM for queries");
  gen_cmd->add_option("--templates", templates_path, "Template file (JSONL)")->required();
  gen_cmd->add_option("--corpus", corpus_path, "Chunk record file")->required();
  gen_cmd->add_option("--n", n, "Number of queries")->capture_default_str();
  gen_cmd->add_option("--seed", seed, "Sampling seed")->capture_default_str();
  gen_cmd->add_option("--llm", llm_loc, "mock | mock:fixture:<file> | http:<endpoint>");
  gen_cmd->add_option("--test-fraction", test_fraction, "Share assigned to the test split")->capture_default_str();
  gen_cmd->add_option("--out", out_path, "Output file (default stdout)");
  gen_cmd->callback([&] {
    auto backend = make_backend(llm_loc.empty() ? cfg.llm : llm_loc);
    auto outcome = generate_queries(load_templates(templates_path), ingest(corpus_path), *backend, n, seed, test_fraction);
    warn_all(outcome.failures);
    if (outcome.shortfall()) std::cerr << "warning: shortfall of " << outcome.shortfall() << " queries\n";
    std::vector<json> recs;
    for (const auto& q : outcome.queries) recs.push_back(generated_query_to_json(q));
    if (out_path.empty())
      jsonl::write(std::cout, recs);
    else
      jsonl::write(out_path, recs);
  });

  std::string queries_path, decisions_path;
  auto* screen_cmd = app.add_subcommand("screen-queries", "Apply human keep/discard decisions");
  screen_cmd->add_option("--queries", queries_path, "Generated query file")->required();
  screen_cmd->add_option("--decisions", decisions_path, "Decisions file {query_id, keep}")->required();
  screen_cmd->add_option("--out", out_path, "Output file")->required();
  screen_cmd->callback([&] {
    Warnings w;
    auto kept = screen_queries(load_queries(queries_path), load_decisions(decisions_path), &w);
    warn_all(w);
    std::vector<json> recs;
    for (const auto& q : kept) recs.push_back(generated_query_to_json(q));
    jsonl::write(out_path, recs);
  });

  // ---- annotation tasks ----------------------------------------------------
  std::string log_path, questions_path;
  std::size_t depth = 20;
  auto* tasks_cmd = app.add_subcommand("tasks", "Create annotation tasks in the label log");
  tasks_cmd->require_subcommand(1);
  auto* rel_cmd = tasks_cmd->add_subcommand("relevance", "Top-depth relevance labeling tasks");
  rel_cmd->add_option("--queries", queries_path, "Query file {query_id, query}")->required();
  rel_cmd->add_option("--depth", depth, "20 for training labels, 50 for evaluation labels")->capture_default_str();
  rel_cmd->add_option("--index", index_path, "Index file");
  rel_cmd->add_option("--log", log_path, "Annotation log");
  rel_cmd->callback([&] {
    AnnotationStore store(log_path.empty() ? cfg.log : log_path);
    std::vector<QueryInput> qs;
    for (const auto& q : load_queries(queries_path)) qs.push_back({q.query_id, q.query});
    auto ids = store.create_relevance_tasks(qs, depth, load_index(need(index_path.empty() ? cfg.index : index_path, "--index")));
    print({{"task_ids", ids}});
  });
  auto* pref_cmd = tasks_cmd->add_subcommand("preference", "Answer-pair preference tasks");
  pref_cmd->add_option("--questions", questions_path, "Question file {question_id, question, context | doc_id}")->required();
  pref_cmd->add_option("--corpus", corpus_path, "Chunk file, used to resolve doc_id contexts");
  pref_cmd->add_option("--llm", llm_loc, "Generator backend");
  pref_cmd->add_option("--log", log_path, "Annotation log");
  pref_cmd->callback([&] {
    std::optional<Corpus> corpus;
    if (!corpus_path.empty()) corpus = ingest(corpus_path);
    std::vector<QuestionInput> qs;
    jsonl::for_each(questions_path, [&](const json& r, std::size_t line) {
      QuestionInput q{require_string(r, "question_id"), require_string(r, "question"), r.value("context", std::string{})};
      if (q.context.empty() && r.contains("doc_id")) {
        if (!corpus) throw RecordError(questions_path, line, "doc_id given but no --corpus");
        const auto* d = corpus->find_document(r["doc_id"].get<std::string>());
        if (!d) throw RecordError(questions_path, line, "unknown doc_id");
        for (auto i : d->segments) q.context += corpus->chunks()[i].text + "\n\n";
        q.context = trim(q.context);
      }
      if (q.context.empty()) throw RecordError(questions_path, line, "question has no grounding context");
      qs.push_back(std::move(q));
    });
    AnnotationStore store(log_path.empty() ? cfg.log : log_path);
    auto backend = make_backend(llm_loc.empty() ? cfg.llm : llm_loc);
    auto batch = store.create_preference_tasks(qs, *backend);
    warn_all(batch.failures);
    print({{"task_ids", batch.task_ids}, {"failures", batch.failures}});
  });

  // ---- service -------------------------------------------------------------
  int port = -1;
  std::string host;
  auto* serve_cmd = app.add_subcommand("serve", "Run the query and annotation HTTP service");
  serve_cmd->add_option("--index", index_path, "Index file");
  serve_cmd->add_option("--log", log_path, "Annotation log");
  serve_cmd->add_option("--llm", llm_loc, "Generator backend");
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--port", port, "Port");
  serve_cmd->callback([&] {
    std::shared_ptr<const LateInteractionIndex> index;
    if (auto p = index_path.empty() ? cfg.index : index_path; !p.empty())
      index = std::make_shared<LateInteractionIndex>(load_index(p));
    auto store = std::make_shared<AnnotationStore>(log_path.empty() ? cfg.log : log_path);
    WorkbenchServer server(store, index, make_backend(llm_loc.empty() ? cfg.llm : llm_loc),
                           PipelineOptions{"detailed", cfg.context_budget_chars});
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    int bound = server.bind(host.empty() ? cfg.host : host, port < 0 ? cfg.port : port);
    std::cerr << "listening on " << (host.empty() ? cfg.host : host) << ":" << bound << '\n';
    server.listen_after_bind();
    g_server = nullptr;
  });

  // ---- export --------------------------------------------------------------
  std::string what;
  std::size_t export_depth = 0;
  auto* export_cmd = app.add_subcommand("export", "Write training/evaluation files from the label log");
  export_cmd->add_option("what", what, "labeled-queries | preferences | qrels")
      ->required()
      ->check(CLI::IsMember({"labeled-queries", "preferences", "qrels"}));
  export_cmd->add_option("--log", log_path, "Annotation log");
  export_cmd->add_option("--depth", export_depth, "Only tasks of this depth (0 = all)")->capture_default_str();
  export_cmd->add_option("--out", out_path, "Output file")->required();
  export_cmd->callback([&] {
    AnnotationStore store(log_path.empty() ? cfg.log : log_path);
    std::vector<json> recs = what == "labeled-queries" ? store.labeled_query_records(export_depth)
                             : what == "qrels"         ? store.qrels_records(export_depth)
                                                       : store.preference_records();
    if (recs.empty()) std::cerr << "warning: no completed tasks; wrote an empty file\n";
    jsonl::write(out_path, recs);
  });

  // ---- trainers ------------------------------------------------------------
  std::string labeled_path, strategy = "labeled", log_out;
  ContrastiveConfig ccfg;
  auto* tr_cmd = app.add_subcommand("train-retriever", "Contrastive fine-tuning of the encoder projection");
  tr_cmd->add_option("--labeled", labeled_path, "Labeled query file")->required();
  tr_cmd->add_option("--corpus", corpus_path, "Chunk record file")->required();
  tr_cmd->add_option("--strategy", strategy, "labeled | mined | mixed")
      ->check(CLI::IsMember({"labeled", "mined", "mixed"}))
      ->capture_default_str();
  tr_cmd->add_option("--mined", ccfg.strategy.mined_count, "Mined negatives per query")->capture_default_str();
  tr_cmd->add_option("--tau", ccfg.tau, "Temperature")->capture_default_str();
  tr_cmd->add_option("--lr", ccfg.lr, "Learning rate")->capture_default_str();
  tr_cmd->add_option("--epochs", ccfg.epochs, "Epochs")->capture_default_str();
  tr_cmd->add_option("--batch", ccfg.batch_size, "Triples per step")->capture_default_str();
  tr_cmd->add_option("--seed", ccfg.seed, "Shuffle seed")->capture_default_str();
  tr_cmd->add_option("--params", params_path, "Initial params (default: fresh random projection)");
  tr_cmd->add_option("--out", out_path, "Output params file")->required();
  tr_cmd->add_option("--log-out", log_out, "Write the training log (JSON) here");
  tr_cmd->callback([&] {
    ccfg.strategy.source = NegativeStrategy::parse(strategy);
    auto init = params_path.empty() ? EncoderParams::random() : load_params(params_path);
    auto result = train_contrastive(load_labeled_queries(labeled_path), ingest(corpus_path), ccfg, std::move(init));
    warn_all(result.log.warnings);
    save_params(result.params, out_path);
    auto log = training_log_to_json(result.log);
    if (!log_out.empty()) std::ofstream(log_out) << log.dump(2) << '\n';
    print(log);
  });

  std::string pairs_path, lr_preset = "desk";
  DpoConfig dcfg;
  double dpo_lr = 0.0;
  auto* td_cmd = app.add_subcommand("train-dpo", "DPO on the bigram policy model");
  td_cmd->add_option("--pairs", pairs_path, "Preference file")->required();
  td_cmd->add_option("--beta", dcfg.beta, "DPO beta")->capture_default_str();
  td_cmd->add_option("--lr", dpo_lr, "Learning rate (overrides --lr-preset)");
  td_cmd->add_option("--lr-preset", lr_preset, "desk (0.05) | full (5e-6)")->check(CLI::IsMember({"desk", "full"}));
  td_cmd->add_option("--epochs", dcfg.epochs, "Epochs")->capture_default_str();
  td_cmd->add_option("--batch", dcfg.batch_size, "Micro-batch size")->capture_default_str();
  td_cmd->add_option("--accum", dcfg.grad_accum_steps, "Gradient accumulation steps")->capture_default_str();
  td_cmd->add_option("--seed", dcfg.seed, "Shuffle seed")->capture_default_str();
  td_cmd->add_option("--out", out_path, "Output policy file (JSON)")->required();
  td_cmd->callback([&] {
    dcfg.lr = dpo_lr > 0 ? dpo_lr : (lr_preset == "full" ? DpoConfig::kFullScaleLr : DpoConfig::kDeskLr);
    auto result = train_dpo(load_preferences(pairs_path), dcfg);
    std::ofstream(out_path) << policy_to_json(result.params).dump() << '\n';
    print(dpo_log_to_json(result.log));
  });

  // ---- evaluation ----------------------------------------------------------
  std::string run_path, qrels_path, ks_spec = "5,10,20", judge_loc;
  bool per_query = false;
  auto* er_cmd = app.add_subcommand("eval-retriever", "MRR / Recall@k / MAP@k");
  er_cmd->add_option("--run", run_path, "Run file {query_id, ranking}");
  er_cmd->add_option("--index", index_path, "Build the run by searching this index with the qrels queries");
  er_cmd->add_option("--qrels", qrels_path, "Qrels file {query_id, query, relevant}")->required();
  er_cmd->add_option("--k", ks_spec, "Comma-separated cutoffs")->capture_default_str();
  er_cmd->add_flag("--per-query", per_query, "Include per-query scores");
  er_cmd->callback([&] {
    auto ks = parse_ks(ks_spec);
    auto qrels = load_qrels(qrels_path);
    RetrievalRun run;
    if (!run_path.empty()) {
      run = load_run(run_path);
    } else {
      auto index = load_index(need(index_path.empty() ? cfg.index : index_path, "--run or --index"));
      std::size_t depth_needed = *std::max_element(ks.begin(), ks.end());
      jsonl::for_each(qrels_path, [&](const json& r, std::size_t) {
        run[r.at("query_id").get<std::string>()] = search(index, require_string(r, "query"), depth_needed).ids();
      });
    }
    print(report_to_json(evaluate_run(run, qrels, ks), per_query));
  });

  auto* rag_cmd = app.add_subcommand("eval-rag", "End-to-end answers scored for faithfulness and relevancy");
  rag_cmd->add_option("--questions", questions_path, "Questions {question_id, question, reference_answer?, relevant?}")
      ->required();
  rag_cmd->add_option("--index", index_path, "Index file");
  rag_cmd->add_option("--judge", judge_loc, "mock | http:<endpoint>");
  rag_cmd->add_option("--llm", llm_loc, "Generator backend");
  rag_cmd->add_option("--k", k, "Chunks retrieved per question")->capture_default_str();
  rag_cmd->callback([&] {
    auto index = std::make_shared<LateInteractionIndex>(load_index(need(index_path.empty() ? cfg.index : index_path, "--index")));
    RagPipeline pipeline(index, make_backend(llm_loc.empty() ? cfg.llm : llm_loc),
                         PipelineOptions{"detailed", cfg.context_budget_chars});
    auto judge = make_judge(judge_loc.empty() ? cfg.judge : judge_loc);
    print(rag_report_to_json(evaluate_rag(load_eval_questions(questions_path), pipeline, *judge, k)));
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
