// SPDX-License-Identifier: Apache-2.0
// Acceptance runner: one PASS/FAIL line per criterion. Exit status is
// nonzero when any criterion fails.
//
//   acceptance [--cli <ragbench binary>]
//
// AGORA_CORPUS=<chunk file> enables the corpus-scale check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "ragbench/ragbench.hpp"
#include "synthetic.hpp"
#include "test_support.hpp"
#include "workbench_fixture.hpp"

using namespace ragbench;
using namespace ragbench::testing;

namespace {

enum class Verdict { Pass, Fail, Skip };

struct Outcome {
  Verdict verdict = Verdict::Pass;
  std::string detail;
};

// Collects failed sub-checks; the first failure message wins.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failure_.empty()) failure_ = what;
  }
  void note(const std::string& s) { notes_ += (notes_.empty() ? "" : ", ") + s; }
  Outcome outcome() const { return {failure_.empty() ? Verdict::Pass : Verdict::Fail, failure_.empty() ? notes_ : failure_}; }

 private:
  std::string failure_;
  std::string notes_;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream o;
  o << std::setprecision(prec) << v;
  return o.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TokenEmbeddingMatrix random_matrix(SplitMix64& rng, std::size_t rows, std::size_t dim) {
  TokenEmbeddingMatrix m{dim, std::vector<double>(rows * dim), {}};
  for (auto& v : m.values) v = rng.normal();
  normalize_rows(m);
  return m;
}

std::string random_text(SplitMix64& rng, std::size_t words) {
  static const std::vector<std::string> vocab = {"ai",   "risk",  "model",   "report", "agency", "safety",
                                                 "bias", "audit", "privacy", "hiring", "notice", "test"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < words; ++i) out.push_back(vocab[rng.below(vocab.size())]);
  return join(out, " ");
}

std::vector<PreferencePair> random_pairs(SplitMix64& rng, std::size_t n) {
  std::vector<PreferencePair> out;
  while (out.size() < n) {
    PreferencePair p{random_text(rng, 1 + rng.below(4)), random_text(rng, 1 + rng.below(5)),
                     random_text(rng, 1 + rng.below(5)), "", ""};
    if (p.chosen != p.rejected) out.push_back(p);
  }
  return out;
}

PolicyParams random_policy(const std::vector<PreferencePair>& pairs, SplitMix64& rng) {
  auto p = PolicyParams::from_pairs(pairs);
  for (auto& v : p.table()) v = rng.normal();
  return p;
}

// ---------------------------------------------------------------------------

Outcome maxsim_oracle() {
  Checks c;
  SplitMix64 rng(2024);
  auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    std::size_t d = 1 + rng.below(16);
    auto q = random_matrix(rng, 1 + rng.below(8), d);
    auto p = random_matrix(rng, 1 + rng.below(8), d);
    double naive = 0;
    for (std::size_t t = 0; t < q.rows(); ++t) {
      double best = -1e300;
      for (std::size_t s = 0; s < p.rows(); ++s) {
        double dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += q.values[t * d + j] * p.values[s * d + j];
        best = std::max(best, dot);
      }
      naive += best;
    }
    worst = std::max(worst, std::abs(maxsim(q, p) - naive));
  }
  double secs = seconds_since(t0);
  c.expect(worst <= 1e-9, "max |diff| " + fmt(worst) + " > 1e-9");
  c.expect(secs < 5.0, "runtime " + fmt(secs) + " s >= 5 s");
  c.note("1000 pairs, max |diff| " + fmt(worst, 3));
  return c.outcome();
}

Outcome infonce_values() {
  Checks c;
  double ln2 = closed_form("ln2");
  double e1 = std::abs(infonce_loss(1.3, 1.3, 1.0) - ln2);
  double e2 = std::abs(infonce_loss(2.0, 1.0, 1.0) - closed_form("infonce_2_1_tau1"));
  c.expect(e1 <= 1e-12, "loss(s,s) off ln 2 by " + fmt(e1));
  c.expect(e2 <= 1e-12, "loss(2,1,1) off by " + fmt(e2));
  double prev = std::numeric_limits<double>::infinity();
  bool mono = true;
  for (int i = 0; i < 100; ++i) {
    double l = infonce_loss(-5.0 + 10.0 * i / 99.0, 0.0, 1.0);
    mono = mono && l < prev;
    prev = l;
  }
  c.expect(mono, "not strictly decreasing over the sweep");
  c.note("errors " + fmt(e1, 2) + ", " + fmt(e2, 2) + "; 100-point sweep strictly decreasing");
  return c.outcome();
}

Outcome contrastive_gradient() {
  Checks c;
  SplitMix64 rng(1234);
  auto t0 = std::chrono::steady_clock::now();
  std::size_t checked = 0;
  double worst = 0;
  for (int trial = 0; trial < 150; ++trial) {
    auto params = EncoderParams::random(8, 8, 0, 500 + trial);
    std::string q = random_text(rng, 1 + rng.below(3));
    std::string p = random_text(rng, 2 + rng.below(4));
    std::string n = random_text(rng, 2 + rng.below(4));
    double tau = 0.5 + rng.uniform();
    std::vector<double> grad;
    batch_loss_and_grad(params, {{&q, &p, &n}}, tau, grad);
    const double h = 1e-5;
    double num2 = 0, diff2 = 0, an2 = 0;
    for (std::size_t k = 0; k < params.projection.size(); ++k) {
      an2 += grad[k] * grad[k];
      auto plus = params, minus = params;
      plus.projection[k] += h;
      minus.projection[k] -= h;
      double fd = (triple_loss(plus, q, p, n, tau) - triple_loss(minus, q, p, n, tau)) / (2 * h);
      num2 += fd * fd;
      diff2 += (fd - grad[k]) * (fd - grad[k]);
    }
    // Skip locally flat losses (tied maxima on both sides).
    if (std::sqrt(num2) < 1e-8 && std::sqrt(an2) < 1e-8) continue;
    worst = std::max(worst, std::sqrt(diff2 / num2));
    ++checked;
  }
  double secs = seconds_since(t0);
  c.expect(checked >= 100, "only " + std::to_string(checked) + " triples checked");
  c.expect(worst < 1e-4, "relative error " + fmt(worst) + " >= 1e-4");
  c.expect(secs < 60, "runtime " + fmt(secs) + " s >= 60 s");
  c.note(std::to_string(checked) + " triples, worst rel err " + fmt(worst, 3));
  return c.outcome();
}

Outcome triple_expansion() {
  Checks c;
  auto ids = [](const std::string& prefix, std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
  };
  std::vector<LabeledQuery> fixture = {{"q1", "q1", ids("p1-", 2), ids("n1-", 3)},
                                       {"q2", "q2", ids("p2-", 1), ids("n2-", 4)},
                                       {"q3", "q3", ids("p3-", 3), {}}};
  auto out = expand_triples(fixture, NegativeStrategy{});
  c.expect(out.triples.size() == 10, std::to_string(out.triples.size()) + " triples, expected 10");
  c.expect(out.warnings.size() == 1, std::to_string(out.warnings.size()) + " warnings, expected 1");
  SplitMix64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<LabeledQuery> labeled;
    std::size_t expected = 0;
    std::size_t nq = 1 + rng.below(8);
    for (std::size_t i = 0; i < nq; ++i) {
      std::size_t p = rng.below(5), n = rng.below(5);
      auto tag = std::to_string(trial) + "-" + std::to_string(i);
      labeled.push_back({"q" + tag, "q" + tag, ids("p" + tag + "-", p), ids("n" + tag + "-", n)});
      expected += p * n;
    }
    auto r = expand_triples(labeled, NegativeStrategy{});
    c.expect(r.triples.size() == expected, "random fixture " + std::to_string(trial) + " violates the count");
  }
  c.note("10 triples, 1 warning; 100 random fixtures");
  return c.outcome();
}

Outcome retriever_learning() {
  Checks c;
  auto fx = make_separable_fixture();
  auto init = EncoderParams::random();
  double before = heldout_mrr(fx, init);
  c.note("untrained MRR " + fmt(before, 3));
  std::map<std::string, std::set<std::string>> positives;
  for (const auto& q : fx.train) positives[q.query].insert(q.positives.begin(), q.positives.end());
  const std::vector<std::pair<NegativeSource, std::string>> strategies = {
      {NegativeSource::Labeled, "labeled"}, {NegativeSource::Mined, "mined"}, {NegativeSource::Mixed, "mixed"}};
  for (const auto& [src, name] : strategies) {
    ContrastiveConfig cfg;
    cfg.strategy = {src, 4};
    cfg.lr = 0.5;
    cfg.epochs = 3;
    auto t0 = std::chrono::steady_clock::now();
    auto r = train_contrastive(fx.train, fx.corpus, cfg, init);
    double secs = seconds_since(t0);
    double after = heldout_mrr(fx, r.params);
    c.expect(after >= 0.9, name + " MRR " + fmt(after, 3) + " < 0.9");
    c.expect(after > before, name + " MRR did not improve");
    c.expect(secs < 120, name + " runtime " + fmt(secs) + " s >= 120 s");
    for (const auto& t : r.triples)
      c.expect(!positives[t.query].count(t.negative), name + ": negative " + t.negative + " is a labeled positive");
    c.note(name + " " + fmt(after, 3) + " in " + fmt(secs, 2) + " s");
  }
  return c.outcome();
}

Outcome dpo_values() {
  Checks c;
  SplitMix64 rng(2);
  double ln2 = closed_form("ln2");
  auto pairs = random_pairs(rng, 50);
  double worst_ln2 = 0, worst_sp = 0;
  for (const auto& pair : pairs) {
    auto theta = random_policy(pairs, rng);
    worst_ln2 = std::max(worst_ln2, std::abs(dpo_loss(pair, theta, theta, 0.1) - ln2));
    auto ref = random_policy(pairs, rng);
    double beta = rng.uniform();
    worst_sp = std::max(worst_sp, std::abs(dpo_loss(pair, theta, ref, beta) -
                                           softplus(-implicit_reward_margin(pair, theta, ref, beta))));
  }
  c.expect(worst_ln2 <= 1e-12, "loss at reference off ln 2 by " + fmt(worst_ln2));
  c.expect(worst_sp <= 1e-12, "softplus identity off by " + fmt(worst_sp));

  auto theta = random_policy(pairs, rng), ref = random_policy(pairs, rng);
  std::vector<double> grad(theta.table().size(), 0.0);
  for (const auto& pair : pairs) accumulate_dpo_grad(pair, theta, ref, 0.0, 1.0, grad);
  c.expect(std::all_of(grad.begin(), grad.end(), [](double g) { return g == 0.0; }), "beta = 0 gives a nonzero gradient");

  auto check_pairs = random_pairs(rng, 120);
  std::size_t checked = 0;
  double worst = 0;
  for (const auto& pair : check_pairs) {
    auto th = random_policy(check_pairs, rng), rf = random_policy(check_pairs, rng);
    double beta = 0.05 + rng.uniform();
    std::vector<double> g(th.table().size(), 0.0);
    accumulate_dpo_grad(pair, th, rf, beta, 1.0, g);
    const double h = 1e-5;
    double num2 = 0, diff2 = 0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      auto plus = th, minus = th;
      plus.table()[k] += h;
      minus.table()[k] -= h;
      double fd = (dpo_loss(pair, plus, rf, beta) - dpo_loss(pair, minus, rf, beta)) / (2 * h);
      num2 += fd * fd;
      diff2 += (fd - g[k]) * (fd - g[k]);
    }
    if (num2 == 0.0) continue;
    worst = std::max(worst, std::sqrt(diff2 / num2));
    ++checked;
  }
  c.expect(checked >= 100, "only " + std::to_string(checked) + " pairs checked");
  c.expect(worst < 1e-4, "gradient relative error " + fmt(worst) + " >= 1e-4");
  c.note("ln2 err " + fmt(worst_ln2, 2) + ", identity err " + fmt(worst_sp, 2) + ", " + std::to_string(checked) +
         " gradient checks, worst " + fmt(worst, 3));
  return c.outcome();
}

Outcome dpo_learning() {
  Checks c;
  auto t0 = std::chrono::steady_clock::now();
  auto pairs = consistent_preferences();
  DpoConfig cfg;
  cfg.beta = 0.1;
  cfg.batch_size = 2;
  cfg.grad_accum_steps = 8;
  cfg.epochs = 100;
  auto r = train_dpo(pairs, cfg);
  double loss = 0, margin = 0;
  for (const auto& p : pairs) {
    loss += dpo_loss(p, r.params, r.reference, cfg.beta);
    margin += implicit_reward_margin(p, r.params, r.reference, cfg.beta);
  }
  loss /= 20;
  margin /= 20;
  c.expect(r.log.updates.size() == 200, std::to_string(r.log.updates.size()) + " updates, expected 200");
  c.expect(margin > 0, "mean margin " + fmt(margin) + " <= 0");
  c.expect(loss < closed_form("ln2"), "mean loss " + fmt(loss) + " >= ln 2");
  SplitMix64 rng(6);
  for (std::size_t n : {1u, 15u, 16u, 17u, 20u, 33u}) {
    DpoConfig one = cfg;
    one.epochs = 1;
    auto e = train_dpo(random_pairs(rng, n), one);
    c.expect(e.log.epochs[0].updates == (n + 15) / 16, std::to_string(n) + " pairs: wrong update count");
  }
  double secs = seconds_since(t0);
  c.expect(secs < 60, "runtime " + fmt(secs) + " s >= 60 s");
  c.note("200 updates, margin " + fmt(margin) + ", loss " + fmt(loss) + ", ceil(n/16) updates per epoch");
  return c.outcome();
}

Outcome metric_oracles() {
  Checks c;
  auto hits = [](const std::vector<std::string>& r, const std::set<std::string>& rel, std::size_t n) {
    std::size_t h = 0;
    for (std::size_t i = 0; i < n && i < r.size(); ++i) h += rel.count(r[i]);
    return h;
  };
  std::size_t cases = 0;
  for (std::size_t n = 1; n <= 6; ++n) {
    std::vector<std::string> items;
    for (std::size_t i = 0; i < n; ++i) items.push_back(std::string(1, static_cast<char>('a' + i)));
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
      if (__builtin_popcount(mask) > 3) continue;
      std::set<std::string> rel;
      for (std::size_t i = 0; i < n; ++i)
        if (mask & (1u << i)) rel.insert(items[i]);
      auto perm = items;
      do {
        RetrievalRun run{{"q", perm}};
        Qrels qrels{{"q", rel}};
        std::size_t first = 0;
        for (std::size_t i = 0; i < perm.size() && !first; ++i)
          if (rel.count(perm[i])) first = i + 1;
        c.expect(mrr(run, qrels) == 1.0 / static_cast<double>(first), "MRR mismatch");
        for (std::size_t k = 1; k <= 6; ++k) {
          double rec = static_cast<double>(hits(perm, rel, k)) / static_cast<double>(rel.size());
          double ap = 0;
          for (std::size_t i = 1; i <= k && i <= perm.size(); ++i)
            if (rel.count(perm[i - 1])) ap += static_cast<double>(hits(perm, rel, i)) / static_cast<double>(i);
          ap /= static_cast<double>(std::min(rel.size(), k));
          c.expect(recall_at_k(run, qrels, k) == rec, "Recall@" + std::to_string(k) + " mismatch");
          c.expect(map_at_k(run, qrels, k) == ap, "MAP@" + std::to_string(k) + " mismatch");
        }
        ++cases;
      } while (std::next_permutation(perm.begin(), perm.end()));
    }
  }
  Qrels q2{{"q1", {"r"}}, {"q2", {"r"}}};
  RetrievalRun r2{{"q1", {"x", "r", "y"}}, {"q2", {"x", "y", "z", "r"}}};
  double m = mrr(r2, q2);
  c.expect(m == 0.375, "hand MRR " + fmt(m));
  RetrievalRun ra{{"q", {"a", "x", "b", "y", "z"}}};
  double ap = map_at_k(ra, {{"q", {"a", "b"}}}, 5);
  c.expect(std::abs(ap - 0.8333333333333334) < 1e-15, "hand AP@5 " + fmt(ap));
  c.note(std::to_string(cases) + " rankings exact; MRR " + fmt(m) + ", AP@5 " + fmt(ap));
  return c.outcome();
}

Outcome faithfulness_checks() {
  Checks c;
  MockJudge judge;
  std::vector<std::string> ctx = {"The act requires notice. Employers must offer an alternative process."};
  double copy = faithfulness(ctx[0], ctx, judge);
  c.expect(copy == 1.0, "verbatim copy scores " + fmt(copy));
  auto fx = load_json("faithfulness_fixture.json");
  auto fctx = fx["contexts"].get<std::vector<std::string>>();
  auto answer = fx["answer"].get<std::string>();
  double first = faithfulness(answer, fctx, judge);
  c.expect(first == 0.5, "2-of-4 fixture scores " + fmt(first));
  for (int i = 0; i < 5; ++i) {
    MockJudge fresh;
    c.expect(faithfulness(answer, fctx, fresh) == first, "non-deterministic score");
  }
  c.note("copy " + fmt(copy) + ", fixture " + fmt(first));
  return c.outcome();
}

Outcome end_to_end() {
  Checks c;
  auto index = std::make_shared<const LateInteractionIndex>(
      build_index(ingest(data_path("fixture_corpus.jsonl")), EncoderParams::random()));
  RagPipeline p(index, make_backend("mock:fixture:" + data_path("mock_rules.jsonl")));
  auto got = p.answer("Who must designate a chief AI officer?", 20);
  auto want = grounded_answer_from_json(load_json("golden_answer.json"));
  c.expect(got.answer_text == want.answer_text, "answer text differs from golden");
  c.expect(got.cited_chunk_ids == want.cited_chunk_ids, "cited ids differ from golden");
  c.expect(got.context_chunk_ids == want.context_chunk_ids, "context ids differ from golden");
  c.expect(got.generator_preset == want.generator_preset, "preset differs from golden");
  c.expect(got.retrieval.hits.size() == want.retrieval.hits.size(), "retrieval length differs from golden");
  for (std::size_t i = 0; i < std::min(got.retrieval.hits.size(), want.retrieval.hits.size()); ++i) {
    c.expect(got.retrieval.hits[i].chunk_id == want.retrieval.hits[i].chunk_id, "retrieval order differs at " + std::to_string(i));
    c.expect(std::abs(got.retrieval.hits[i].score - want.retrieval.hits[i].score) <= 1e-12,
             "retrieval score differs at " + std::to_string(i));
  }
  SplitMix64 rng(31);
  auto cite_first = make_backend("mock:cite-first");
  RagPipeline fuzz(index, cite_first);
  RagPipeline rules(index, make_backend("mock:fixture:" + data_path("mock_rules.jsonl")));
  static const std::vector<std::string> words = {"agency", "risk", "hiring", "model", "report", "bias",
                                                 "officer", "test", "notify", "framework", "developers"};
  std::size_t cited = 0;
  for (int i = 0; i < 100; ++i) {
    std::string q;
    std::size_t n = 1 + rng.below(5);
    for (std::size_t w = 0; w < n; ++w) q += words[rng.below(words.size())] + " ";
    std::size_t k = 1 + rng.below(7);
    for (const auto* pipe : {&fuzz, &rules}) {
      auto a = pipe->answer(q, k);
      auto ids = a.retrieval.ids();
      std::set<std::string> allowed(ids.begin(), ids.end());
      for (const auto& id : a.cited_chunk_ids) c.expect(allowed.count(id) > 0, "cited " + id + " not retrieved for '" + q + "'");
      cited += a.cited_chunk_ids.size();
    }
  }
  auto dev = rules.answer("What must developers report?", 20);
  c.expect(dev.cited_chunk_ids == std::vector<std::string>{"eo-2"}, "unretrieved citation was not filtered");
  c.note("golden answer matches; 100 fuzzed queries, " + std::to_string(cited) + " citations all retrieved");
  return c.outcome();
}

int run_cli(const std::string& cli, const std::string& args) {
  std::string cmd = "\"" + cli + "\" " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

Outcome annotation_round_trip(const std::string& cli) {
  Checks c;
  TempDir dir;
  auto log = dir.file("labels.jsonl");
  auto corpus_path = data_path("fixture_corpus.jsonl");
  auto index = std::make_shared<const LateInteractionIndex>(build_index(ingest(corpus_path), EncoderParams::random()));
  std::string exports[3];
  {
    auto store = std::make_shared<AnnotationStore>(log);
    RunningWorkbench wb(store, index, make_backend("mock"));
    json queries = json::array({{{"query_id", "q1"}, {"query", "chief AI officer"}},
                                {{"query_id", "q2"}, {"query", "automated hiring notice"}},
                                {{"query_id", "q3"}, {"query", "risk management framework"}}});
    auto rel = wb.post("/tasks/relevance", {{"queries", queries}, {"depth", 5}});
    c.expect(rel && rel->status == 200, "POST /tasks/relevance failed");
    json questions = json::array({{{"question_id", "p1"}, {"question", "Who designates an officer?"}, {"context", "Agencies designate an officer."}},
                                  {{"question_id", "p2"}, {"question", "What is disclosed?"}, {"context", "Employers disclose automated tools."}}});
    auto pref = wb.post("/tasks/preference", {{"questions", questions}});
    c.expect(pref && pref->status == 200, "POST /tasks/preference failed");
    if (!rel || rel->status != 200 || !pref || pref->status != 200) return c.outcome();

    std::size_t labels = 0;
    auto rel_ids = json::parse(rel->body)["task_ids"];
    for (const auto& id : rel_ids) {
      auto task = wb.get("/tasks/" + id.get<std::string>());
      c.expect(task && task->status == 200, "GET task failed");
      auto cands = json::parse(task->body)["candidates"];
      for (std::size_t i = 0; i < cands.size(); ++i) {
        json payload = {{"labels", {{cands[i]["chunk_id"].get<std::string>(), i < 2 ? "relevant" : "irrelevant"}}}};
        auto r = wb.post("/labels", {{"task_id", id}, {"payload", payload}, {"annotator_id", i % 2 ? "ann-b" : "ann-a"},
                                     {"token", id.get<std::string>() + "-" + std::to_string(i)}});
        c.expect(r && r->status == 200, "POST /labels failed");
        ++labels;
      }
    }
    auto pref_ids = json::parse(pref->body)["task_ids"];
    for (const auto& id : pref_ids) {
      for (const char* who : {"ann-a", "ann-b"}) {
        auto r = wb.post("/labels", {{"task_id", id}, {"payload", {{"choice", std::string(who) == "ann-a" ? "A" : "B"}}}, {"annotator_id", who}});
        c.expect(r && r->status == 200, "POST preference label failed");
        ++labels;
      }
    }
    const char* paths[3] = {"/export/labeled-queries", "/export/qrels", "/export/preferences"};
    for (int i = 0; i < 3; ++i) {
      auto r = wb.get(paths[i]);
      c.expect(r && r->status == 200 && !r->body.empty(), std::string("empty or failed export ") + paths[i]);
      if (r) exports[i] = r->body;
    }
    c.note(std::to_string(labels) + " labels posted");
  }
  write_text(dir.file("labeled.jsonl"), exports[0]);
  write_text(dir.file("qrels.jsonl"), exports[1]);
  write_text(dir.file("prefs.jsonl"), exports[2]);

  try {
    auto labeled = load_labeled_queries(dir.file("labeled.jsonl"));
    ContrastiveConfig cfg;
    cfg.epochs = 2;
    auto tr = train_contrastive(labeled, ingest(corpus_path), cfg, EncoderParams::random());
    c.expect(tr.log.triple_count > 0, "no training triples from the export");
    auto pairs = load_preferences(dir.file("prefs.jsonl"));
    DpoConfig dcfg;
    dcfg.epochs = 2;
    auto dr = train_dpo(pairs, dcfg);
    c.expect(!dr.log.updates.empty(), "no DPO updates from the export");
    c.note(std::to_string(labeled.size()) + " labeled queries, " + std::to_string(pairs.size()) + " pairs trained");
  } catch (const std::exception& e) {
    c.expect(false, std::string("training on exports failed: ") + e.what());
  }
  if (!cli.empty()) {
    c.expect(run_cli(cli, "train-retriever --labeled " + dir.file("labeled.jsonl") + " --corpus " + corpus_path +
                              " --epochs 1 --out " + dir.file("params.bin")) == 0,
             "ragbench train-retriever failed");
    c.expect(run_cli(cli, "train-dpo --pairs " + dir.file("prefs.jsonl") + " --epochs 1 --out " + dir.file("policy.json")) == 0,
             "ragbench train-dpo failed");
    c.expect(run_cli(cli, "export labeled-queries --log " + log + " --out " + dir.file("cli_labeled.jsonl")) == 0 &&
                 read_text(dir.file("cli_labeled.jsonl")) == exports[0],
             "ragbench export differs from the HTTP export");
    c.note("CLI trainers consumed the exports");
  }

  AnnotationStore replay(log);
  c.expect(jsonl::dump(replay.labeled_query_records()) == exports[0], "replayed labeled-queries export differs");
  c.expect(jsonl::dump(replay.qrels_records()) == exports[1], "replayed qrels export differs");
  c.expect(jsonl::dump(replay.preference_records()) == exports[2], "replayed preferences export differs");
  c.note("replay reproduces all 3 exports");
  return c.outcome();
}

Outcome agora_corpus() {
  const char* path = std::getenv("AGORA_CORPUS");
  if (!path || !*path) return {Verdict::Skip, "AGORA_CORPUS not set"};
  Checks c;
  auto s = stats(ingest(path));
  c.expect(s.doc_count == 947, std::to_string(s.doc_count) + " documents, expected 947");
  c.expect(s.chunk_count == 7893, std::to_string(s.chunk_count) + " chunks, expected 7893");
  c.expect(std::abs(s.mean_seg_words - 226) <= 1, "mean segment length " + fmt(s.mean_seg_words) + " outside 226 +/- 1");
  c.note(std::to_string(s.doc_count) + " documents, " + std::to_string(s.chunk_count) + " chunks, mean " +
         fmt(s.mean_seg_words) + " words");
  return c.outcome();
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli;
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--cli" && i + 1 < argc) {
      cli = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--cli <ragbench binary>]\n";
      return 2;
    }
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"maxsim-oracle", maxsim_oracle},
      {"infonce-analytic", infonce_values},
      {"contrastive-gradient-check", contrastive_gradient},
      {"triple-expansion", triple_expansion},
      {"retriever-learning", retriever_learning},
      {"dpo-analytic", dpo_values},
      {"dpo-learning", dpo_learning},
      {"metric-oracles", metric_oracles},
      {"faithfulness-mock-judge", faithfulness_checks},
      {"end-to-end-pipeline", end_to_end},
      {"annotation-round-trip", [&] { return annotation_round_trip(cli); }},
      {"agora-corpus", agora_corpus},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {Verdict::Fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.verdict == Verdict::Pass ? "PASS" : o.verdict == Verdict::Fail ? "FAIL" : "SKIP";
    failed += o.verdict == Verdict::Fail;
    std::cout << tag << "  " << std::left << std::setw(28) << name << " " << std::right << std::fixed
              << std::setprecision(2) << seconds_since(t0) << " s  " << std::defaultfloat << o.detail << std::endl;
  }
  std::cout << (failed ? "FAILED: " + std::to_string(failed) + " criteria" : std::string("all criteria passed")) << std::endl;
  return failed ? 1 : 0;
}
