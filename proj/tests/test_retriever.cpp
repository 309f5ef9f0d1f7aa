// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <chrono>
#include <fstream>

#include "ragbench/retriever.hpp"
#include "test_support.hpp"

using namespace ragbench;
using namespace ragbench::testing;

namespace {

TokenEmbeddingMatrix random_matrix(SplitMix64& rng, std::size_t rows, std::size_t dim) {
  TokenEmbeddingMatrix m{dim, std::vector<double>(rows * dim), {}};
  for (auto& v : m.values) v = rng.normal();
  normalize_rows(m);
  return m;
}

double naive_maxsim(const TokenEmbeddingMatrix& q, const TokenEmbeddingMatrix& p) {
  double total = 0;
  for (std::size_t t = 0; t < q.rows(); ++t) {
    double best = -1e300;
    for (std::size_t s = 0; s < p.rows(); ++s) {
      double d = 0;
      for (std::size_t j = 0; j < q.dim; ++j) d += q.values[t * q.dim + j] * p.values[s * p.dim + j];
      if (d > best) best = d;
    }
    total += best;
  }
  return total;
}

TokenEmbeddingMatrix permute_rows(const TokenEmbeddingMatrix& m, std::vector<std::size_t> perm) {
  TokenEmbeddingMatrix out{m.dim, {}, {}};
  for (auto r : perm) out.values.insert(out.values.end(), m.row(r).begin(), m.row(r).end());
  return out;
}

LateInteractionIndex fixture_index() {
  return build_index(ingest(data_path("fixture_corpus.jsonl")), EncoderParams::random(64, 32));
}

}  // namespace

TEST(MaxSim, MatchesNaiveOracleOnRandomPairs) {
  SplitMix64 rng(2024);
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 1000; ++i) {
    std::size_t d = 1 + rng.below(16);
    auto q = random_matrix(rng, 1 + rng.below(8), d);
    auto p = random_matrix(rng, 1 + rng.below(8), d);
    ASSERT_NEAR(maxsim(q, p), naive_maxsim(q, p), 1e-9);
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 5.0);
}

TEST(MaxSim, GoldenValueFromOracle) {
  auto g = load_json("golden_embedding.json");
  auto p = EncoderParams::random();
  EXPECT_NEAR(maxsim(embed("ai governance", p), embed("governance of ai systems", p)),
              g["maxsim_ai_governance_vs_governance_of_ai_systems"].get<double>(), 1e-12);
}

TEST(MaxSim, InvariantToPassageRowOrder) {
  SplitMix64 rng(5);
  for (int i = 0; i < 100; ++i) {
    auto q = random_matrix(rng, 4, 8);
    auto p = random_matrix(rng, 6, 8);
    std::vector<std::size_t> perm{5, 3, 1, 0, 2, 4};
    EXPECT_NEAR(maxsim(q, p), maxsim(q, permute_rows(p, perm)), 1e-14);
  }
}

TEST(MaxSim, NonDecreasingWhenPassageGrows) {
  SplitMix64 rng(6);
  for (int i = 0; i < 100; ++i) {
    auto q = random_matrix(rng, 3, 8);
    auto p = random_matrix(rng, 4, 8);
    auto extra = random_matrix(rng, 1, 8);
    auto grown = p;
    grown.values.insert(grown.values.end(), extra.values.begin(), extra.values.end());
    EXPECT_GE(maxsim(q, grown), maxsim(q, p));
  }
}

TEST(MaxSim, BoundedByQueryLength) {
  SplitMix64 rng(7);
  for (int i = 0; i < 100; ++i) {
    auto q = random_matrix(rng, 1 + rng.below(8), 8);
    auto p = random_matrix(rng, 1 + rng.below(8), 8);
    double s = maxsim(q, p);
    EXPECT_LE(s, static_cast<double>(q.rows()) + 1e-12);
    EXPECT_GE(s, -static_cast<double>(q.rows()) - 1e-12);
  }
  auto q = random_matrix(rng, 3, 8);
  EXPECT_NEAR(maxsim(q, q), 3.0, 1e-12);
}

TEST(MaxSim, ArgmaxAgreesWithScore) {
  SplitMix64 rng(8);
  for (int i = 0; i < 100; ++i) {
    auto q = random_matrix(rng, 5, 8);
    auto p = random_matrix(rng, 7, 8);
    std::vector<std::size_t> win;
    double s = maxsim_argmax(q, p, win);
    ASSERT_EQ(win.size(), q.rows());
    double recomposed = 0;
    for (std::size_t t = 0; t < q.rows(); ++t) recomposed += dot(q.row(t), p.row(win[t]));
    EXPECT_NEAR(s, recomposed, 1e-14);
    EXPECT_NEAR(s, maxsim(q, p), 1e-14);
  }
}

TEST(MaxSim, ErrorsOnEmptyOrMismatchedInput) {
  SplitMix64 rng(9);
  auto a = random_matrix(rng, 2, 4);
  auto b = random_matrix(rng, 2, 5);
  TokenEmbeddingMatrix empty{4, {}, {}};
  EXPECT_THROW(maxsim(a, b), Error);
  EXPECT_THROW(maxsim(a, empty), Error);
  EXPECT_THROW(maxsim(empty, a), Error);
}

TEST(Index, BuildsOneEntryPerChunkSortedById) {
  auto index = fixture_index();
  EXPECT_EQ(index.size(), 7u);
  EXPECT_EQ(index.dim(), 32u);
  for (std::size_t i = 1; i < index.size(); ++i) EXPECT_LT(index.entries()[i - 1].chunk_id, index.entries()[i].chunk_id);
  ASSERT_NE(index.find("nist-3"), nullptr);
  EXPECT_EQ(index.find("missing"), nullptr);
  EXPECT_EQ(index.find("ca-1")->rendered.rfind("document: California", 0), 0u);
}

TEST(Index, EmptyCorpusIsAnError) { EXPECT_THROW(build_index(Corpus{}, EncoderParams::random(8, 4)), Error); }

TEST(Index, RejectsDuplicateAndMisdimensionedEntries) {
  auto p = EncoderParams::random(8, 4);
  auto m = embed("ai", p);
  EXPECT_THROW(LateInteractionIndex(p, {{"a", "ai", m}, {"a", "ai", m}}), Error);
  auto wrong = embed("ai", EncoderParams::random(8, 5));
  EXPECT_THROW(LateInteractionIndex(p, {{"a", "ai", wrong}}), Error);
}

TEST(Search, ChunkTextRetrievesItselfFirst) {
  auto index = fixture_index();
  auto corpus = ingest(data_path("fixture_corpus.jsonl"));
  for (const auto& c : corpus.chunks()) {
    auto r = search(index, render_chunk(c), 3);
    ASSERT_FALSE(r.hits.empty());
    EXPECT_EQ(r.hits[0].chunk_id, c.chunk_id);
  }
}

TEST(Search, ResultsSortedAndPrefixConsistentAcrossK) {
  auto index = fixture_index();
  auto full = search(index, "risk management bias", 100);
  EXPECT_EQ(full.hits.size(), index.size());
  for (std::size_t i = 1; i < full.hits.size(); ++i) EXPECT_TRUE(!hit_before(full.hits[i], full.hits[i - 1]));
  for (std::size_t k = 1; k <= index.size(); ++k) {
    auto part = search(index, "risk management bias", k);
    ASSERT_EQ(part.hits.size(), k);
    for (std::size_t i = 0; i < k; ++i) {
      EXPECT_EQ(part.hits[i].chunk_id, full.hits[i].chunk_id);
      EXPECT_EQ(part.hits[i].score, full.hits[i].score);
    }
  }
}

TEST(Search, TiesBreakByChunkId) {
  auto p = EncoderParams::random(8, 4);
  auto m = embed("same text", p);
  LateInteractionIndex index(p, {{"c", "same text", m}, {"a", "same text", m}, {"b", "same text", m}});
  auto r = search(index, "same text", 3);
  EXPECT_EQ(r.ids(), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(Search, EmptyQueryAndZeroKAreErrors) {
  auto index = fixture_index();
  EXPECT_THROW(search(index, "", 5), Error);
  EXPECT_THROW(search(index, " ?! ", 5), Error);
  EXPECT_THROW(search(index, "risk", 0), Error);
}

TEST(Persistence, RoundTripGivesIdenticalSearch) {
  TempDir dir;
  auto index = fixture_index();
  save_index(index, dir.file("x.idx"));
  auto again = load_index(dir.file("x.idx"));
  EXPECT_EQ(again.encoder_fingerprint(), index.encoder_fingerprint());
  EXPECT_EQ(again.size(), index.size());
  auto a = search(index, "chief artificial intelligence officer", 7);
  auto b = search(again, "chief artificial intelligence officer", 7);
  ASSERT_EQ(a.hits.size(), b.hits.size());
  for (std::size_t i = 0; i < a.hits.size(); ++i) {
    EXPECT_EQ(a.hits[i].chunk_id, b.hits[i].chunk_id);
    EXPECT_EQ(a.hits[i].score, b.hits[i].score);
  }
}

TEST(Persistence, DetectsCorruptionAndForeignFiles) {
  TempDir dir;
  auto index = fixture_index();
  save_index(index, dir.file("x.idx"));
  auto bytes = read_text(dir.file("x.idx"));
  auto tampered = bytes;
  tampered[8 + 8 * 6 + 3] ^= 0x10;  // inside the projection
  write_text(dir.file("t.idx"), tampered);
  EXPECT_THROW(load_index(dir.file("t.idx")), Error);
  write_text(dir.file("short.idx"), bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_index(dir.file("short.idx")), Error);
  write_text(dir.file("foreign.idx"), "hello world, not an index");
  EXPECT_THROW(load_index(dir.file("foreign.idx")), Error);
  EXPECT_THROW(load_index(dir.file("missing.idx")), Error);
}

TEST(RankedListJson, RoundTrip) {
  RankedList r{"q", {{"a", 1.5}, {"b", 0.25}}};
  auto back = ranked_list_from_json(ranked_list_to_json(r));
  EXPECT_EQ(back.query, "q");
  EXPECT_EQ(back.ids(), r.ids());
  EXPECT_EQ(back.hits[1].score, 0.25);
}
