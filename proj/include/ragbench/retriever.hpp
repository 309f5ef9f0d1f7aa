// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "ragbench/corpus.hpp"
#include "ragbench/encoder.hpp"

namespace ragbench {

/// Late-interaction score: sum over query rows of the best dot product
/// against any passage row.
inline double maxsim(const TokenEmbeddingMatrix& q, const TokenEmbeddingMatrix& p) {
  if (q.empty() || p.empty()) throw Error("maxsim: empty matrix");
  if (q.dim != p.dim) throw Error("maxsim: dimension mismatch");
  double score = 0.0;
  for (std::size_t t = 0; t < q.rows(); ++t) {
    auto u = q.row(t);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < p.rows(); ++s) best = std::max(best, dot(u, p.row(s)));
    score += best;
  }
  return score;
}

/// maxsim plus, for every query row, the index of the passage row that won.
/// Ties go to the lowest passage row.
inline double maxsim_argmax(const TokenEmbeddingMatrix& q, const TokenEmbeddingMatrix& p,
                            std::vector<std::size_t>& winners) {
  if (q.empty() || p.empty()) throw Error("maxsim: empty matrix");
  if (q.dim != p.dim) throw Error("maxsim: dimension mismatch");
  winners.assign(q.rows(), 0);
  double score = 0.0;
  for (std::size_t t = 0; t < q.rows(); ++t) {
    auto u = q.row(t);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < p.rows(); ++s) {
      double v = dot(u, p.row(s));
      if (v > best) {
        best = v;
        winners[t] = s;
      }
    }
    score += best;
  }
  return score;
}

struct Hit {
  std::string chunk_id;
  double score = 0.0;
};

struct RankedList {
  std::string query;
  std::vector<Hit> hits;  // descending score, ties by ascending chunk_id

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(hits.size());
    for (const auto& h : hits) out.push_back(h.chunk_id);
    return out;
  }
};

struct IndexEntry {
  std::string chunk_id;
  std::string rendered;
  TokenEmbeddingMatrix matrix;
};

/// Exhaustive late-interaction index. Entries are kept sorted by chunk_id;
/// the encoder used at build time travels with the index so queries are
/// always embedded with matching parameters.
class LateInteractionIndex {
 public:
  LateInteractionIndex() = default;
  LateInteractionIndex(EncoderParams params, std::vector<IndexEntry> entries, std::vector<std::string> skipped = {})
      : params_(std::move(params)), entries_(std::move(entries)), skipped_(std::move(skipped)) {
    std::sort(entries_.begin(), entries_.end(),
              [](const IndexEntry& a, const IndexEntry& b) { return a.chunk_id < b.chunk_id; });
    for (std::size_t i = 1; i < entries_.size(); ++i)
      if (entries_[i].chunk_id == entries_[i - 1].chunk_id) throw Error("index: duplicate chunk_id " + entries_[i].chunk_id);
    for (const auto& e : entries_)
      if (e.matrix.dim != params_.out_dim) throw Error("index: entry dimension differs from encoder dimension");
    fingerprint_ = params_.fingerprint();
  }

  std::size_t dim() const { return params_.out_dim; }
  std::size_t size() const { return entries_.size(); }
  std::uint64_t encoder_fingerprint() const { return fingerprint_; }
  const EncoderParams& params() const { return params_; }
  const std::vector<IndexEntry>& entries() const { return entries_; }
  const std::vector<std::string>& skipped() const { return skipped_; }

  const IndexEntry* find(const std::string& chunk_id) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), chunk_id,
                               [](const IndexEntry& e, const std::string& id) { return e.chunk_id < id; });
    return (it != entries_.end() && it->chunk_id == chunk_id) ? &*it : nullptr;
  }

 private:
  EncoderParams params_;
  std::vector<IndexEntry> entries_;
  std::vector<std::string> skipped_;
  std::uint64_t fingerprint_ = 0;
};

/// Renders and embeds every chunk. Chunks whose rendering yields no tokens
/// are skipped and recorded in `skipped()`.
inline LateInteractionIndex build_index(const Corpus& corpus, const EncoderParams& params,
                                        Warnings* warnings = nullptr) {
  if (corpus.empty()) throw Error("cannot build an index over an empty corpus");
  std::vector<IndexEntry> entries;
  std::vector<std::string> skipped;
  entries.reserve(corpus.chunk_count());
  for (const auto& c : corpus.chunks()) {
    std::string rendered = render_chunk(c);
    if (tokenize(rendered).empty()) {
      skipped.push_back(c.chunk_id);
      if (warnings) warnings->push_back("skipped chunk with empty token stream: " + c.chunk_id);
      continue;
    }
    entries.push_back({c.chunk_id, rendered, embed(rendered, params)});
  }
  if (entries.empty()) throw Error("index build produced no entries");
  return LateInteractionIndex(params, std::move(entries), std::move(skipped));
}

inline bool hit_before(const Hit& a, const Hit& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.chunk_id < b.chunk_id;
}

/// Scores a pre-embedded query against every entry and keeps the top k.
/// k larger than the index returns every entry ranked.
inline RankedList search_embedded(const LateInteractionIndex& index, const TokenEmbeddingMatrix& q,
                                  std::size_t k, std::string query_text = {}) {
  if (k == 0) throw Error("search: k must be >= 1");
  RankedList out;
  out.query = std::move(query_text);
  out.hits.reserve(index.size());
  for (const auto& e : index.entries()) out.hits.push_back({e.chunk_id, maxsim(q, e.matrix)});
  std::size_t keep = std::min(k, out.hits.size());
  std::partial_sort(out.hits.begin(), out.hits.begin() + static_cast<std::ptrdiff_t>(keep), out.hits.end(), hit_before);
  out.hits.resize(keep);
  return out;
}

inline RankedList search(const LateInteractionIndex& index, const std::string& query, std::size_t k = 20) {
  if (tokenize(query).empty()) throw Error("search: empty query");
  return search_embedded(index, embed(query, index.params()), k, query);
}

// ---------------------------------------------------------------------------
// Binary index file (little-endian host order):
//   magic "RBIX0001", u64 dim, u64 entry count, u64 encoder fingerprint,
//   encoder params (u64 base_dim, u64 out_dim, u64 hash_seed, f64 projection[]),
//   per entry: u64 len + chunk_id, u64 len + rendered text, u64 T, f64 matrix[T*dim].

namespace detail {
inline void put_u64(std::ostream& o, std::uint64_t v) { o.write(reinterpret_cast<const char*>(&v), sizeof v); }
inline void put_str(std::ostream& o, const std::string& s) {
  put_u64(o, s.size());
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void put_f64s(std::ostream& o, const std::vector<double>& v) {
  o.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}
inline std::uint64_t get_u64(std::istream& i) {
  std::uint64_t v = 0;
  if (!i.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error("index file truncated");
  return v;
}
inline std::string get_str(std::istream& i) {
  auto n = get_u64(i);
  if (n > (1ULL << 32)) throw Error("index file corrupt: string length");
  std::string s(n, '\0');
  if (!i.read(s.data(), static_cast<std::streamsize>(n))) throw Error("index file truncated");
  return s;
}
inline std::vector<double> get_f64s(std::istream& i, std::size_t n) {
  std::vector<double> v(n);
  if (!i.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double))))
    throw Error("index file truncated");
  return v;
}
}  // namespace detail

inline void save_index(const LateInteractionIndex& index, const std::string& path) {
  std::ofstream o(path, std::ios::binary | std::ios::trunc);
  if (!o) throw Error("cannot write index: " + path);
  o.write("RBIX0001", 8);
  detail::put_u64(o, index.dim());
  detail::put_u64(o, index.size());
  detail::put_u64(o, index.encoder_fingerprint());
  const auto& p = index.params();
  detail::put_u64(o, p.base_dim);
  detail::put_u64(o, p.out_dim);
  detail::put_u64(o, p.hash_seed);
  detail::put_f64s(o, p.projection);
  for (const auto& e : index.entries()) {
    detail::put_str(o, e.chunk_id);
    detail::put_str(o, e.rendered);
    detail::put_u64(o, e.matrix.rows());
    detail::put_f64s(o, e.matrix.values);
  }
  if (!o) throw Error("failed writing index: " + path);
}

inline LateInteractionIndex load_index(const std::string& path) {
  std::ifstream i(path, std::ios::binary);
  if (!i) throw Error("cannot open index: " + path);
  char magic[8];
  if (!i.read(magic, 8) || std::string(magic, 8) != "RBIX0001") throw Error("not an index file: " + path);
  auto dim = detail::get_u64(i);
  auto count = detail::get_u64(i);
  auto fp = detail::get_u64(i);
  EncoderParams p;
  p.base_dim = detail::get_u64(i);
  p.out_dim = detail::get_u64(i);
  p.hash_seed = detail::get_u64(i);
  if (p.out_dim != dim || p.base_dim * p.out_dim > (1ULL << 28)) throw Error("index file corrupt: header");
  p.projection = detail::get_f64s(i, p.base_dim * p.out_dim);
  std::vector<IndexEntry> entries;
  entries.reserve(count);
  for (std::uint64_t n = 0; n < count; ++n) {
    IndexEntry e;
    e.chunk_id = detail::get_str(i);
    e.rendered = detail::get_str(i);
    auto rows = detail::get_u64(i);
    e.matrix.dim = dim;
    e.matrix.values = detail::get_f64s(i, rows * dim);
    e.matrix.tokens = tokenize(e.rendered);
    entries.push_back(std::move(e));
  }
  LateInteractionIndex index(std::move(p), std::move(entries));
  if (index.encoder_fingerprint() != fp) throw Error("index encoder fingerprint does not match stored parameters");
  return index;
}

inline json ranked_list_to_json(const RankedList& r) {
  json hits = json::array();
  for (const auto& h : r.hits) hits.push_back({{"chunk_id", h.chunk_id}, {"score", h.score}});
  return {{"query", r.query}, {"hits", hits}};
}

inline RankedList ranked_list_from_json(const json& j) {
  RankedList r;
  r.query = j.value("query", std::string{});
  for (const auto& h : j.at("hits")) r.hits.push_back({h.at("chunk_id").get<std::string>(), h.at("score").get<double>()});
  return r;
}

}  // namespace ragbench
