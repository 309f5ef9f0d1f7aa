// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "httplib.h"
#include "ragbench/common.hpp"

namespace ragbench {

/// Per-token embeddings of one text, row-major T x dim. Rows are unit norm.
struct TokenEmbeddingMatrix {
  std::size_t dim = 0;
  std::vector<double> values;
  std::vector<std::string> tokens;

  std::size_t rows() const { return dim == 0 ? 0 : values.size() / dim; }
  bool empty() const { return rows() == 0; }
  std::span<const double> row(std::size_t t) const { return {values.data() + t * dim, dim}; }
  std::span<double> row(std::size_t t) { return {values.data() + t * dim, dim}; }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Normalizes every row in place; throws on a zero or non-finite row.
inline void normalize_rows(TokenEmbeddingMatrix& m) {
  for (std::size_t t = 0; t < m.rows(); ++t) {
    auto r = m.row(t);
    for (double v : r)
      if (!std::isfinite(v)) throw Error("non-finite embedding");
    double n = std::sqrt(dot(r, r));
    if (!(n > 0.0)) throw Error("zero-norm embedding row");
    for (double& v : r) v /= n;
  }
}

/// Lowercases ASCII and splits on runs of characters that are not ASCII
/// letters or digits. Bytes >= 0x80 are kept inside tokens so UTF-8 words
/// survive intact.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// Parameters of the hashed-embedding encoder. Each token owns a
/// pseudo-random base vector of width base_dim derived from
/// (token, hash_seed); the trainable part is the base_dim x out_dim
/// projection (row-major).
struct EncoderParams {
  std::size_t base_dim = 256;
  std::size_t out_dim = 64;
  std::uint64_t hash_seed = 0;
  std::vector<double> projection;

  double& at(std::size_t i, std::size_t j) { return projection[i * out_dim + j]; }
  double at(std::size_t i, std::size_t j) const { return projection[i * out_dim + j]; }

  bool finite() const {
    return std::all_of(projection.begin(), projection.end(), [](double v) { return std::isfinite(v); });
  }

  /// Gaussian projection with entries N(0, 1/base_dim), seeded.
  static EncoderParams random(std::size_t base_dim = 256, std::size_t out_dim = 64, std::uint64_t hash_seed = 0,
                              std::uint64_t init_seed = 1) {
    EncoderParams p{base_dim, out_dim, hash_seed, std::vector<double>(base_dim * out_dim)};
    SplitMix64 rng(init_seed);
    double scale = 1.0 / std::sqrt(static_cast<double>(base_dim));
    for (auto& v : p.projection) v = rng.normal() * scale;
    return p;
  }

  static EncoderParams identity(std::size_t dim, std::uint64_t hash_seed = 0) {
    EncoderParams p{dim, dim, hash_seed, std::vector<double>(dim * dim, 0.0)};
    for (std::size_t i = 0; i < dim; ++i) p.at(i, i) = 1.0;
    return p;
  }

  /// FNV-1a over the header and the raw projection bytes.
  std::uint64_t fingerprint() const {
    std::string buf;
    auto put = [&](const void* p, std::size_t n) { buf.append(static_cast<const char*>(p), n); };
    std::uint64_t hdr[3] = {base_dim, out_dim, hash_seed};
    put(hdr, sizeof hdr);
    put(projection.data(), projection.size() * sizeof(double));
    return fnv1a64(buf);
  }
};

/// Base vector for a token: base_dim standard normals drawn from a
/// SplitMix64 stream seeded with fnv1a64(token) xor hash_seed, scaled to
/// unit length.
inline std::vector<double> base_vector(std::string_view token, std::size_t base_dim, std::uint64_t hash_seed) {
  SplitMix64 rng(fnv1a64(token) ^ hash_seed);
  std::vector<double> v(base_dim);
  double n2 = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    n2 += x * x;
  }
  double n = std::sqrt(n2);
  for (auto& x : v) x /= n;
  return v;
}

/// Embedding of one text together with the intermediate values needed to
/// push gradients back into the projection.
struct EmbeddingTrace {
  TokenEmbeddingMatrix matrix;
  std::vector<std::vector<double>> bases;  // per token, base_dim
  std::vector<double> norms;               // per token, |base * P| before normalization
};

inline EmbeddingTrace embed_traced(std::string_view text, const EncoderParams& params) {
  auto toks = tokenize(text);
  if (toks.empty()) throw Error("empty input");
  const std::size_t d0 = params.base_dim, d = params.out_dim;
  if (params.projection.size() != d0 * d) throw Error("encoder projection has wrong size");
  EmbeddingTrace tr;
  tr.matrix.dim = d;
  tr.matrix.values.assign(toks.size() * d, 0.0);
  tr.bases.reserve(toks.size());
  for (std::size_t t = 0; t < toks.size(); ++t) {
    auto b = base_vector(toks[t], d0, params.hash_seed);
    auto row = tr.matrix.row(t);
    for (std::size_t i = 0; i < d0; ++i) {
      const double bi = b[i];
      const double* prow = params.projection.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += bi * prow[j];
    }
    double n = std::sqrt(dot(row, row));
    if (!(n > 0.0) || !std::isfinite(n)) throw Error("degenerate embedding for token '" + toks[t] + "'");
    for (auto& v : row) v /= n;
    tr.norms.push_back(n);
    tr.bases.push_back(std::move(b));
  }
  tr.matrix.tokens = std::move(toks);
  return tr;
}

/// Embeds `text` with the built-in encoder: hashed base vectors, projected
/// and L2-normalized per token.
inline TokenEmbeddingMatrix embed(std::string_view text, const EncoderParams& params) {
  return embed_traced(text, params).matrix;
}

/// Accumulates into `grad` (same layout as the projection) the gradient of
/// a scalar loss given dL/d(row) for each normalized output row.
inline void backprop_embedding(const EmbeddingTrace& tr, const TokenEmbeddingMatrix& row_grads,
                               std::vector<double>& grad, std::size_t out_dim) {
  const std::size_t d = out_dim;
  std::vector<double> dz(d);
  for (std::size_t t = 0; t < tr.matrix.rows(); ++t) {
    auto r = tr.matrix.row(t);
    auto g = row_grads.row(t);
    // d(z/|z|)/dz = (I - r r^T) / |z|
    double rg = dot(r, g);
    bool any = false;
    for (std::size_t j = 0; j < d; ++j) {
      dz[j] = (g[j] - rg * r[j]) / tr.norms[t];
      any = any || dz[j] != 0.0;
    }
    if (!any) continue;
    const auto& b = tr.bases[t];
    for (std::size_t i = 0; i < b.size(); ++i) {
      double* grow = grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) grow[j] += b[i] * dz[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Persistence: text header "ragbench-encoder <base_dim> <out_dim> <hash_seed>"
// followed by base_dim lines of out_dim values each (row-major).

inline void save_params(const EncoderParams& p, std::ostream& out) {
  out << "ragbench-encoder " << p.base_dim << ' ' << p.out_dim << ' ' << p.hash_seed << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < p.base_dim; ++i) {
    for (std::size_t j = 0; j < p.out_dim; ++j) out << (j ? " " : "") << p.at(i, j);
    out << '\n';
  }
}

inline void save_params(const EncoderParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write encoder params: " + path);
  save_params(p, out);
}

inline EncoderParams load_params(std::istream& in) {
  std::string magic;
  EncoderParams p;
  if (!(in >> magic >> p.base_dim >> p.out_dim >> p.hash_seed) || magic != "ragbench-encoder")
    throw Error("not an encoder params file");
  if (p.base_dim == 0 || p.out_dim == 0) throw Error("encoder params: zero dimension");
  p.projection.resize(p.base_dim * p.out_dim);
  for (auto& v : p.projection)
    if (!(in >> v)) throw Error("encoder params: truncated projection");
  if (!p.finite()) throw Error("encoder params: non-finite projection");
  return p;
}

inline EncoderParams load_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open encoder params: " + path);
  return load_params(in);
}

// ---------------------------------------------------------------------------
// External embedding service.

/// Splits "http://host:port/path" into a base URL and a path (default "/").
struct Endpoint {
  std::string base;
  std::string path = "/";

  static Endpoint parse(std::string_view url, std::string_view default_path = "/") {
    Endpoint e;
    std::string s(url);
    auto scheme = s.find("://");
    std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
    auto slash = s.find('/', host_start);
    if (slash == std::string::npos) {
      e.base = s;
      e.path = std::string(default_path);
    } else {
      e.base = s.substr(0, slash);
      e.path = s.substr(slash);
    }
    if (scheme == std::string::npos) e.base = "http://" + e.base;
    return e;
  }
};

inline double parse_embedding_value(const json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    auto s = v.get<std::string>();
    if (s == "NaN" || s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "Infinity" || s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-Infinity" || s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  throw Error("malformed embedding response: vector entry is not a number");
}

/// Parses an embedding-service response body {"dim", "tokens", "vectors"}.
/// `expected_dim` of 0 accepts any dimension.
inline TokenEmbeddingMatrix parse_embedding_response(const std::string& body, std::size_t expected_dim = 0) {
  json r;
  try {
    r = json::parse(body);
  } catch (const json::exception& e) {
    throw Error(std::string("malformed embedding response: ") + e.what());
  }
  if (!r.is_object() || !r.contains("dim") || !r.contains("vectors") || !r["vectors"].is_array())
    throw Error("malformed embedding response: missing dim/vectors");
  TokenEmbeddingMatrix m;
  m.dim = r["dim"].get<std::size_t>();
  if (m.dim == 0) throw Error("malformed embedding response: dim is 0");
  if (expected_dim != 0 && m.dim != expected_dim)
    throw Error("dimension mismatch: service returned " + std::to_string(m.dim) + ", index expects " +
                std::to_string(expected_dim));
  for (const auto& vec : r["vectors"]) {
    if (!vec.is_array() || vec.size() != m.dim) throw Error("dimension mismatch: vector length differs from dim");
    for (const auto& x : vec) m.values.push_back(parse_embedding_value(x));
  }
  if (r.contains("tokens")) m.tokens = string_list(r, "tokens");
  if (!m.tokens.empty() && m.tokens.size() != m.rows())
    throw Error("malformed embedding response: token count differs from vector count");
  if (m.empty()) throw Error("empty input");
  normalize_rows(m);
  return m;
}

/// POSTs {"text": ...} to an embedding service and re-normalizes the rows.
inline TokenEmbeddingMatrix embed_external(const std::string& text, const std::string& endpoint,
                                           std::size_t expected_dim = 0, int timeout_ms = 10000) {
  auto ep = Endpoint::parse(endpoint, "/embed");
  httplib::Client cli(ep.base);
  cli.set_connection_timeout(std::chrono::milliseconds(timeout_ms));
  cli.set_read_timeout(std::chrono::milliseconds(timeout_ms));
  auto res = cli.Post(ep.path, json{{"text", text}}.dump(), "application/json");
  if (!res) throw Error("embedding service unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200) throw Error("embedding service returned status " + std::to_string(res->status));
  return parse_embedding_response(res->body, expected_dim);
}

}  // namespace ragbench
