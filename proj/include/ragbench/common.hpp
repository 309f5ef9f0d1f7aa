// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace ragbench {

using json = nlohmann::json;

/// Base error for everything the library reports. Callers that need to
/// distinguish failure classes catch the derived types.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A malformed record in a newline-delimited file. `line()` is 1-based.
class RecordError : public Error {
 public:
  RecordError(std::string file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), file_(std::move(file)), line_(line) {}
  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

// Warnings are collected by value so callers decide whether to print them.
using Warnings = std::vector<std::string>;

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n\f\v");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n\f\v");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

// 64-bit FNV-1a. Stable across platforms; used for token hashing and
// parameter fingerprints.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// SplitMix64 generator. Used wherever the library needs reproducible
/// pseudo-random numbers whose stream must not depend on the standard
/// library implementation.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform index in [0, n). n must be > 0.
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(next() % n); }

  bool coin() { return (next() >> 63) != 0; }

  // Standard normal via Box-Muller (cosine branch only, one draw per call).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::uint64_t state_;
};

template <typename T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
  SplitMix64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.below(i)]);
  }
}

// Numerically stable log(1 + e^x).
inline double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

namespace jsonl {

/// Calls `fn(record, line_number)` for every non-blank line of a
/// newline-delimited JSON file. Parse failures raise RecordError with the
/// offending line number.
inline void for_each(const std::string& path, const std::function<void(const json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw RecordError(path, lineno, std::string("malformed JSON: ") + e.what());
    }
    if (!rec.is_object()) throw RecordError(path, lineno, "record is not a JSON object");
    try {
      fn(rec, lineno);
    } catch (const RecordError&) {
      throw;
    } catch (const json::exception& e) {
      throw RecordError(path, lineno, e.what());
    }
  }
}

inline std::vector<json> read(const std::string& path) {
  std::vector<json> out;
  for_each(path, [&](const json& r, std::size_t) { out.push_back(r); });
  return out;
}

inline void write(std::ostream& out, const std::vector<json>& records) {
  for (const auto& r : records) out << r.dump() << '\n';
}

inline void write(const std::string& path, const std::vector<json>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write file: " + path);
  write(out, records);
}

inline std::string dump(const std::vector<json>& records) {
  std::ostringstream os;
  write(os, records);
  return os.str();
}

}  // namespace jsonl

// Reads a required string field, reporting the key on failure.
inline std::string require_string(const json& rec, const char* key) {
  auto it = rec.find(key);
  if (it == rec.end() || !it->is_string()) throw Error(std::string("missing or non-string field '") + key + "'");
  return it->get<std::string>();
}

inline std::vector<std::string> string_list(const json& rec, const char* key) {
  std::vector<std::string> out;
  auto it = rec.find(key);
  if (it == rec.end() || it->is_null()) return out;
  if (!it->is_array()) throw Error(std::string("field '") + key + "' must be a list of strings");
  for (const auto& v : *it) {
    if (!v.is_string()) throw Error(std::string("field '") + key + "' must be a list of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace ragbench
