// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "ragbench/common.hpp"

namespace ragbench {

/// One pre-defined segment of a policy document. This is the retrieval unit.
struct Chunk {
  std::string chunk_id;
  std::string doc_id;
  std::size_t segment_index = 0;
  std::string text;
  std::string document_name;
  std::string authority;
  std::string doc_type;
  std::vector<std::string> dates;      // ISO-8601, normalized at ingest
  std::vector<std::string> raw_dates;  // kept verbatim, could not be parsed
  // Absent (not empty) when the segment was never annotated.
  std::optional<std::vector<std::string>> tags;

  bool operator==(const Chunk&) const = default;
};

struct Document {
  std::string doc_id;
  std::string title;
  std::string authority;
  std::string doc_type;
  std::optional<std::string> enacted_date;
  std::vector<std::string> tags;
  std::vector<std::size_t> segments;  // indices into Corpus::chunks, by segment_index
};

/// An immutable collection of chunks grouped into documents.
class Corpus {
 public:
  Corpus() = default;

  /// Builds a corpus from chunk records. Throws on duplicate chunk ids or
  /// on documents whose segment indices are not contiguous from 0.
  explicit Corpus(std::vector<Chunk> chunks);

  const std::vector<Chunk>& chunks() const { return chunks_; }
  const std::vector<Document>& documents() const { return documents_; }
  std::size_t doc_count() const { return documents_.size(); }
  std::size_t chunk_count() const { return chunks_.size(); }
  bool empty() const { return chunks_.empty(); }

  const Chunk* find(const std::string& chunk_id) const {
    auto it = by_id_.find(chunk_id);
    return it == by_id_.end() ? nullptr : &chunks_[it->second];
  }
  const Chunk& at(const std::string& chunk_id) const {
    const Chunk* c = find(chunk_id);
    if (!c) throw Error("unknown chunk_id: " + chunk_id);
    return *c;
  }
  const Document* find_document(const std::string& doc_id) const {
    for (const auto& d : documents_)
      if (d.doc_id == doc_id) return &d;
    return nullptr;
  }

 private:
  std::vector<Chunk> chunks_;
  std::vector<Document> documents_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// ---------------------------------------------------------------------------
// Dates

/// Normalizes a date string to ISO-8601. Accepted inputs: YYYY-MM-DD,
/// YYYY/MM/DD, YYYY-MM-DDThh:mm..., MM/DD/YYYY, YYYY-MM and YYYY. Reduced
/// precision forms stay reduced (YYYY-MM, YYYY). Returns nullopt when the
/// input is not a valid calendar date.
inline std::optional<std::string> normalize_date(std::string_view input) {
  std::string s = trim(input);
  auto digits = [&](std::size_t pos, std::size_t n) {
    if (pos + n > s.size()) return false;
    for (std::size_t i = pos; i < pos + n; ++i)
      if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    return true;
  };
  auto num = [&](std::size_t pos, std::size_t n) { return std::stoi(s.substr(pos, n)); };
  auto valid_ymd = [](int y, int m, int d) {
    using namespace std::chrono;
    return year_month_day{year{y}, month{static_cast<unsigned>(m)}, day{static_cast<unsigned>(d)}}.ok();
  };
  char buf[16];
  int y = 0, m = 0, d = 0;
  if (s.size() >= 10 && digits(0, 4) && (s[4] == '-' || s[4] == '/') && digits(5, 2) && s[7] == s[4] && digits(8, 2) &&
      (s.size() == 10 || s[10] == 'T' || s[10] == ' ')) {
    y = num(0, 4), m = num(5, 2), d = num(8, 2);
  } else if (s.size() == 10 && digits(0, 2) && s[2] == '/' && digits(3, 2) && s[5] == '/' && digits(6, 4)) {
    m = num(0, 2), d = num(3, 2), y = num(6, 4);
  } else if (s.size() == 7 && digits(0, 4) && s[4] == '-' && digits(5, 2)) {
    y = num(0, 4), m = num(5, 2);
    if (m < 1 || m > 12) return std::nullopt;
    std::snprintf(buf, sizeof buf, "%04d-%02d", y, m);
    return std::string(buf);
  } else if (s.size() == 4 && digits(0, 4)) {
    return s;
  } else {
    return std::nullopt;
  }
  if (!valid_ymd(y, m, d)) return std::nullopt;
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", y, m, d);
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// Record format

inline Chunk chunk_from_json(const json& rec) {
  Chunk c;
  c.chunk_id = require_string(rec, "chunk_id");
  c.doc_id = require_string(rec, "doc_id");
  auto seg = rec.find("segment_index");
  if (seg == rec.end() || !seg->is_number_integer() || seg->get<long long>() < 0)
    throw Error("field 'segment_index' must be a non-negative integer");
  c.segment_index = seg->get<std::size_t>();
  c.text = require_string(rec, "text");
  if (trim(c.text).empty()) throw Error("chunk text is empty");
  c.document_name = rec.value("document_name", std::string{});
  c.authority = rec.value("authority", std::string{});
  c.doc_type = rec.value("doc_type", std::string{});
  for (const auto& raw : string_list(rec, "dates")) {
    if (auto iso = normalize_date(raw))
      c.dates.push_back(*iso);
    else
      c.raw_dates.push_back(raw);
  }
  if (rec.contains("tags") && !rec["tags"].is_null()) c.tags = string_list(rec, "tags");
  if (c.chunk_id.empty()) throw Error("chunk_id is empty");
  return c;
}

inline json chunk_to_json(const Chunk& c) {
  std::vector<std::string> dates = c.dates;
  dates.insert(dates.end(), c.raw_dates.begin(), c.raw_dates.end());
  json rec = {{"chunk_id", c.chunk_id},   {"doc_id", c.doc_id},
              {"segment_index", c.segment_index}, {"text", c.text},
              {"document_name", c.document_name}, {"authority", c.authority},
              {"doc_type", c.doc_type},   {"dates", dates}};
  if (c.tags) rec["tags"] = *c.tags;
  return rec;
}

inline Corpus::Corpus(std::vector<Chunk> chunks) : chunks_(std::move(chunks)) {
  std::map<std::string, std::vector<std::size_t>> groups;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < chunks_.size(); ++i) {
    const auto& c = chunks_[i];
    if (!by_id_.emplace(c.chunk_id, i).second) throw Error("duplicate chunk_id: " + c.chunk_id);
    auto [it, inserted] = groups.try_emplace(c.doc_id);
    if (inserted) order.push_back(c.doc_id);
    it->second.push_back(i);
  }
  for (const auto& doc_id : order) {
    auto& idx = groups[doc_id];
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return chunks_[a].segment_index < chunks_[b].segment_index; });
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (chunks_[idx[k]].segment_index != k)
        throw Error("document " + doc_id + ": segment indices are not contiguous from 0");
    }
    Document d;
    d.doc_id = doc_id;
    const Chunk& first = chunks_[idx.front()];
    d.title = first.document_name;
    d.authority = first.authority;
    d.doc_type = first.doc_type;
    std::set<std::string> tags;
    for (auto i : idx) {
      if (chunks_[i].tags) tags.insert(chunks_[i].tags->begin(), chunks_[i].tags->end());
      if (!d.enacted_date && !chunks_[i].dates.empty()) d.enacted_date = chunks_[i].dates.front();
    }
    d.tags.assign(tags.begin(), tags.end());
    d.segments = std::move(idx);
    documents_.push_back(std::move(d));
  }
}

/// Reads a chunk record file. Malformed records are reported with their
/// line number; a duplicate chunk id rejects the whole file.
inline Corpus ingest(const std::string& path) {
  std::vector<Chunk> chunks;
  std::unordered_map<std::string, std::size_t> seen;
  jsonl::for_each(path, [&](const json& rec, std::size_t line) {
    Chunk c;
    try {
      c = chunk_from_json(rec);
    } catch (const RecordError&) {
      throw;
    } catch (const Error& e) {
      throw RecordError(path, line, e.what());
    }
    if (auto [it, ok] = seen.emplace(c.chunk_id, line); !ok)
      throw RecordError(path, line,
                        "duplicate chunk_id '" + c.chunk_id + "' (first seen on line " + std::to_string(it->second) + ")");
    chunks.push_back(std::move(c));
  });
  return Corpus(std::move(chunks));
}

inline void export_corpus(const Corpus& corpus, const std::string& path) {
  std::vector<json> recs;
  recs.reserve(corpus.chunk_count());
  for (const auto& c : corpus.chunks()) recs.push_back(chunk_to_json(c));
  jsonl::write(path, recs);
}

/// Retrieval text for a chunk: a fixed-order metadata header, one blank
/// line, then the segment text.
inline std::string render_chunk(const Chunk& c) {
  std::vector<std::string> dates = c.dates;
  dates.insert(dates.end(), c.raw_dates.begin(), c.raw_dates.end());
  std::string out;
  out += "document: " + c.document_name + "\n";
  out += "authority: " + c.authority + "\n";
  out += "dates: " + join(dates, ", ") + "\n";
  if (c.tags) out += "tags: " + join(*c.tags, ", ") + "\n";
  out += "\n";
  out += c.text;
  return out;
}

inline std::size_t word_count(std::string_view text) { return split_whitespace(text).size(); }

// ---------------------------------------------------------------------------
// Statistics

struct Histogram {
  std::size_t bin_width = 1;
  std::vector<std::size_t> counts;  // counts[i] covers [i*w, (i+1)*w)

  void add(std::size_t value) {
    std::size_t bin = value / bin_width;
    if (bin >= counts.size()) counts.resize(bin + 1, 0);
    ++counts[bin];
  }
  std::size_t total() const {
    std::size_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

using RankedCounts = std::vector<std::pair<std::string, std::size_t>>;

struct CorpusStats {
  std::size_t doc_count = 0;
  std::size_t chunk_count = 0;
  Histogram doc_length_hist{500, {}};
  Histogram seg_length_hist{50, {}};
  Histogram segs_per_doc_hist{5, {}};
  double mean_seg_words = 0.0;
  double mean_segs_per_doc = 0.0;
  RankedCounts top_tags;         // counted per annotated segment
  RankedCounts top_authorities;  // counted per document
  std::map<std::string, std::size_t> date_hist;  // "YYYY-MM" -> count
};

inline RankedCounts rank_counts(const std::map<std::string, std::size_t>& counts) {
  RankedCounts out(counts.begin(), counts.end());
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

inline CorpusStats stats(const Corpus& corpus) {
  if (corpus.empty()) throw Error("statistics are undefined for an empty corpus");
  CorpusStats s;
  s.doc_count = corpus.doc_count();
  s.chunk_count = corpus.chunk_count();
  std::map<std::string, std::size_t> tags, authorities;
  std::size_t total_words = 0;
  for (const auto& c : corpus.chunks()) {
    std::size_t w = word_count(c.text);
    total_words += w;
    s.seg_length_hist.add(w);
    if (c.tags)
      for (const auto& t : *c.tags) ++tags[t];
    for (const auto& d : c.dates)
      if (d.size() >= 7) ++s.date_hist[d.substr(0, 7)];
  }
  for (const auto& d : corpus.documents()) {
    std::size_t w = 0;
    for (auto i : d.segments) w += word_count(corpus.chunks()[i].text);
    s.doc_length_hist.add(w);
    s.segs_per_doc_hist.add(d.segments.size());
    ++authorities[d.authority];
  }
  s.mean_seg_words = static_cast<double>(total_words) / static_cast<double>(s.chunk_count);
  s.mean_segs_per_doc = static_cast<double>(s.chunk_count) / static_cast<double>(s.doc_count);
  s.top_tags = rank_counts(tags);
  s.top_authorities = rank_counts(authorities);
  return s;
}

inline json stats_to_json(const CorpusStats& s, std::size_t top_n = 10) {
  auto ranked = [&](const RankedCounts& rc) {
    json arr = json::array();
    for (std::size_t i = 0; i < rc.size() && i < top_n; ++i) arr.push_back({rc[i].first, rc[i].second});
    return arr;
  };
  auto hist = [](const Histogram& h) { return json{{"bin_width", h.bin_width}, {"counts", h.counts}}; };
  return {{"doc_count", s.doc_count},
          {"chunk_count", s.chunk_count},
          {"mean_seg_words", s.mean_seg_words},
          {"mean_segs_per_doc", s.mean_segs_per_doc},
          {"doc_length_hist", hist(s.doc_length_hist)},
          {"seg_length_hist", hist(s.seg_length_hist)},
          {"segs_per_doc_hist", hist(s.segs_per_doc_hist)},
          {"top_tags", ranked(s.top_tags)},
          {"top_authorities", ranked(s.top_authorities)},
          {"date_hist", s.date_hist}};
}

}  // namespace ragbench
