#include "tokensieve/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "tokensieve/error.hpp"

namespace tokensieve {

void validate_spans(const std::vector<Span>& spans, const std::string& doc_id) {
  std::uint32_t prev_end = 0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const Span& s = spans[i];
    if (s.end < s.start) {
      throw FormatError("document '" + doc_id + "': span " + std::to_string(i) + " has end before start");
    }
    if (s.start < prev_end) {
      throw FormatError("document '" + doc_id + "': span " + std::to_string(i) +
                        " overlaps or precedes the previous span");
    }
    prev_end = s.end;
  }
}

void validate(const TokenizedDocument& doc) {
  const std::size_t n = doc.tokens.size();
  if (doc.spans) {
    if (doc.spans->size() != n) throw FormatError("document '" + doc.doc_id + "': span count != token count");
    validate_spans(*doc.spans, doc.doc_id);
  }
  if (doc.labels) {
    if (doc.labels->size() != n) throw FormatError("document '" + doc.doc_id + "': label count != token count");
    for (auto l : *doc.labels) {
      if (l > 1) throw FormatError("document '" + doc.doc_id + "': label is not binary");
    }
  }
  if (doc.labels_are_loss_mask && !doc.labels) {
    throw FormatError("document '" + doc.doc_id + "': loss-mask flag set without a mask");
  }
  if (doc.scores) {
    if (doc.scores->size() != n) throw FormatError("document '" + doc.doc_id + "': score count != token count");
    for (float s : *doc.scores) {
      if (!(s >= 0.0f && s <= 1.0f)) throw FormatError("document '" + doc.doc_id + "': score outside [0,1]");
    }
  }
}

std::vector<RawDocument> read_raw_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open raw corpus: " + path.string());
  std::vector<RawDocument> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      RawDocument d{j.at("doc_id").get<std::string>(), j.at("text").get<std::string>()};
      if (d.doc_id.empty()) throw FormatError("empty doc_id");
      docs.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  std::vector<std::string> ids;
  ids.reserve(docs.size());
  for (const auto& d : docs) ids.push_back(d.doc_id);
  std::sort(ids.begin(), ids.end());
  if (auto it = std::adjacent_find(ids.begin(), ids.end()); it != ids.end()) {
    throw FormatError("duplicate doc_id '" + *it + "' in " + path.string());
  }
  return docs;
}

void write_raw_corpus(const std::vector<RawDocument>& docs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write raw corpus: " + path.string());
  for (const auto& d : docs) {
    out << nlohmann::json{{"doc_id", d.doc_id}, {"text", d.text}}.dump() << '\n';
  }
}

std::uint64_t DocHistogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), zero_token_docs);
}

DocHistogram doc_forget_histogram(const Corpus& docs, const std::vector<double>& edges) {
  if (edges.size() < 2) throw PreconditionError("histogram needs at least two bucket edges");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) throw PreconditionError("histogram edges must be strictly increasing");
  }
  if (edges.front() > 0.0 || edges.back() < 1.0) {
    throw PreconditionError("histogram edges must cover [0, 1]");
  }
  DocHistogram h;
  h.edges = edges;
  h.counts.assign(edges.size() - 1, 0);
  for (const auto& d : docs) {
    if (!d.labels || d.labels_are_loss_mask) {
      throw PreconditionError("document '" + d.doc_id + "' carries no forget labels");
    }
    if (d.tokens.empty()) {
      ++h.zero_token_docs;
      continue;
    }
    const auto forget = std::count(d.labels->begin(), d.labels->end(), std::uint8_t{1});
    const double frac = static_cast<double>(forget) / static_cast<double>(d.tokens.size());
    if (forget == 0) ++h.zero_forget_docs;
    auto it = std::upper_bound(edges.begin(), edges.end(), frac);
    std::size_t bucket = static_cast<std::size_t>(it - edges.begin());
    bucket = bucket == 0 ? 0 : bucket - 1;
    bucket = std::min(bucket, h.counts.size() - 1);
    ++h.counts[bucket];
  }
  return h;
}

}  // namespace tokensieve
