#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tokensieve {

using TokenId = std::uint32_t;

// Half-open byte interval [start, end) into a document's source text.
struct Span {
  std::uint32_t start = 0;
  std::uint32_t end = 0;

  std::uint32_t length() const { return end - start; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct RawDocument {
  std::string doc_id;
  std::string text;
};

// Per-token binary mark. For ground truth 1 = forget, 0 = retain. When a
// document carries a loss mask instead (see labels_are_loss_mask), 1 means
// the position contributes to the training loss.
using LabelVector = std::vector<std::uint8_t>;

struct TokenizedDocument {
  std::string doc_id;
  std::vector<TokenId> tokens;
  std::optional<std::vector<Span>> spans;
  std::optional<LabelVector> labels;
  std::optional<std::vector<float>> scores;
  bool labels_are_loss_mask = false;

  std::size_t size() const { return tokens.size(); }
  friend bool operator==(const TokenizedDocument&, const TokenizedDocument&) = default;
};

using Corpus = std::vector<TokenizedDocument>;

// Throws FormatError when optional fields disagree with the token count or
// spans are out of order / overlapping.
void validate(const TokenizedDocument& doc);
void validate_spans(const std::vector<Span>& spans, const std::string& doc_id);

// Newline-delimited {"doc_id": ..., "text": ...} records.
std::vector<RawDocument> read_raw_corpus(const std::filesystem::path& path);
void write_raw_corpus(const std::vector<RawDocument>& docs, const std::filesystem::path& path);

// Documents bucketed by their fraction of forget tokens.
struct DocHistogram {
  std::vector<double> edges;          // strictly increasing, spanning [0, 1]
  std::vector<std::uint64_t> counts;  // edges.size() - 1 buckets
  std::uint64_t zero_token_docs = 0;  // degenerate bucket: documents with no tokens
  std::uint64_t zero_forget_docs = 0; // documents with fraction exactly 0

  std::uint64_t total() const;
};

// Buckets are [e_i, e_{i+1}) except the last, which is closed on the right.
DocHistogram doc_forget_histogram(const Corpus& docs, const std::vector<double>& edges);

}  // namespace tokensieve
