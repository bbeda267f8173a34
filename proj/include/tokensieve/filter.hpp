#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tokensieve/corpus.hpp"

namespace tokensieve {

enum class FilterMode { kDocument, kLossMask, kRemoval };

FilterMode parse_filter_mode(const std::string& name);
std::string to_string(FilterMode mode);

struct FilterConfig {
  FilterMode mode = FilterMode::kLossMask;
  double threshold = 0.5;  // filter when score >= threshold; values above 1 filter nothing
  std::optional<TokenId> hidden_id;
  std::optional<std::uint64_t> onset_step;  // annotation for delayed-filtering trainers

  void validate() const;
};

struct FilteredDocument {
  std::string doc_id;
  std::vector<TokenId> tokens;  // after hidden-token substitution
  LabelVector loss_mask;        // 1 = contributes to the training loss
  std::optional<std::vector<Span>> spans;
  std::size_t masked = 0;
  std::size_t substituted = 0;

  bool fully_masked() const { return !tokens.empty() && masked == tokens.size(); }
};

using FilteredShard = std::vector<FilteredDocument>;

struct DocumentFilterResult {
  Corpus retained;
  std::vector<std::uint8_t> dropped;  // per input document
};

// Drops each document whose score is >= threshold. Survivors are copied
// unchanged.
DocumentFilterResult filter_documents(const Corpus& docs, std::span<const double> doc_scores, double threshold);

// Loss mask 0 exactly where the token score is >= threshold; ids unchanged.
FilteredShard mask_tokens(const Corpus& docs, double threshold);

// As mask_tokens, and every masked position is replaced by hidden_id.
FilteredShard remove_tokens(const Corpus& docs, double threshold, TokenId hidden_id);

// Shard form: labels slot carries the loss mask and the loss-mask flag is set.
Corpus to_corpus(const FilteredShard& shard);
FilteredShard from_corpus(const Corpus& docs);

struct GroundTruthAudit {
  std::uint64_t forget_total = 0;
  std::uint64_t forget_caught = 0;
  std::uint64_t retain_total = 0;
  std::uint64_t retain_filtered = 0;
  double recall = 0.0;      // forget_caught / forget_total
  double collateral = 0.0;  // retain_filtered / retain_total
};

struct FilterReport {
  FilterMode mode = FilterMode::kLossMask;
  double threshold = 0.0;
  std::uint64_t docs_in = 0;
  std::uint64_t docs_out = 0;
  std::uint64_t tokens_in = 0;
  std::uint64_t tokens_out = 0;        // tokens still contributing to the loss
  std::uint64_t tokens_filtered = 0;
  std::uint64_t tokens_substituted = 0;
  std::uint64_t fully_masked_docs = 0;
  double fraction_filtered = 0.0;
  std::optional<std::uint64_t> onset_step;
  std::optional<GroundTruthAudit> audit;

  std::string to_json() const;
};

// Token-mode audit. `truth`, when given, must align with `source`
// document-for-document and carry forget labels.
FilterReport filter_report(const Corpus& source, const FilteredShard& filtered, const FilterConfig& config,
                           const Corpus* truth = nullptr);

// Document-mode audit; every token of a dropped document counts as filtered.
FilterReport filter_report(const Corpus& source, const DocumentFilterResult& filtered, const FilterConfig& config,
                           const Corpus* truth = nullptr);

}  // namespace tokensieve
