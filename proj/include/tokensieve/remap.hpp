#pragma once

#include <cstdint>
#include <vector>

#include "tokensieve/corpus.hpp"

namespace tokensieve {

// For each target token, the ascending source token indices whose byte
// spans intersect it with nonzero length.
struct SpanAlignment {
  std::vector<std::vector<std::uint32_t>> sources;
};

// Single merge pass over both sorted span lists. Throws FormatError on
// unsorted or overlapping spans.
SpanAlignment align_spans(const std::vector<Span>& source, const std::vector<Span>& target);

struct TransferResult {
  LabelVector labels;
  std::size_t uncovered = 0;  // target tokens with no intersecting source token
};

// Target token is forget iff any aligned source token is forget; tokens
// with an empty alignment default to retain.
TransferResult transfer_labels(const LabelVector& source_labels, std::size_t source_count,
                               const SpanAlignment& alignment);

// Aligns and transfers whole documents. The target keeps its tokens and
// spans and receives labels; doc ids must agree.
TokenizedDocument remap_document(const TokenizedDocument& source, const TokenizedDocument& target,
                                 std::size_t* uncovered = nullptr);

}  // namespace tokensieve
