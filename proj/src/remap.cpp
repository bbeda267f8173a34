#include "tokensieve/remap.hpp"

#include <algorithm>

#include "tokensieve/error.hpp"

namespace tokensieve {

SpanAlignment align_spans(const std::vector<Span>& source, const std::vector<Span>& target) {
  validate_spans(source, "<source>");
  validate_spans(target, "<target>");
  SpanAlignment out;
  out.sources.resize(target.size());
  std::size_t s = 0;
  for (std::size_t t = 0; t < target.size(); ++t) {
    const Span& ts = target[t];
    // Source spans ending at or before this target's start can never meet a
    // later target either, since both lists are sorted.
    while (s < source.size() && source[s].end <= ts.start) ++s;
    for (std::size_t k = s; k < source.size() && source[k].start < ts.end; ++k) {
      const Span& ss = source[k];
      if (std::max(ss.start, ts.start) < std::min(ss.end, ts.end)) {
        out.sources[t].push_back(static_cast<std::uint32_t>(k));
      }
    }
  }
  return out;
}

TransferResult transfer_labels(const LabelVector& source_labels, std::size_t source_count,
                               const SpanAlignment& alignment) {
  if (source_labels.size() != source_count) {
    throw PreconditionError("source label count " + std::to_string(source_labels.size()) + " != source token count " +
                            std::to_string(source_count));
  }
  TransferResult r;
  r.labels.assign(alignment.sources.size(), 0);
  for (std::size_t t = 0; t < alignment.sources.size(); ++t) {
    const auto& srcs = alignment.sources[t];
    if (srcs.empty()) {
      ++r.uncovered;
      continue;
    }
    for (auto s : srcs) {
      if (s >= source_count) throw PreconditionError("alignment references source token beyond the label vector");
      if (source_labels[s]) {
        r.labels[t] = 1;
        break;
      }
    }
  }
  return r;
}

TokenizedDocument remap_document(const TokenizedDocument& source, const TokenizedDocument& target,
                                 std::size_t* uncovered) {
  if (source.doc_id != target.doc_id) {
    throw PreconditionError("remap pairs documents '" + source.doc_id + "' and '" + target.doc_id + "'");
  }
  if (!source.spans || !target.spans) throw PreconditionError("remap needs spans on both tokenizations of '" + source.doc_id + "'");
  if (!source.labels || source.labels_are_loss_mask) {
    throw PreconditionError("source document '" + source.doc_id + "' carries no forget labels");
  }
  const auto alignment = align_spans(*source.spans, *target.spans);
  auto result = transfer_labels(*source.labels, source.tokens.size(), alignment);
  TokenizedDocument out = target;
  out.labels = std::move(result.labels);
  out.labels_are_loss_mask = false;
  if (uncovered) *uncovered = result.uncovered;
  return out;
}

}  // namespace tokensieve
