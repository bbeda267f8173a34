#include "tokensieve/filter.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "tokensieve/error.hpp"

namespace tokensieve {
namespace {

const std::vector<float>& token_scores(const TokenizedDocument& doc) {
  if (!doc.scores) throw PreconditionError("document '" + doc.doc_id + "' has no token scores");
  if (doc.scores->size() != doc.tokens.size()) {
    throw PreconditionError("document '" + doc.doc_id + "' score count != token count");
  }
  return *doc.scores;
}

void check_threshold(double threshold) {
  if (!(threshold >= 0.0) || !std::isfinite(threshold)) throw DomainError("filter threshold must be finite and >= 0");
}

void finish(FilterReport& r) {
  r.fraction_filtered = r.tokens_in == 0 ? 0.0 : static_cast<double>(r.tokens_filtered) / static_cast<double>(r.tokens_in);
  if (r.audit) {
    auto& a = *r.audit;
    a.recall = a.forget_total == 0 ? 0.0 : static_cast<double>(a.forget_caught) / static_cast<double>(a.forget_total);
    a.collateral =
        a.retain_total == 0 ? 0.0 : static_cast<double>(a.retain_filtered) / static_cast<double>(a.retain_total);
  }
}

const LabelVector& truth_labels(const Corpus& truth, const Corpus& source, std::size_t i) {
  if (truth.size() != source.size()) throw PreconditionError("ground-truth corpus has a different document count");
  const auto& t = truth[i];
  if (t.doc_id != source[i].doc_id || t.tokens.size() != source[i].tokens.size()) {
    throw PreconditionError("ground truth does not align with document '" + source[i].doc_id + "'");
  }
  if (!t.labels || t.labels_are_loss_mask) {
    throw PreconditionError("ground-truth document '" + t.doc_id + "' has no forget labels");
  }
  return *t.labels;
}

FilteredShard filter_tokens(const Corpus& docs, double threshold, std::optional<TokenId> hidden) {
  check_threshold(threshold);
  FilteredShard out;
  out.reserve(docs.size());
  for (const auto& doc : docs) {
    const auto& scores = token_scores(doc);
    FilteredDocument fd;
    fd.doc_id = doc.doc_id;
    fd.tokens = doc.tokens;
    fd.spans = doc.spans;
    fd.loss_mask.assign(doc.tokens.size(), 1);
    for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
      if (hidden && doc.tokens[i] == *hidden) {
        throw PreconditionError("document '" + doc.doc_id + "' already contains the hidden token id");
      }
      if (static_cast<double>(scores[i]) >= threshold) {
        fd.loss_mask[i] = 0;
        ++fd.masked;
        if (hidden) {
          fd.tokens[i] = *hidden;
          ++fd.substituted;
        }
      }
    }
    out.push_back(std::move(fd));
  }
  return out;
}

}  // namespace

FilterMode parse_filter_mode(const std::string& name) {
  if (name == "document") return FilterMode::kDocument;
  if (name == "mask" || name == "loss-mask") return FilterMode::kLossMask;
  if (name == "removal") return FilterMode::kRemoval;
  throw DomainError("unknown filter mode '" + name + "'");
}

std::string to_string(FilterMode mode) {
  switch (mode) {
    case FilterMode::kDocument: return "document";
    case FilterMode::kLossMask: return "loss-mask";
    case FilterMode::kRemoval: return "removal";
  }
  return "unknown";
}

void FilterConfig::validate() const {
  check_threshold(threshold);
  if (mode == FilterMode::kRemoval && !hidden_id) throw PreconditionError("removal mode needs a hidden token id");
}

DocumentFilterResult filter_documents(const Corpus& docs, std::span<const double> doc_scores, double threshold) {
  check_threshold(threshold);
  if (doc_scores.size() != docs.size()) throw PreconditionError("every document needs a score");
  DocumentFilterResult out;
  out.dropped.assign(docs.size(), 0);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!std::isfinite(doc_scores[i])) throw PreconditionError("document '" + docs[i].doc_id + "' has no valid score");
    if (doc_scores[i] >= threshold) {
      out.dropped[i] = 1;
    } else {
      out.retained.push_back(docs[i]);
    }
  }
  return out;
}

FilteredShard mask_tokens(const Corpus& docs, double threshold) {
  return filter_tokens(docs, threshold, std::nullopt);
}

FilteredShard remove_tokens(const Corpus& docs, double threshold, TokenId hidden_id) {
  return filter_tokens(docs, threshold, hidden_id);
}

Corpus to_corpus(const FilteredShard& shard) {
  Corpus out;
  out.reserve(shard.size());
  for (const auto& fd : shard) {
    TokenizedDocument d;
    d.doc_id = fd.doc_id;
    d.tokens = fd.tokens;
    d.spans = fd.spans;
    d.labels = fd.loss_mask;
    d.labels_are_loss_mask = true;
    out.push_back(std::move(d));
  }
  return out;
}

FilteredShard from_corpus(const Corpus& docs) {
  FilteredShard out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    if (!d.labels || !d.labels_are_loss_mask) throw FormatError("document '" + d.doc_id + "' carries no loss mask");
    FilteredDocument fd;
    fd.doc_id = d.doc_id;
    fd.tokens = d.tokens;
    fd.spans = d.spans;
    fd.loss_mask = *d.labels;
    for (auto bit : fd.loss_mask) fd.masked += bit ? 0 : 1;
    out.push_back(std::move(fd));
  }
  return out;
}

FilterReport filter_report(const Corpus& source, const FilteredShard& filtered, const FilterConfig& config,
                           const Corpus* truth) {
  if (source.size() != filtered.size()) throw PreconditionError("filtered shard does not match the source corpus");
  FilterReport r;
  r.mode = config.mode;
  r.threshold = config.threshold;
  r.onset_step = config.onset_step;
  if (truth) r.audit.emplace();
  for (std::size_t i = 0; i < source.size(); ++i) {
    const auto& src = source[i];
    const auto& fd = filtered[i];
    if (src.doc_id != fd.doc_id || src.tokens.size() != fd.tokens.size() || fd.loss_mask.size() != fd.tokens.size()) {
      throw PreconditionError("filtered document '" + fd.doc_id + "' does not match its source");
    }
    ++r.docs_in;
    ++r.docs_out;
    r.tokens_in += src.tokens.size();
    for (std::size_t t = 0; t < fd.tokens.size(); ++t) {
      if (fd.loss_mask[t]) {
        ++r.tokens_out;
      } else {
        ++r.tokens_filtered;
      }
      if (fd.tokens[t] != src.tokens[t]) ++r.tokens_substituted;
    }
    if (fd.fully_masked()) ++r.fully_masked_docs;
    if (truth) {
      const auto& labels = truth_labels(*truth, source, i);
      auto& a = *r.audit;
      for (std::size_t t = 0; t < labels.size(); ++t) {
        const bool caught = fd.loss_mask[t] == 0;
        if (labels[t]) {
          ++a.forget_total;
          a.forget_caught += caught;
        } else {
          ++a.retain_total;
          a.retain_filtered += caught;
        }
      }
    }
  }
  finish(r);
  return r;
}

FilterReport filter_report(const Corpus& source, const DocumentFilterResult& filtered, const FilterConfig& config,
                           const Corpus* truth) {
  if (filtered.dropped.size() != source.size()) throw PreconditionError("document filter result does not match source");
  FilterReport r;
  r.mode = FilterMode::kDocument;
  r.threshold = config.threshold;
  r.onset_step = config.onset_step;
  if (truth) r.audit.emplace();
  for (std::size_t i = 0; i < source.size(); ++i) {
    const auto n = source[i].tokens.size();
    const bool dropped = filtered.dropped[i] != 0;
    ++r.docs_in;
    r.tokens_in += n;
    if (dropped) {
      r.tokens_filtered += n;
    } else {
      ++r.docs_out;
      r.tokens_out += n;
    }
    if (truth) {
      const auto& labels = truth_labels(*truth, source, i);
      auto& a = *r.audit;
      for (auto l : labels) {
        if (l) {
          ++a.forget_total;
          a.forget_caught += dropped;
        } else {
          ++a.retain_total;
          a.retain_filtered += dropped;
        }
      }
    }
  }
  finish(r);
  return r;
}

std::string FilterReport::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = to_string(mode);
  j["threshold"] = threshold;
  j["docs_in"] = docs_in;
  j["docs_out"] = docs_out;
  j["tokens_in"] = tokens_in;
  j["tokens_out"] = tokens_out;
  j["tokens_filtered"] = tokens_filtered;
  j["tokens_substituted"] = tokens_substituted;
  j["fully_masked_docs"] = fully_masked_docs;
  j["fraction_filtered"] = fraction_filtered;
  if (onset_step) j["onset_step"] = *onset_step;
  if (audit) {
    nlohmann::ordered_json a;
    a["forget_total"] = audit->forget_total;
    a["forget_caught"] = audit->forget_caught;
    a["retain_total"] = audit->retain_total;
    a["retain_filtered"] = audit->retain_filtered;
    a["recall"] = audit->recall;
    a["collateral"] = audit->collateral;
    j["ground_truth"] = a;
  }
  return j.dump(1);
}

}  // namespace tokensieve
