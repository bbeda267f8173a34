#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tokensieve/corpus.hpp"

namespace tokensieve {

struct ActivationRecord {
  std::string doc_id;
  std::uint32_t token_index = 0;
  std::uint32_t latent_id = 0;
  double activation = 0.0;
};

// One sparse activation inside a known document.
struct TokenActivation {
  std::uint32_t token = 0;
  std::uint32_t latent = 0;
  double activation = 0.0;
};

using DocActivations = std::vector<TokenActivation>;

struct LatentStats {
  double mean = 0.0;
  double sd = 0.0;
  std::optional<std::string> desc;
  bool absent = false;  // no records were seen; mean and sd are zero by convention
};

// Forget-domain latents with reference activation statistics.
struct LatentSet {
  std::map<std::uint32_t, LatentStats> latents;
  // True when statistics cover only the listed (nonzero) records, false when
  // unlisted token positions were counted as zero activations.
  bool listed_records_only = true;

  bool contains(std::uint32_t latent) const { return latents.count(latent) != 0; }

  static LatentSet load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

struct LabelingParams {
  double k_sd = 4.0;
  std::uint32_t m_min = 2;
  double expansion_threshold = 0.0;

  void validate() const;
};

struct NoiseSpec {
  double flip_rate = 0.0;
  std::uint64_t seed = 0;
};

// Population mean and SD per requested latent. With total_tokens set, every
// unlisted token position counts as a zero activation. Identical duplicate
// records are counted once; conflicting duplicates raise FormatError.
LatentSet latent_stats(std::span<const ActivationRecord> records,
                       std::span<const std::uint32_t> latent_ids,
                       std::optional<std::uint64_t> total_tokens = std::nullopt);

// Groups records by document, rejecting conflicting duplicates.
std::unordered_map<std::string, DocActivations> group_by_document(std::span<const ActivationRecord> records);

// Token marked iff at least m_min latents of the set fire at or above
// mean + k_sd * sd. Records on latents outside the set are ignored.
LabelVector seed_labels(const DocActivations& acts, std::size_t token_count, const LatentSet& latents,
                        const LabelingParams& params);

enum class SweepOrder { kForward, kBackward, kWorklist };

// Least fixed point above `seed` of: a token with activation above
// expansion_threshold on any forget latent joins when a neighbour is marked.
LabelVector expand_labels(const LabelVector& seed, const DocActivations& acts, const LatentSet& latents,
                          const LabelingParams& params, SweepOrder order = SweepOrder::kWorklist);

// seed_labels followed by expand_labels.
LabelVector label_document(const DocActivations& acts, std::size_t token_count, const LatentSet& latents,
                           const LabelingParams& params);

// Coarse unit covering a byte range of the source text.
struct CoarseUnit {
  Span bytes;
  std::uint8_t label = 0;
};

LabelVector propagate_document_label(std::uint8_t label, std::size_t token_count);

// Each token takes the label of the unit containing its first byte. Units
// must be contiguous, ordered, and start at byte 0.
LabelVector propagate_sentence_labels(const std::vector<Span>& token_spans, const std::vector<CoarseUnit>& units);

// Flips each label independently with probability flip_rate. The generator
// is derived from (seed, doc_id), so documents can be noised in any order.
LabelVector perturb_labels(const LabelVector& labels, const NoiseSpec& spec, std::string_view doc_id);

// 1 - a(1 - r) - r(1 - a): disagreement with ground truth of a classifier of
// accuracy a whose outputs are further flipped at rate r.
double expected_error_rate(double accuracy, double flip_rate);

std::vector<ActivationRecord> read_activations(const std::filesystem::path& path);
void write_activations(std::span<const ActivationRecord> records, const std::filesystem::path& path);

}  // namespace tokensieve
