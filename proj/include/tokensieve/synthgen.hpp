#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tokensieve/corpus.hpp"
#include "tokensieve/features.hpp"
#include "tokensieve/labeler.hpp"
#include "tokensieve/scaling.hpp"
#include "tokensieve/tokenizer.hpp"

namespace tokensieve {

struct SynthConfig {
  std::uint64_t seed = 0;
  std::uint32_t retain_vocab = 500;
  std::uint32_t forget_vocab = 100;
  std::uint64_t docs = 1000;
  std::uint32_t min_len = 20;
  std::uint32_t max_len = 200;
  double forget_rate = 0.2;  // nominal fraction of forget tokens
  std::uint32_t span_min = 2;
  std::uint32_t span_max = 8;
  double activation_noise_sd = 0.0;
  std::uint32_t latent_count = 8;
  double seed_probability = 0.3;  // chance a non-leading span token is seeded directly
  LabelingParams labeling;
  std::uint32_t feature_dim = 8;
  double margin = 8.0;

  void validate() const;
  // Probability that a retain position opens a forget span.
  double span_start_probability() const;

  std::string to_json() const;
  static SynthConfig from_json(std::string_view text);
};

// Word-level vocabulary: every synthetic token is a 5-byte word
// ("R"/"F" + three lowercase letters + space) that the accompanying merge
// table encodes back to exactly one token.
struct SyntheticVocabulary {
  MergeTable table;
  std::vector<TokenId> retain_ids;
  std::vector<TokenId> forget_ids;
};

SyntheticVocabulary synthetic_vocabulary(const SynthConfig& config);

struct SyntheticCorpus {
  std::vector<RawDocument> raw;
  Corpus docs;  // tokens, spans and planted labels
};

// Retain-vocabulary token streams with planted contiguous forget spans.
SyntheticCorpus gen_corpus(const SynthConfig& config, const SyntheticVocabulary& vocab);
SyntheticCorpus gen_corpus(const SynthConfig& config);

// Exact expected forget-token fraction of gen_corpus (ratio of expected
// forget tokens to expected length), including span truncation at the
// end of a document.
double expected_forget_fraction(const SynthConfig& config);

struct SyntheticActivations {
  std::vector<ActivationRecord> records;
  LatentSet latents;
};

// Sparse activations that the seed+expand labeler maps back onto the
// planted labels when activation_noise_sd is 0.
SyntheticActivations gen_activations(const Corpus& labeled, std::uint32_t latent_count, const SynthConfig& config);

// Class means separated by `margin` along a random unit direction, unit
// isotropic noise. Row noise is keyed by the row key.
FeatureMatrix gen_features(const std::vector<FeatureKey>& keys, const LabelVector& labels, std::size_t dim,
                           double margin, std::uint64_t seed);

struct TokenFeatures {
  FeatureMatrix features;
  LabelVector labels;
};

// One row per token, keyed (doc_id, index), labelled from the documents.
TokenFeatures gen_token_features(const Corpus& labeled, std::size_t dim, double margin, std::uint64_t seed);

// L_i = A * C_i^(-alpha) * exp(eps_i), eps_i ~ Normal(0, noise_sd).
ScalingSeries gen_scaling_series(std::string label, double scale, double alpha, const std::vector<double>& budgets,
                                 double noise_sd, std::uint64_t seed);

}  // namespace tokensieve
