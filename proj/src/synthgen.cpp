#include "tokensieve/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "tokensieve/error.hpp"
#include "tokensieve/rng.hpp"

namespace tokensieve {
namespace {

constexpr double kLatentMean = 0.25;
constexpr double kLatentSd = 1.0;
constexpr double kWeakActivation = 0.5;
constexpr double kBackgroundActivation = 2.0;

std::string word(char prefix, std::uint32_t index) {
  std::string w(1, prefix);
  w.push_back(static_cast<char>('a' + (index / 676) % 26));
  w.push_back(static_cast<char>('a' + (index / 26) % 26));
  w.push_back(static_cast<char>('a' + index % 26));
  w.push_back(' ');
  return w;
}

std::string doc_name(std::uint64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "doc-%07llu", static_cast<unsigned long long>(i));
  return buf;
}

}  // namespace

void SynthConfig::validate() const {
  if (retain_vocab < 1 || forget_vocab < 1) throw DomainError("synthetic sub-vocabularies must be non-empty");
  if (retain_vocab > 17576 || forget_vocab > 17576) throw DomainError("synthetic sub-vocabularies hold at most 17576 words");
  if (min_len < 1 || max_len < min_len) throw DomainError("document lengths must satisfy 1 <= min_len <= max_len");
  if (span_min < 1 || span_max < span_min) throw DomainError("span lengths must satisfy 1 <= span_min <= span_max");
  if (!(forget_rate >= 0.0 && forget_rate <= 1.0)) throw DomainError("forget_rate must lie in [0, 1]");
  if (!(seed_probability >= 0.0 && seed_probability <= 1.0)) throw DomainError("seed_probability must lie in [0, 1]");
  if (!(activation_noise_sd >= 0.0)) throw DomainError("activation noise SD must be >= 0");
  if (!(margin >= 0.0)) throw DomainError("margin must be >= 0");
  if (feature_dim < 1) throw DomainError("feature dimension must be >= 1");
  labeling.validate();
}

double SynthConfig::span_start_probability() const {
  const double mean_span = 0.5 * (span_min + span_max);
  if (forget_rate >= 1.0) return 1.0;
  return forget_rate / (mean_span * (1.0 - forget_rate) + forget_rate);
}

std::string SynthConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["retain_vocab"] = retain_vocab;
  j["forget_vocab"] = forget_vocab;
  j["docs"] = docs;
  j["min_len"] = min_len;
  j["max_len"] = max_len;
  j["forget_rate"] = forget_rate;
  j["span_min"] = span_min;
  j["span_max"] = span_max;
  j["activation_noise_sd"] = activation_noise_sd;
  j["latent_count"] = latent_count;
  j["seed_probability"] = seed_probability;
  j["k_sd"] = labeling.k_sd;
  j["m_min"] = labeling.m_min;
  j["expansion_threshold"] = labeling.expansion_threshold;
  j["feature_dim"] = feature_dim;
  j["margin"] = margin;
  return j.dump(1);
}

SynthConfig SynthConfig::from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SynthConfig c;
    static const std::set<std::string> known = {
        "seed", "retain_vocab", "forget_vocab", "docs", "min_len", "max_len", "forget_rate", "span_min", "span_max",
        "activation_noise_sd", "latent_count", "seed_probability", "k_sd", "m_min", "expansion_threshold",
        "feature_dim", "margin"};
    for (const auto& [k, _] : j.items()) {
      if (!known.count(k)) throw FormatError("unknown synth config key '" + k + "'");
    }
    c.seed = j.value("seed", c.seed);
    c.retain_vocab = j.value("retain_vocab", c.retain_vocab);
    c.forget_vocab = j.value("forget_vocab", c.forget_vocab);
    c.docs = j.value("docs", c.docs);
    c.min_len = j.value("min_len", c.min_len);
    c.max_len = j.value("max_len", c.max_len);
    c.forget_rate = j.value("forget_rate", c.forget_rate);
    c.span_min = j.value("span_min", c.span_min);
    c.span_max = j.value("span_max", c.span_max);
    c.activation_noise_sd = j.value("activation_noise_sd", c.activation_noise_sd);
    c.latent_count = j.value("latent_count", c.latent_count);
    c.seed_probability = j.value("seed_probability", c.seed_probability);
    c.labeling.k_sd = j.value("k_sd", c.labeling.k_sd);
    c.labeling.m_min = j.value("m_min", c.labeling.m_min);
    c.labeling.expansion_threshold = j.value("expansion_threshold", c.labeling.expansion_threshold);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.margin = j.value("margin", c.margin);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("synth config: ") + e.what());
  }
}

SyntheticVocabulary synthetic_vocabulary(const SynthConfig& config) {
  config.validate();
  std::unordered_map<std::string, TokenId> vocab;
  TokenId next = 0;
  auto add = [&](const std::string& bytes) {
    auto [it, inserted] = vocab.emplace(bytes, next);
    if (inserted) ++next;
    return it->second;
  };
  for (char c = 'a'; c <= 'z'; ++c) add(std::string(1, c));
  add("R");
  add("F");
  add(" ");

  std::vector<std::string> words;
  for (std::uint32_t i = 0; i < config.retain_vocab; ++i) words.push_back(word('R', i));
  for (std::uint32_t i = 0; i < config.forget_vocab; ++i) words.push_back(word('F', i));

  // Merges grow each word left to right; all 2-byte prefixes rank before all
  // 3-byte prefixes and so on, which makes encoding reproduce whole words.
  std::vector<std::pair<std::string, std::string>> merges;
  std::set<std::string> seen;
  for (std::size_t len = 2; len <= 5; ++len) {
    for (const auto& w : words) {
      const std::string prefix = w.substr(0, len);
      if (!seen.insert(prefix).second) continue;
      add(prefix);
      merges.emplace_back(w.substr(0, len - 1), w.substr(len - 1, 1));
    }
  }
  SyntheticVocabulary out;
  for (std::uint32_t i = 0; i < config.retain_vocab; ++i) out.retain_ids.push_back(vocab.at(words[i]));
  for (std::uint32_t i = 0; i < config.forget_vocab; ++i) out.forget_ids.push_back(vocab.at(words[config.retain_vocab + i]));
  const TokenId hidden = next;
  out.table = MergeTable(std::move(merges), std::move(vocab), {{"hidden", hidden}});
  return out;
}

SyntheticCorpus gen_corpus(const SynthConfig& config) {
  return gen_corpus(config, synthetic_vocabulary(config));
}

SyntheticCorpus gen_corpus(const SynthConfig& config, const SyntheticVocabulary& vocab) {
  config.validate();
  const double q = config.span_start_probability();
  const std::uint64_t stream = derive_seed(config.seed, "corpus");
  SyntheticCorpus out;
  out.raw.reserve(config.docs);
  out.docs.reserve(config.docs);
  for (std::uint64_t d = 0; d < config.docs; ++d) {
    Rng rng = substream(stream, d);
    const auto length = static_cast<std::uint32_t>(uniform_int(rng, config.min_len, config.max_len));
    TokenizedDocument doc;
    doc.doc_id = doc_name(d);
    doc.spans.emplace();
    doc.labels.emplace();
    std::string text;
    auto emit = [&](TokenId id, std::uint8_t label) {
      const std::string& bytes = vocab.table.bytes_of(id);
      const auto start = static_cast<std::uint32_t>(text.size());
      text += bytes;
      doc.tokens.push_back(id);
      doc.spans->push_back({start, static_cast<std::uint32_t>(text.size())});
      doc.labels->push_back(label);
    };
    while (doc.tokens.size() < length) {
      if (uniform01(rng) < q) {
        const auto span = uniform_int(rng, config.span_min, config.span_max);
        for (std::uint64_t k = 0; k < span && doc.tokens.size() < length; ++k) {
          emit(vocab.forget_ids[uniform_int(rng, 0, vocab.forget_ids.size() - 1)], 1);
        }
      } else {
        emit(vocab.retain_ids[uniform_int(rng, 0, vocab.retain_ids.size() - 1)], 0);
      }
    }
    out.raw.push_back({doc.doc_id, std::move(text)});
    out.docs.push_back(std::move(doc));
  }
  return out;
}

double expected_forget_fraction(const SynthConfig& config) {
  config.validate();
  const double q = config.span_start_probability();
  const std::uint32_t n_max = config.max_len;
  const double span_p = 1.0 / static_cast<double>(config.span_max - config.span_min + 1);
  // e[n]: expected forget tokens emitted while filling n remaining positions.
  std::vector<double> e(n_max + 1, 0.0);
  for (std::uint32_t n = 1; n <= n_max; ++n) {
    double span_term = 0.0;
    for (std::uint32_t len = config.span_min; len <= config.span_max; ++len) {
      const std::uint32_t used = std::min(len, n);
      span_term += span_p * (used + e[n - used]);
    }
    e[n] = (1.0 - q) * e[n - 1] + q * span_term;
  }
  double forget = 0.0, tokens = 0.0;
  for (std::uint32_t len = config.min_len; len <= config.max_len; ++len) {
    forget += e[len];
    tokens += len;
  }
  return forget / tokens;
}

SyntheticActivations gen_activations(const Corpus& labeled, std::uint32_t latent_count, const SynthConfig& config) {
  config.validate();
  SyntheticActivations out;
  out.latents.listed_records_only = true;
  for (std::uint32_t l = 0; l < latent_count; ++l) {
    out.latents.latents.emplace(l, LatentStats{kLatentMean, kLatentSd, "synthetic forget latent " + std::to_string(l), false});
  }
  if (latent_count == 0) return out;

  const auto& params = config.labeling;
  const double strong = kLatentMean + (params.k_sd + 1.0) * kLatentSd;
  const std::uint32_t seed_latents = std::min(params.m_min, latent_count);
  const std::uint64_t stream = derive_seed(config.seed, "activations");

  for (const auto& doc : labeled) {
    if (!doc.labels || doc.labels_are_loss_mask) {
      throw PreconditionError("document '" + doc.doc_id + "' carries no planted labels");
    }
    const auto& labels = *doc.labels;
    const std::size_t n = labels.size();
    Rng rng = substream(stream, doc.doc_id);
    std::normal_distribution<double> noise(0.0, config.activation_noise_sd > 0 ? config.activation_noise_sd : 1.0);

    // Distinct latents, ascending, so records stay canonical.
    auto pick_latents = [&](std::uint32_t count) {
      std::vector<std::uint32_t> all(latent_count);
      for (std::uint32_t i = 0; i < latent_count; ++i) all[i] = i;
      for (std::uint32_t i = 0; i < count; ++i) {
        std::swap(all[i], all[uniform_int(rng, i, latent_count - 1)]);
      }
      std::vector<std::uint32_t> chosen(all.begin(), all.begin() + count);
      std::sort(chosen.begin(), chosen.end());
      return chosen;
    };
    auto emit = [&](std::size_t t, const std::vector<std::uint32_t>& latents, double level) {
      for (auto l : latents) {
        double a = level;
        if (config.activation_noise_sd > 0) a = std::max(0.0, a + noise(rng));
        if (a > 0.0) out.records.push_back({doc.doc_id, static_cast<std::uint32_t>(t), l, a});
      }
    };
    auto near_forget = [&](std::size_t t) {
      for (std::size_t k = (t == 0 ? 0 : t - 1); k <= std::min(n - 1, t + 1); ++k) {
        if (labels[k]) return true;
      }
      return false;
    };

    for (std::size_t t = 0; t < n; ++t) {
      if (labels[t]) {
        const bool leads_run = t == 0 || !labels[t - 1];
        if (leads_run || uniform01(rng) < config.seed_probability) {
          emit(t, pick_latents(seed_latents), strong);
        } else {
          emit(t, pick_latents(1), kWeakActivation);
        }
      } else if (!near_forget(t)) {
        // Retain tokens away from spans: sub-threshold activity, or strong
        // activity on too few latents to seed.
        const double u = uniform01(rng);
        if (u < 0.2) {
          emit(t, pick_latents(1), kBackgroundActivation);
        } else if (u < 0.25 && seed_latents > 1) {
          emit(t, pick_latents(seed_latents - 1), strong);
        }
      }
    }
  }
  return out;
}

FeatureMatrix gen_features(const std::vector<FeatureKey>& keys, const LabelVector& labels, std::size_t dim,
                           double margin, std::uint64_t seed) {
  if (dim < 1) throw DomainError("feature dimension must be >= 1");
  if (!(margin >= 0.0)) throw DomainError("margin must be >= 0");
  if (keys.size() != labels.size()) throw PreconditionError("feature keys and labels differ in length");

  Rng dir_rng = substream(derive_seed(seed, "direction"), std::uint64_t{0});
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> direction(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& v : direction) {
      v = normal(dir_rng);
      norm += v * v;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& v : direction) v /= norm;

  const std::uint64_t rows_seed = derive_seed(seed, "rows");
  std::vector<float> values(keys.size() * dim);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    Rng rng = substream(rows_seed, keys[i].encode());
    std::normal_distribution<double> row_noise(0.0, 1.0);
    const double offset = (labels[i] ? 0.5 : -0.5) * margin;
    for (std::size_t k = 0; k < dim; ++k) {
      values[i * dim + k] = static_cast<float>(row_noise(rng) + offset * direction[k]);
    }
  }
  return FeatureMatrix(dim, std::move(values), keys);
}

TokenFeatures gen_token_features(const Corpus& labeled, std::size_t dim, double margin, std::uint64_t seed) {
  std::vector<FeatureKey> keys;
  LabelVector labels;
  for (const auto& doc : labeled) {
    if (!doc.labels || doc.labels_are_loss_mask) {
      throw PreconditionError("document '" + doc.doc_id + "' carries no labels");
    }
    for (std::size_t t = 0; t < doc.tokens.size(); ++t) {
      keys.push_back({doc.doc_id, static_cast<std::uint32_t>(t)});
      labels.push_back((*doc.labels)[t]);
    }
  }
  auto features = gen_features(keys, labels, dim, margin, seed);
  return {std::move(features), std::move(labels)};
}

ScalingSeries gen_scaling_series(std::string label, double scale, double alpha, const std::vector<double>& budgets,
                                 double noise_sd, std::uint64_t seed) {
  if (!(scale > 0.0) || !(alpha > 0.0)) throw DomainError("power-law scale and exponent must be positive");
  if (!(noise_sd >= 0.0)) throw DomainError("noise SD must be >= 0");
  ScalingSeries s;
  s.label = std::move(label);
  Rng rng = substream(derive_seed(seed, "scaling"), s.label);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double c : budgets) {
    double loss = scale * std::pow(c, -alpha);
    if (noise_sd > 0.0) loss *= std::exp(noise_sd * normal(rng));
    s.points.push_back({c, loss});
  }
  s.validate();
  return s;
}

}  // namespace tokensieve
