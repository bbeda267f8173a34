#include "tokensieve/labeler.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "tokensieve/error.hpp"
#include "tokensieve/rng.hpp"

namespace tokensieve {
namespace {

// Sorted copy with identical duplicates removed; conflicting ones throw.
DocActivations canonical(DocActivations acts, const std::string& doc_id) {
  std::sort(acts.begin(), acts.end(), [](const auto& a, const auto& b) {
    return std::tie(a.token, a.latent, a.activation) < std::tie(b.token, b.latent, b.activation);
  });
  DocActivations out;
  out.reserve(acts.size());
  for (const auto& a : acts) {
    if (!out.empty() && out.back().token == a.token && out.back().latent == a.latent) {
      if (out.back().activation != a.activation) {
        throw FormatError("conflicting activation records for doc '" + doc_id + "' token " + std::to_string(a.token) +
                          " latent " + std::to_string(a.latent));
      }
      continue;
    }
    out.push_back(a);
  }
  return out;
}

std::vector<std::uint8_t> eligible_tokens(const DocActivations& acts, std::size_t n, const LatentSet& latents,
                                          double threshold) {
  std::vector<std::uint8_t> eligible(n, 0);
  for (const auto& a : acts) {
    if (a.token >= n) {
      throw PreconditionError("activation on token " + std::to_string(a.token) + " beyond document length " +
                              std::to_string(n));
    }
    if (a.activation > threshold && latents.contains(a.latent)) eligible[a.token] = 1;
  }
  return eligible;
}

}  // namespace

void LabelingParams::validate() const {
  if (!(k_sd > 0.0) || !std::isfinite(k_sd)) throw DomainError("k_sd must be a positive finite number");
  if (m_min < 1) throw DomainError("m_min must be at least 1");
  if (!std::isfinite(expansion_threshold)) throw DomainError("expansion_threshold must be finite");
}

LatentSet latent_stats(std::span<const ActivationRecord> records, std::span<const std::uint32_t> latent_ids,
                       std::optional<std::uint64_t> total_tokens) {
  std::map<std::uint32_t, std::vector<double>> values;
  for (auto id : latent_ids) values[id];

  // (doc, token, latent) -> activation, for duplicate detection.
  std::map<std::tuple<std::string, std::uint32_t, std::uint32_t>, double> seen;
  for (const auto& r : records) {
    auto it = values.find(r.latent_id);
    if (it == values.end()) continue;
    auto [pos, inserted] = seen.emplace(std::make_tuple(r.doc_id, r.token_index, r.latent_id), r.activation);
    if (!inserted) {
      if (pos->second != r.activation) {
        throw FormatError("conflicting activation records for doc '" + r.doc_id + "' token " +
                          std::to_string(r.token_index) + " latent " + std::to_string(r.latent_id));
      }
      continue;
    }
    it->second.push_back(r.activation);
  }

  LatentSet set;
  set.listed_records_only = !total_tokens.has_value();
  for (const auto& [id, xs] : values) {
    LatentStats st;
    if (xs.empty()) {
      st.absent = true;
      set.latents.emplace(id, st);
      continue;
    }
    double denom = static_cast<double>(xs.size());
    if (total_tokens) {
      if (*total_tokens < xs.size()) {
        throw PreconditionError("total token count smaller than the record count for latent " + std::to_string(id));
      }
      denom = static_cast<double>(*total_tokens);
    }
    double sum = 0.0;
    for (double x : xs) sum += x;
    const double mean = sum / denom;
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    ss += (denom - static_cast<double>(xs.size())) * mean * mean;
    st.mean = mean;
    st.sd = std::sqrt(std::max(0.0, ss / denom));
    set.latents.emplace(id, st);
  }
  return set;
}

std::unordered_map<std::string, DocActivations> group_by_document(std::span<const ActivationRecord> records) {
  std::unordered_map<std::string, DocActivations> by_doc;
  for (const auto& r : records) by_doc[r.doc_id].push_back({r.token_index, r.latent_id, r.activation});
  for (auto& [doc_id, acts] : by_doc) acts = canonical(std::move(acts), doc_id);
  return by_doc;
}

LabelVector seed_labels(const DocActivations& acts, std::size_t token_count, const LatentSet& latents,
                        const LabelingParams& params) {
  params.validate();
  std::vector<std::uint32_t> strong(token_count, 0);
  for (const auto& a : acts) {
    if (a.token >= token_count) {
      throw PreconditionError("activation on token " + std::to_string(a.token) + " beyond document length " +
                              std::to_string(token_count));
    }
    auto it = latents.latents.find(a.latent);
    if (it == latents.latents.end()) continue;
    if (a.activation >= it->second.mean + params.k_sd * it->second.sd) ++strong[a.token];
  }
  LabelVector mask(token_count, 0);
  for (std::size_t t = 0; t < token_count; ++t) mask[t] = strong[t] >= params.m_min ? 1 : 0;
  return mask;
}

LabelVector expand_labels(const LabelVector& seed, const DocActivations& acts, const LatentSet& latents,
                          const LabelingParams& params, SweepOrder order) {
  params.validate();
  const std::size_t n = seed.size();
  const auto eligible = eligible_tokens(acts, n, latents, params.expansion_threshold);
  LabelVector mask = seed;
  auto joins = [&](std::size_t t) {
    if (mask[t] || !eligible[t]) return false;
    return (t > 0 && mask[t - 1]) || (t + 1 < n && mask[t + 1]);
  };

  switch (order) {
    case SweepOrder::kForward:
    case SweepOrder::kBackward: {
      bool changed = true;
      while (changed) {
        changed = false;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t t = order == SweepOrder::kForward ? i : n - 1 - i;
          if (joins(t)) {
            mask[t] = 1;
            changed = true;
          }
        }
      }
      break;
    }
    case SweepOrder::kWorklist: {
      std::deque<std::size_t> work;
      for (std::size_t t = 0; t < n; ++t) {
        if (mask[t]) work.push_back(t);
      }
      while (!work.empty()) {
        const std::size_t t = work.front();
        work.pop_front();
        for (std::size_t nb : {t - 1, t + 1}) {
          if (nb < n && joins(nb)) {  // t - 1 wraps to SIZE_MAX at t == 0
            mask[nb] = 1;
            work.push_back(nb);
          }
        }
      }
      break;
    }
  }
  return mask;
}

LabelVector label_document(const DocActivations& acts, std::size_t token_count, const LatentSet& latents,
                           const LabelingParams& params) {
  return expand_labels(seed_labels(acts, token_count, latents, params), acts, latents, params);
}

LabelVector propagate_document_label(std::uint8_t label, std::size_t token_count) {
  if (label > 1) throw DomainError("coarse label must be 0 or 1");
  return LabelVector(token_count, label);
}

LabelVector propagate_sentence_labels(const std::vector<Span>& token_spans, const std::vector<CoarseUnit>& units) {
  std::uint32_t expected_start = 0;
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (units[i].bytes.start != expected_start || units[i].bytes.end < units[i].bytes.start) {
      throw PreconditionError("sentence units must partition the byte range; unit " + std::to_string(i) +
                              " starts at " + std::to_string(units[i].bytes.start));
    }
    if (units[i].label > 1) throw DomainError("coarse label must be 0 or 1");
    expected_start = units[i].bytes.end;
  }
  LabelVector out(token_spans.size(), 0);
  std::size_t u = 0;
  for (std::size_t t = 0; t < token_spans.size(); ++t) {
    const std::uint32_t start = token_spans[t].start;
    if (t > 0 && start < token_spans[t - 1].start) u = 0;
    while (u < units.size() && units[u].bytes.end <= start) ++u;
    if (u == units.size() || start < units[u].bytes.start) {
      throw PreconditionError("token " + std::to_string(t) + " starts at byte " + std::to_string(start) +
                              " outside every sentence unit");
    }
    out[t] = units[u].label;
  }
  return out;
}

LabelVector perturb_labels(const LabelVector& labels, const NoiseSpec& spec, std::string_view doc_id) {
  if (!(spec.flip_rate >= 0.0 && spec.flip_rate <= 1.0)) throw DomainError("flip rate must lie in [0, 1]");
  Rng rng = substream(spec.seed, doc_id);
  LabelVector out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool flip = uniform01(rng) < spec.flip_rate;
    out[i] = flip ? static_cast<std::uint8_t>(1 - labels[i]) : labels[i];
  }
  return out;
}

double expected_error_rate(double accuracy, double flip_rate) {
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw DomainError("accuracy must lie in [0, 1]");
  if (!(flip_rate >= 0.0 && flip_rate <= 1.0)) throw DomainError("flip rate must lie in [0, 1]");
  return 1.0 - accuracy * (1.0 - flip_rate) - flip_rate * (1.0 - accuracy);
}

std::vector<ActivationRecord> read_activations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open activation file: " + path.string());
  std::vector<ActivationRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      const auto token = j.at("token").get<std::int64_t>();
      const auto latent = j.at("latent").get<std::int64_t>();
      if (token < 0 || latent < 0) throw FormatError("negative token or latent index");
      out.push_back({j.at("doc_id").get<std::string>(), static_cast<std::uint32_t>(token),
                     static_cast<std::uint32_t>(latent), j.at("act").get<double>()});
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_activations(std::span<const ActivationRecord> records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write activation file: " + path.string());
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["doc_id"] = r.doc_id;
    j["token"] = r.token_index;
    j["latent"] = r.latent_id;
    j["act"] = r.activation;
    out << j.dump() << '\n';
  }
}

LatentSet LatentSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open latent set: " + path.string());
  try {
    auto j = nlohmann::json::parse(in);
    LatentSet set;
    for (const auto& [key, v] : j.at("latents").items()) {
      LatentStats st;
      st.mean = v.at("mean").get<double>();
      st.sd = v.at("sd").get<double>();
      if (!(st.sd >= 0.0)) throw FormatError("latent " + key + " has negative sd");
      if (v.contains("desc") && !v["desc"].is_null()) st.desc = v["desc"].get<std::string>();
      st.absent = v.value("absent", false);
      std::size_t used = 0;
      const unsigned long id = std::stoul(key, &used);
      if (used != key.size()) throw FormatError("latent id '" + key + "' is not an integer");
      if (!set.latents.emplace(static_cast<std::uint32_t>(id), st).second) {
        throw FormatError("duplicate latent id " + key);
      }
    }
    set.listed_records_only = j.value("listed_records_only", true);
    return set;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("latent set " + path.string() + ": " + e.what());
  } catch (const std::logic_error& e) {
    throw FormatError("latent set " + path.string() + ": bad latent id");
  }
}

void LatentSet::save(const std::filesystem::path& path) const {
  nlohmann::ordered_json j;
  j["latents"] = nlohmann::ordered_json::object();
  for (const auto& [id, st] : latents) {
    nlohmann::ordered_json v;
    v["mean"] = st.mean;
    v["sd"] = st.sd;
    if (st.desc) v["desc"] = *st.desc;
    if (st.absent) v["absent"] = true;
    j["latents"][std::to_string(id)] = v;
  }
  j["listed_records_only"] = listed_records_only;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write latent set: " + path.string());
  out << j.dump(1) << '\n';
}

}  // namespace tokensieve
