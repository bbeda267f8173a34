#include "tokensieve/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_map>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "tokensieve/corpus.hpp"
#include "tokensieve/error.hpp"
#include "tokensieve/features.hpp"
#include "tokensieve/filter.hpp"
#include "tokensieve/labeler.hpp"
#include "tokensieve/metrics.hpp"
#include "tokensieve/parallel.hpp"
#include "tokensieve/probe.hpp"
#include "tokensieve/remap.hpp"
#include "tokensieve/rng.hpp"
#include "tokensieve/scaling.hpp"
#include "tokensieve/shard.hpp"
#include "tokensieve/synthgen.hpp"
#include "tokensieve/tokenizer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace tokensieve::cli {
namespace {

struct Options {
  std::string input, output, config;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::optional<double> threshold;
  std::optional<double> fraction;
  std::string mode = "mask";
  double flip_rate = 0.0;

  // tokenize / filter
  std::string merges;
  std::optional<std::uint32_t> hidden_id;
  // label
  std::string activations, latents, coarse;
  double k_sd = 4.0;
  std::uint32_t m_min = 2;
  double expansion_threshold = 0.0;
  // remap
  std::string target;
  // probes
  std::string features, probe, doc_labels, doc_scores, aggregate = "max";
  double lambda = 1e-4;
  std::size_t max_iter = 1000;
  double aggregate_threshold = 0.5;
  // filter
  std::string truth, report;
  std::optional<std::uint64_t> onset_step;
  // noise
  std::optional<double> accuracy;
  // stats
  std::string what = "histogram";
  std::string edges = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1";
  std::string latent_ids;
  std::optional<std::uint64_t> total_tokens;
  // scaling
  std::string baseline = "baseline", frontier;
  // synth
  SynthConfig synth;
  double scaling_alpha = 0.1, scaling_scale = 1.0, scaling_noise = 0.0, scaling_shift = 0.1;
  // weak2strong
  std::string weak_features, strong_features;
  double eval_fraction = 0.2;
};

// Options whose values name outputs; they stay out of the config hash so
// runs writing to different places still hash identically.
const std::set<std::string> kNonConfig = {"--output", "--config", "--jobs", "--report", "--doc-scores-out", "--help"};

struct Manifest {
  std::string subcommand;
  std::vector<std::pair<std::string, std::string>> inputs;  // (flag, path)
  std::vector<std::string> outputs;
  json notes = json::object();
};

std::string hex64(std::uint64_t v) {
  return fmt::format("{:016x}", v);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
}

void require_file(const std::string& path, const std::string& flag) {
  if (path.empty()) throw PreconditionError(flag + " is required");
  if (!fs::is_regular_file(path)) throw IoError("input file not found: " + path);
}

void require_output(const std::string& path) {
  if (path.empty()) throw PreconditionError("--output is required");
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      out.push_back(std::stod(cell));
    } catch (const std::logic_error&) {
      throw FormatError("'" + cell + "' is not a number");
    }
  }
  return out;
}

std::unordered_map<std::string, std::size_t> index_by_id(const Corpus& docs) {
  std::unordered_map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!idx.emplace(docs[i].doc_id, i).second) throw FormatError("duplicate doc_id '" + docs[i].doc_id + "'");
  }
  return idx;
}

// Row index of every (doc, token) position, in corpus order.
std::vector<std::vector<std::size_t>> rows_for_tokens(const FeatureMatrix& features, const Corpus& docs) {
  std::vector<std::vector<std::size_t>> rows(docs.size());
  if (features.keys().empty()) {
    std::size_t next = 0;
    for (std::size_t d = 0; d < docs.size(); ++d) {
      for (std::size_t t = 0; t < docs[d].tokens.size(); ++t) rows[d].push_back(next++);
    }
    if (next != features.rows()) {
      throw PreconditionError("dense feature file has " + std::to_string(features.rows()) + " rows for " +
                              std::to_string(next) + " tokens");
    }
    return rows;
  }
  std::unordered_map<std::string, std::size_t> by_key;
  for (std::size_t r = 0; r < features.rows(); ++r) by_key.emplace(features.keys()[r].encode(), r);
  for (std::size_t d = 0; d < docs.size(); ++d) {
    for (std::size_t t = 0; t < docs[d].tokens.size(); ++t) {
      auto it = by_key.find(FeatureKey{docs[d].doc_id, static_cast<std::uint32_t>(t)}.encode());
      if (it == by_key.end()) {
        throw PreconditionError("no feature row for doc '" + docs[d].doc_id + "' token " + std::to_string(t));
      }
      rows[d].push_back(it->second);
    }
  }
  return rows;
}

bool document_level(const FeatureMatrix& f) {
  return !f.keys().empty() && !f.keys().front().token_index.has_value();
}

std::map<std::string, double> read_doc_values(const std::string& path, const std::string& field) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::map<std::string, double> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      out[j.at("doc_id").get<std::string>()] = j.at(field).get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ": " + e.what());
    }
  }
  return out;
}

std::string doc_values_jsonl(const Corpus& docs, const std::vector<double>& values, const std::string& field) {
  std::string out;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    json j;
    j["doc_id"] = docs[i].doc_id;
    j[field] = values[i];
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<double> as_doubles(const std::vector<float>& v) {
  return {v.begin(), v.end()};
}

// ---------------------------------------------------------------- stages

void do_tokenize(Options& o, Manifest& m) {
  require_file(o.input, "--input");
  require_file(o.merges, "--merges");
  require_output(o.output);
  m.inputs = {{"--input", o.input}, {"--merges", o.merges}};
  const auto raw = read_raw_corpus(o.input);
  const auto table = MergeTable::load(o.merges);
  auto docs = parallel_map(raw.size(), o.jobs, [&](std::size_t i) {
    try {
      return encode(raw[i].text, table, raw[i].doc_id);
    } catch (const FormatError& e) {
      throw FormatError("document '" + raw[i].doc_id + "': " + e.what());
    }
  });
  write_shard(docs, o.output);
  m.outputs.push_back(o.output);
}

void do_label(Options& o, Manifest& m) {
  require_file(o.input, "--input");
  require_output(o.output);
  m.inputs = {{"--input", o.input}};
  auto docs = read_shard(o.input);

  if (!o.coarse.empty()) {
    require_file(o.coarse, "--coarse");
    m.inputs.emplace_back("--coarse", o.coarse);
    std::unordered_map<std::string, nlohmann::json> units;
    std::ifstream in(o.coarse);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("doc_id")) throw FormatError(o.coarse + ": malformed unit record");
      units[j["doc_id"].get<std::string>()] = j;
    }
    auto labels = parallel_map(docs.size(), o.jobs, [&](std::size_t i) {
      const auto& doc = docs[i];
      auto it = units.find(doc.doc_id);
      if (it == units.end()) throw PreconditionError("no coarse label for document '" + doc.doc_id + "'");
      const auto& u = it->second;
      if (u.contains("label")) return propagate_document_label(u["label"].get<std::uint8_t>(), doc.tokens.size());
      if (!doc.spans) throw PreconditionError("sentence labels need spans on '" + doc.doc_id + "'");
      std::vector<CoarseUnit> sentences;
      for (const auto& s : u.at("sentences")) {
        sentences.push_back({{s.at(0).get<std::uint32_t>(), s.at(1).get<std::uint32_t>()}, s.at(2).get<std::uint8_t>()});
      }
      return propagate_sentence_labels(*doc.spans, sentences);
    });
    for (std::size_t i = 0; i < docs.size(); ++i) {
      docs[i].labels = std::move(labels[i]);
      docs[i].labels_are_loss_mask = false;
    }
  } else {
    require_file(o.activations, "--activations");
    require_file(o.latents, "--latents");
    m.inputs.emplace_back("--activations", o.activations);
    m.inputs.emplace_back("--latents", o.latents);
    const LabelingParams params{o.k_sd, o.m_min, o.expansion_threshold};
    params.validate();
    const auto latents = LatentSet::load(o.latents);
    const auto records = read_activations(o.activations);
    const auto by_doc = group_by_document(records);
    const auto ids = index_by_id(docs);
    for (const auto& [doc_id, _] : by_doc) {
      if (!ids.count(doc_id)) throw PreconditionError("activations reference unknown document '" + doc_id + "'");
    }
    const DocActivations none;
    auto labels = parallel_map(docs.size(), o.jobs, [&](std::size_t i) {
      auto it = by_doc.find(docs[i].doc_id);
      return label_document(it == by_doc.end() ? none : it->second, docs[i].tokens.size(), latents, params);
    });
    std::uint64_t forget = 0;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      forget += static_cast<std::uint64_t>(std::count(labels[i].begin(), labels[i].end(), std::uint8_t{1}));
      docs[i].labels = std::move(labels[i]);
      docs[i].labels_are_loss_mask = false;
    }
    m.notes["forget_tokens"] = forget;
  }
  write_shard(docs, o.output);
  m.outputs.push_back(o.output);
}

void do_remap(Options& o, Manifest& m) {
  require_file(o.input, "--input");
  require_file(o.target, "--target");
  require_output(o.output);
  m.inputs = {{"--input", o.input}, {"--target", o.target}};
  const auto source = read_shard(o.input);
  const auto target = read_shard(o.target);
  const auto ids = index_by_id(source);
  std::vector<std::size_t> uncovered(target.size(), 0);
  auto out = parallel_map(target.size(), o.jobs, [&](std::size_t i) {
    auto it = ids.find(target[i].doc_id);
    if (it == ids.end()) throw PreconditionError("target document '" + target[i].doc_id + "' missing from source");
    return remap_document(source[it->second], target[i], &uncovered[i]);
  });
  std::uint64_t total_uncovered = 0;
  for (auto u : uncovered) total_uncovered += u;
  if (total_uncovered > 0) spdlog::warn("{} target tokens had no overlapping source token", total_uncovered);
  m.notes["uncovered_target_tokens"] = total_uncovered;
  write_shard(out, o.output);
  m.outputs.push_back(o.output);
}

struct LabeledRows {
  FeatureMatrix features;
  LabelVector labels;
};

LabeledRows labeled_rows(Options& o, Manifest& m) {
  require_file(o.features, "--features");
  m.inputs.emplace_back("--features", o.features);
  auto features = read_features(o.features);
  LabelVector labels;
  if (document_level(features)) {
    require_file(o.doc_labels, "--doc-labels");
    m.inputs.emplace_back("--doc-labels", o.doc_labels);
    const auto values = read_doc_values(o.doc_labels, "label");
    for (const auto& k : features.keys()) {
      auto it = values.find(k.doc_id);
      if (it == values.end()) throw PreconditionError("no document label for '" + k.doc_id + "'");
      labels.push_back(it->second != 0.0 ? 1 : 0);
    }
  } else {
    require_file(o.input, "--input");
    m.inputs.emplace_back("--input", o.input);
    const auto docs = read_shard(o.input);
    const auto rows = rows_for_tokens(features, docs);
    std::vector<std::size_t> order;
    for (std::size_t d = 0; d < docs.size(); ++d) {
      if (!docs[d].labels || docs[d].labels_are_loss_mask) {
        throw PreconditionError("document '" + docs[d].doc_id + "' carries no forget labels");
      }
      for (std::size_t t = 0; t < rows[d].size(); ++t) {
        order.push_back(rows[d][t]);
        labels.push_back((*docs[d].labels)[t]);
      }
    }
    features = features.select(order);
  }
  return {std::move(features), std::move(labels)};
}

void do_train_probe(Options& o, Manifest& m) {
  require_output(o.output);
  auto data = labeled_rows(o, m);
  TrainOptions opts;
  opts.lambda = o.lambda;
  opts.max_iterations = o.max_iter;
  const auto result = train_probe(data.features, data.labels, opts);
  m.notes["iterations"] = result.iterations;
  m.notes["gradient_max_norm"] = result.gradient_max_norm;
  m.notes["converged"] = result.converged;
  m.notes["degenerate"] = result.probe.degenerate;
  result.probe.save(o.output);
  m.outputs.push_back(o.output);
}

void do_score(Options& o, Manifest& m) {
  require_file(o.probe, "--probe");
  require_file(o.features, "--features");
  require_output(o.output);
  m.inputs = {{"--probe", o.probe}, {"--features", o.features}};
  const auto probe = Probe::load(o.probe);
  const auto features = read_features(o.features);
  if (document_level(features)) {
    const auto scores = score(probe, features);
    std::string out;
    for (std::size_t r = 0; r < features.rows(); ++r) {
      json j;
      j["doc_id"] = features.keys()[r].doc_id;
      j["score"] = scores[r];
      out += j.dump() + "\n";
    }
    write_file(o.output, out);
    m.outputs.push_back(o.output);
    return;
  }
  require_file(o.input, "--input");
  m.inputs.emplace_back("--input", o.input);
  auto docs = read_shard(o.input);
  const auto rows = rows_for_tokens(features, docs);
  auto scores = parallel_map(docs.size(), o.jobs, [&](std::size_t d) {
    std::vector<float> s(rows[d].size());
    for (std::size_t t = 0; t < s.size(); ++t) s[t] = static_cast<float>(score_row(probe, features.row(rows[d][t])));
    return s;
  });
  for (std::size_t d = 0; d < docs.size(); ++d) docs[d].scores = std::move(scores[d]);
  write_shard(docs, o.output);
  m.outputs.push_back(o.output);
  if (!o.doc_scores.empty()) {
    const auto method = parse_aggregate_method(o.aggregate);
    std::vector<double> doc_scores(docs.size());
    for (std::size_t d = 0; d < docs.size(); ++d) {
      doc_scores[d] = aggregate_doc_score(as_doubles(*docs[d].scores), method, o.aggregate_threshold);
    }
    write_file(o.doc_scores, doc_values_jsonl(docs, doc_scores, "score"));
    m.outputs.push_back(o.doc_scores);
  }
}

void do_calibrate(Options& o, Manifest& m) {
  require_file(o.probe, "--probe");
  require_output(o.output);
  m.inputs = {{"--probe", o.probe}};
  auto probe = Probe::load(o.probe);
  std::vector<double> scores;
  LabelVector labels;
  std::string set_name;
  if (!o.doc_scores.empty()) {
    require_file(o.doc_scores, "--doc-scores");
    m.inputs.emplace_back("--doc-scores", o.doc_scores);
    const auto values = read_doc_values(o.doc_scores, "score");
    std::map<std::string, double> truth;
    if (!o.fraction) {
      require_file(o.doc_labels, "--doc-labels");
      m.inputs.emplace_back("--doc-labels", o.doc_labels);
      truth = read_doc_values(o.doc_labels, "label");
    }
    for (const auto& [id, s] : values) {
      scores.push_back(s);
      if (!o.fraction) {
        auto it = truth.find(id);
        if (it == truth.end()) throw PreconditionError("no document label for '" + id + "'");
        labels.push_back(it->second != 0.0 ? 1 : 0);
      }
    }
    set_name = fs::path(o.doc_scores).filename().string();
  } else {
    require_file(o.input, "--input");
    m.inputs.emplace_back("--input", o.input);
    const auto docs = read_shard(o.input);
    for (const auto& d : docs) {
      if (!d.scores) throw PreconditionError("document '" + d.doc_id + "' has no token scores");
      scores.insert(scores.end(), d.scores->begin(), d.scores->end());
      if (!o.fraction) {
        if (!d.labels || d.labels_are_loss_mask) {
          throw PreconditionError("F1 calibration needs forget labels on '" + d.doc_id + "'");
        }
        labels.insert(labels.end(), d.labels->begin(), d.labels->end());
      }
    }
    set_name = fs::path(o.input).filename().string();
  }
  if (o.fraction) {
    const auto cal = calibrate_fraction(scores, *o.fraction);
    if (cal.tie_warning) {
      spdlog::warn("score ties: threshold filters {} rows instead of {}", cal.filtered, cal.quota);
    }
    probe.threshold = cal.threshold;
    probe.calibration = {"fraction", *o.fraction, set_name};
    m.notes["filtered"] = cal.filtered;
    m.notes["quota"] = cal.quota;
    m.notes["tie_warning"] = cal.tie_warning;
  } else {
    const auto cal = calibrate_f1(scores, labels);
    probe.threshold = cal.threshold;
    probe.calibration = {"f1max", std::nullopt, set_name};
    m.notes["f1"] = cal.f1;
  }
  probe.save(o.output);
  m.outputs.push_back(o.output);
}

void do_filter(Options& o, Manifest& m) {
  require_file(o.input, "--input");
  require_output(o.output);
  m.inputs = {{"--input", o.input}};
  const auto docs = read_shard(o.input);
  FilterConfig config;
  config.mode = parse_filter_mode(o.mode);
  config.onset_step = o.onset_step;
  if (o.threshold.has_value() == o.fraction.has_value()) {
    throw PreconditionError("give exactly one of --threshold and --fraction");
  }

  std::vector<double> doc_scores;
  if (config.mode == FilterMode::kDocument) {
    if (!o.doc_scores.empty()) {
      require_file(o.doc_scores, "--doc-scores");
      m.inputs.emplace_back("--doc-scores", o.doc_scores);
      const auto values = read_doc_values(o.doc_scores, "score");
      for (const auto& d : docs) {
        auto it = values.find(d.doc_id);
        if (it == values.end()) throw PreconditionError("document '" + d.doc_id + "' has no score");
        doc_scores.push_back(it->second);
      }
    } else {
      const auto method = parse_aggregate_method(o.aggregate);
      for (const auto& d : docs) {
        if (!d.scores) throw PreconditionError("document '" + d.doc_id + "' has no token scores");
        doc_scores.push_back(d.tokens.empty() ? 0.0
                                              : aggregate_doc_score(as_doubles(*d.scores), method, o.aggregate_threshold));
      }
    }
  }

  if (o.fraction) {
    std::vector<double> pool;
    if (config.mode == FilterMode::kDocument) {
      pool = doc_scores;
    } else {
      for (const auto& d : docs) {
        if (!d.scores) throw PreconditionError("document '" + d.doc_id + "' has no token scores");
        pool.insert(pool.end(), d.scores->begin(), d.scores->end());
      }
    }
    const auto cal = calibrate_fraction(pool, *o.fraction);
    if (cal.tie_warning) spdlog::warn("score ties: threshold filters {} rows instead of {}", cal.filtered, cal.quota);
    config.threshold = cal.threshold;
  } else {
    config.threshold = *o.threshold;
  }

  if (config.mode == FilterMode::kRemoval) {
    if (o.hidden_id) {
      config.hidden_id = *o.hidden_id;
    } else {
      require_file(o.merges, "--merges");
      m.inputs.emplace_back("--merges", o.merges);
      config.hidden_id = MergeTable::load(o.merges).hidden_id();
    }
  }
  config.validate();

  std::optional<Corpus> truth;
  if (!o.truth.empty()) {
    require_file(o.truth, "--truth");
    m.inputs.emplace_back("--truth", o.truth);
    truth = read_shard(o.truth);
  }

  FilterReport report;
  if (config.mode == FilterMode::kDocument) {
    const auto result = filter_documents(docs, doc_scores, config.threshold);
    write_shard(result.retained, o.output);
    report = filter_report(docs, result, config, truth ? &*truth : nullptr);
  } else {
    auto filtered = parallel_map(docs.size(), o.jobs, [&](std::size_t i) {
      const Corpus one{docs[i]};
      auto out = config.mode == FilterMode::kRemoval ? remove_tokens(one, config.threshold, *config.hidden_id)
                                                     : mask_tokens(one, config.threshold);
      return std::move(out.front());
    });
    write_shard(to_corpus(filtered), o.output);
    report = filter_report(docs, filtered, config, truth ? &*truth : nullptr);
  }
  m.outputs.push_back(o.output);
  const std::string report_path = o.report.empty() ? o.output + ".report.json" : o.report;
  write_file(report_path, report.to_json() + "\n");
  m.outputs.push_back(report_path);
  m.notes["threshold"] = config.threshold;
}

void do_noise(Options& o, Manifest& m) {
  require_file(o.input, "--input");
  require_output(o.output);
  m.inputs = {{"--input", o.input}};
  auto docs = read_shard(o.input);
  const NoiseSpec spec{o.flip_rate, o.seed};
  auto labels = parallel_map(docs.size(), o.jobs, [&](std::size_t i) {
    if (!docs[i].labels || docs[i].labels_are_loss_mask) {
      throw PreconditionError("document '" + docs[i].doc_id + "' carries no forget labels");
    }
    return perturb_labels(*docs[i].labels, spec, docs[i].doc_id);
  });
  for (std::size_t i = 0; i < docs.size(); ++i) docs[i].labels = std::move(labels[i]);
  if (o.accuracy) m.notes["expected_error_rate"] = expected_error_rate(*o.accuracy, o.flip_rate);
  write_shard(docs, o.output);
  m.outputs.push_back(o.output);
}

void do_stats(Options& o, Manifest& m) {
  require_file(o.input, "--input");
  require_output(o.output);
  m.inputs = {{"--input", o.input}};
  if (o.what == "histogram") {
    const auto docs = read_shard(o.input);
    const auto h = doc_forget_histogram(docs, parse_list(o.edges));
    json j;
    j["edges"] = h.edges;
    j["counts"] = h.counts;
    j["zero_token_docs"] = h.zero_token_docs;
    j["zero_forget_docs"] = h.zero_forget_docs;
    j["total_docs"] = h.total();
    j["zero_forget_fraction"] = h.total() == 0 ? 0.0 : static_cast<double>(h.zero_forget_docs) / static_cast<double>(h.total());
    write_file(o.output, j.dump(1) + "\n");
  } else if (o.what == "latents") {
    const auto records = read_activations(o.input);
    std::vector<std::uint32_t> ids;
    for (double v : parse_list(o.latent_ids)) ids.push_back(static_cast<std::uint32_t>(v));
    const auto set = latent_stats(records, ids, o.total_tokens);
    for (const auto& [id, st] : set.latents) {
      if (st.absent) spdlog::warn("latent {} has no activation records", id);
    }
    set.save(o.output);
  } else {
    throw PreconditionError("--what must be 'histogram' or 'latents'");
  }
  m.outputs.push_back(o.output);
}

void do_scaling(Options& o, Manifest& m) {
  require_output(o.output);
  if (!o.frontier.empty()) {
    require_file(o.frontier, "--frontier");
    m.inputs = {{"--frontier", o.frontier}};
    const auto all = read_frontier_csv(o.frontier);
    auto base = std::find_if(all.begin(), all.end(), [&](const auto& s) { return s.label == o.baseline; });
    if (base == all.end()) throw PreconditionError("no frontier series named '" + o.baseline + "'");
    json j;
    j["baseline"] = o.baseline;
    j["normalized_auc"] = json::object();
    for (const auto& s : all) j["normalized_auc"][s.label] = frontier_auc(s, *base);
    write_file(o.output, j.dump(1) + "\n");
    m.outputs.push_back(o.output);
    return;
  }
  require_file(o.input, "--input");
  m.inputs = {{"--input", o.input}};
  const auto all = read_scaling_csv(o.input);
  auto base = std::find_if(all.begin(), all.end(), [&](const auto& s) { return s.label == o.baseline; });
  if (base == all.end()) throw PreconditionError("no series named '" + o.baseline + "'");
  json j;
  j["baseline"] = o.baseline;
  j["reports"] = json::array();
  std::string csv;
  for (const auto& s : all) {
    if (s.label == o.baseline) continue;
    const auto rep = slowdown(*base, s);
    j["reports"].push_back(json::parse(rep.to_json()));
    const auto part = rep.to_csv();
    csv += csv.empty() ? part : part.substr(part.find('\n') + 1);
  }
  write_file(o.output, j.dump(1) + "\n");
  const std::string csv_path = fs::path(o.output).replace_extension(".csv").string();
  write_file(csv_path, csv);
  m.outputs.push_back(o.output);
  m.outputs.push_back(csv_path);
}

void do_synth(Options& o, Manifest& m) {
  require_output(o.output);
  fs::create_directories(o.output);
  const fs::path dir(o.output);
  o.synth.seed = o.seed;
  o.synth.validate();
  const auto vocab = synthetic_vocabulary(o.synth);
  const auto corpus = gen_corpus(o.synth, vocab);
  const auto acts = gen_activations(corpus.docs, o.synth.latent_count, o.synth);
  const auto features = gen_token_features(corpus.docs, o.synth.feature_dim, o.synth.margin, o.seed);

  write_raw_corpus(corpus.raw, dir / "raw.jsonl");
  vocab.table.save(dir / "merges.json");
  write_shard(corpus.docs, dir / "truth.tksv");
  write_activations(acts.records, dir / "activations.jsonl");
  acts.latents.save(dir / "latents.json");
  write_features(features.features, dir / "features.tkft");
  write_file(dir / "synth_config.json", o.synth.to_json() + "\n");

  std::vector<double> budgets;
  for (int e = 15; e <= 19; ++e) budgets.push_back(std::pow(10.0, e));
  const auto base = gen_scaling_series("baseline", o.scaling_scale, o.scaling_alpha, budgets, o.scaling_noise, o.seed);
  // Filtered curve: the baseline law with losses raised by 10^shift.
  const auto filtered = gen_scaling_series("filtered", o.scaling_scale * std::pow(10.0, o.scaling_shift), o.scaling_alpha,
                                           budgets, o.scaling_noise, o.seed);
  write_scaling_csv({base, filtered}, dir / "series.csv");

  for (const char* name : {"raw.jsonl", "merges.json", "truth.tksv", "activations.jsonl", "latents.json",
                           "features.tkft", "synth_config.json", "series.csv"}) {
    m.outputs.push_back((dir / name).string());
  }
  m.notes["expected_forget_fraction"] = expected_forget_fraction(o.synth);
}

void do_weak2strong(Options& o, Manifest& m) {
  require_file(o.weak_features, "--weak-features");
  require_file(o.strong_features, "--strong-features");
  require_file(o.input, "--input");
  require_output(o.output);
  m.inputs = {{"--weak-features", o.weak_features}, {"--strong-features", o.strong_features}, {"--input", o.input}};
  if (!(o.eval_fraction > 0.0 && o.eval_fraction < 1.0)) throw DomainError("--eval-fraction must lie in (0, 1)");
  const auto weak = read_features(o.weak_features);
  const auto strong = read_features(o.strong_features);
  const auto docs = read_shard(o.input);
  const auto weak_rows = rows_for_tokens(weak, docs);
  const auto strong_rows = rows_for_tokens(strong, docs);

  // Whole documents go to one split, drawn from (seed, doc_id).
  std::vector<std::size_t> wt, rw, rs, ew, es;
  LabelVector wt_labels, eval_labels;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (!docs[d].labels || docs[d].labels_are_loss_mask) {
      throw PreconditionError("document '" + docs[d].doc_id + "' carries no forget labels");
    }
    Rng rng = substream(derive_seed(o.seed, "weak2strong-split"), docs[d].doc_id);
    const double u = uniform01(rng);
    const double v = uniform01(rng);
    for (std::size_t t = 0; t < docs[d].tokens.size(); ++t) {
      const auto label = (*docs[d].labels)[t];
      if (u < o.eval_fraction) {
        ew.push_back(weak_rows[d][t]);
        es.push_back(strong_rows[d][t]);
        eval_labels.push_back(label);
      } else if (v < 0.5) {
        wt.push_back(weak_rows[d][t]);
        wt_labels.push_back(label);
      } else {
        rw.push_back(weak_rows[d][t]);
        rs.push_back(strong_rows[d][t]);
      }
    }
  }
  WeakToStrongInputs in{weak.select(wt), wt_labels,        weak.select(rw), strong.select(rs),
                        weak.select(ew), strong.select(es), eval_labels,     {}};
  in.options.lambda = o.lambda;
  in.options.max_iterations = o.max_iter;
  const auto result = weak_to_strong(in);

  auto report_json = [](const EvalReport& r) {
    json j;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f1"] = r.f1;
    j["auroc"] = r.auroc;
    j["tp"] = r.tp;
    j["fp"] = r.fp;
    j["tn"] = r.tn;
    j["fn"] = r.fn;
    return j;
  };
  json j;
  j["weak"] = report_json(result.weak_report);
  j["strong"] = report_json(result.strong_report);
  j["weak_probe"] = json::parse(result.weak.to_json());
  j["strong_probe"] = json::parse(result.strong.to_json());
  j["rows"] = {{"weak_train", wt.size()}, {"relabel", rw.size()}, {"eval", ew.size()}};
  j["pseudo_positive"] = result.pseudo_positive;
  write_file(o.output, j.dump(1) + "\n");
  m.outputs.push_back(o.output);
}

// ---------------------------------------------------------------- plumbing

void configure_logging() {
  auto logger = spdlog::get("tokensieve");
  if (!logger) logger = spdlog::stderr_color_st("tokensieve");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("tokensieve [%l] %v");
  const char* env = std::getenv("TOKENSIEVE_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
}

// Turns `--config file.json` into extra command-line flags for every key the
// user did not pass explicitly.
std::vector<std::string> merge_config(const std::vector<std::string>& args) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;
  if (!fs::is_regular_file(config_path)) throw IoError("config file not found: " + config_path);
  auto cfg = nlohmann::json::parse(read_file(config_path), nullptr, false);
  if (cfg.is_discarded() || !cfg.is_object()) throw CLI::ValidationError("--config", "config is not a JSON object");

  auto given = [&](const std::string& flag) {
    return std::any_of(args.begin(), args.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
  };
  std::vector<std::string> out = args;
  for (const auto& [key, value] : cfg.items()) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (flag == "--config" || given(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back(flag);
    } else if (value.is_string()) {
      out.push_back(flag);
      out.push_back(value.get<std::string>());
    } else if (value.is_number()) {
      out.push_back(flag);
      out.push_back(value.dump());
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) joined += (joined.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
      out.push_back(flag);
      out.push_back(joined);
    } else {
      throw CLI::ValidationError(flag, "unsupported config value");
    }
  }
  return out;
}

std::string file_digest(const std::string& path) {
  return hex64(fnv1a64(read_file(path)));
}

void write_manifest(const CLI::App& sub, const Options& o, const Manifest& m) {
  json config = json::object();
  std::vector<std::pair<std::string, std::string>> items;
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_name();
    if (kNonConfig.count(name) || name.empty()) continue;
    std::string value;
    if (opt->count() > 0) {
      for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
    } else {
      value = opt->get_default_str();
    }
    items.emplace_back(name, value);
  }
  std::sort(items.begin(), items.end());
  for (const auto& [k, v] : items) config[k] = v;

  json j;
  j["tool"] = "tokensieve";
  j["version"] = kToolVersion;
  j["subcommand"] = m.subcommand;
  j["config"] = config;
  j["config_hash"] = hex64(fnv1a64(config.dump()));
  j["inputs"] = json::array();
  for (const auto& [flag, path] : m.inputs) {
    j["inputs"].push_back({{"flag", flag}, {"path", path}, {"fnv1a64", file_digest(path)}});
  }
  j["outputs"] = json::array();
  for (const auto& path : m.outputs) {
    j["outputs"].push_back({{"file", fs::path(path).filename().string()}, {"fnv1a64", file_digest(path)}});
  }
  j["notes"] = m.notes;
  const fs::path target = fs::is_directory(o.output) ? fs::path(o.output) / "manifest.json"
                                                     : fs::path(o.output + ".manifest.json");
  write_file(target, j.dump(1) + "\n");
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--input", o.input, "Input file");
  sub->add_option("--output", o.output, "Output file or directory");
  sub->add_option("--config", o.config, "JSON file whose keys mirror these flags");
  sub->add_option("--seed", o.seed, "Seed for all randomness")->default_val(0);
  sub->add_option("--jobs", o.jobs, "Worker threads for document-parallel stages")->default_val(1)->check(CLI::Range(1u, 1024u));
}

}  // namespace

int run(const std::vector<std::string>& raw_args) {
  configure_logging();
  Options o;
  CLI::App app{"tokensieve: token-level pretraining data filtering toolkit", "tokensieve"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  struct Stage {
    CLI::App* app;
    void (*fn)(Options&, Manifest&);
  };
  std::vector<Stage> stages;
  auto stage = [&](const char* name, const char* desc, void (*fn)(Options&, Manifest&)) {
    CLI::App* sub = app.add_subcommand(name, desc);
    add_common(sub, o);
    stages.push_back({sub, fn});
    return sub;
  };

  auto* tokenize = stage("tokenize", "Encode a raw JSONL corpus into a shard", do_tokenize);
  tokenize->add_option("--merges", o.merges, "Merge table JSON");

  auto* label = stage("label", "Attach forget labels from SAE activations or coarse unit labels", do_label);
  label->add_option("--activations", o.activations, "Sparse activation JSONL");
  label->add_option("--latents", o.latents, "Latent set JSON");
  label->add_option("--k-sd", o.k_sd, "SD multiplier of the seed rule")->default_val(4.0);
  label->add_option("--m-min", o.m_min, "Strong latents needed to seed a token")->default_val(2);
  label->add_option("--expansion-threshold", o.expansion_threshold, "Activation that counts as positive")->default_val(0.0);
  label->add_option("--coarse", o.coarse, "Document/sentence unit labels JSONL (replaces activations)");

  auto* remap = stage("remap", "Transfer labels onto another tokenization of the same text", do_remap);
  remap->add_option("--target", o.target, "Shard with the target tokenization");

  auto* train = stage("train-probe", "Fit a logistic probe on frozen features", do_train_probe);
  train->add_option("--features", o.features, "Feature file");
  train->add_option("--doc-labels", o.doc_labels, "Document labels JSONL for document-level features");
  train->add_option("--lambda", o.lambda, "L2 strength")->default_val(1e-4);
  train->add_option("--max-iter", o.max_iter, "Iteration cap")->default_val(1000);

  auto* calibrate = stage("calibrate", "Set a probe threshold by F1 or by filtered fraction", do_calibrate);
  calibrate->add_option("--probe", o.probe, "Probe JSON");
  calibrate->add_option("--fraction", o.fraction, "Filter this fraction of rows instead of maximising F1");
  calibrate->add_option("--doc-scores", o.doc_scores, "Document scores JSONL (document-level calibration)");
  calibrate->add_option("--doc-labels", o.doc_labels, "Document labels JSONL");

  auto* score_cmd = stage("score", "Attach probe scores to a shard", do_score);
  score_cmd->add_option("--probe", o.probe, "Probe JSON");
  score_cmd->add_option("--features", o.features, "Feature file");
  score_cmd->add_option("--aggregate", o.aggregate, "Document aggregation: max | mean | fraction")->default_val("max");
  score_cmd->add_option("--aggregate-threshold", o.aggregate_threshold, "Threshold for fraction aggregation")->default_val(0.5);
  score_cmd->add_option("--doc-scores-out", o.doc_scores, "Also write aggregated document scores here");

  auto* filter = stage("filter", "Drop documents, mask tokens, or replace them with the hidden token", do_filter);
  filter->add_option("--mode", o.mode, "document | mask | removal")->default_val("mask");
  filter->add_option("--threshold", o.threshold, "Filter where score >= threshold");
  filter->add_option("--fraction", o.fraction, "Calibrate the threshold to filter this fraction");
  filter->add_option("--hidden-id", o.hidden_id, "Hidden token id (else read from --merges)");
  filter->add_option("--merges", o.merges, "Merge table holding the hidden token");
  filter->add_option("--doc-scores", o.doc_scores, "Document scores JSONL for document mode");
  filter->add_option("--aggregate", o.aggregate, "Document aggregation when no --doc-scores")->default_val("max");
  filter->add_option("--aggregate-threshold", o.aggregate_threshold, "Threshold for fraction aggregation")->default_val(0.5);
  filter->add_option("--truth", o.truth, "Ground-truth labelled shard for the audit");
  filter->add_option("--onset-step", o.onset_step, "Training step at which filtering starts (annotation)");
  filter->add_option("--report", o.report, "Report path (default <output>.report.json)");

  auto* noise = stage("noise", "Flip labels at a fixed rate", do_noise);
  noise->add_option("--flip-rate", o.flip_rate, "Per-label flip probability")->default_val(0.0)->check(CLI::Range(0.0, 1.0));
  noise->add_option("--accuracy", o.accuracy, "Classifier accuracy for the expected error rate")->check(CLI::Range(0.0, 1.0));

  auto* stats = stage("stats", "Per-document forget-fraction histogram or latent statistics", do_stats);
  stats->add_option("--what", o.what, "histogram | latents")->default_val("histogram");
  stats->add_option("--edges", o.edges, "Comma-separated bucket edges");
  stats->add_option("--latent-ids", o.latent_ids, "Comma-separated latent ids (latents mode)");
  stats->add_option("--total-tokens", o.total_tokens, "Count unlisted positions as zero activations");

  auto* scaling = stage("scaling", "Loss-matched compute slowdown or frontier AUC", do_scaling);
  scaling->add_option("--baseline", o.baseline, "Baseline series label")->default_val("baseline");
  scaling->add_option("--frontier", o.frontier, "Frontier CSV (series,retain_loss,forget_loss)");

  auto* synth = stage("synth", "Generate a planted-ground-truth corpus and companions", do_synth);
  synth->add_option("--docs", o.synth.docs)->default_val(o.synth.docs);
  synth->add_option("--retain-vocab", o.synth.retain_vocab)->default_val(o.synth.retain_vocab);
  synth->add_option("--forget-vocab", o.synth.forget_vocab)->default_val(o.synth.forget_vocab);
  synth->add_option("--min-len", o.synth.min_len)->default_val(o.synth.min_len);
  synth->add_option("--max-len", o.synth.max_len)->default_val(o.synth.max_len);
  synth->add_option("--forget-rate", o.synth.forget_rate, "Nominal forget-token fraction")->default_val(o.synth.forget_rate);
  synth->add_option("--span-min", o.synth.span_min)->default_val(o.synth.span_min);
  synth->add_option("--span-max", o.synth.span_max)->default_val(o.synth.span_max);
  synth->add_option("--noise-sd", o.synth.activation_noise_sd, "Activation noise SD")->default_val(0.0);
  synth->add_option("--latents", o.synth.latent_count, "Forget latent count")->default_val(o.synth.latent_count);
  synth->add_option("--seed-probability", o.synth.seed_probability)->default_val(o.synth.seed_probability);
  synth->add_option("--feature-dim", o.synth.feature_dim)->default_val(o.synth.feature_dim);
  synth->add_option("--margin", o.synth.margin)->default_val(o.synth.margin);
  synth->add_option("--scaling-alpha", o.scaling_alpha)->default_val(0.1);
  synth->add_option("--scaling-scale", o.scaling_scale)->default_val(1.0);
  synth->add_option("--scaling-noise", o.scaling_noise)->default_val(0.0);
  synth->add_option("--scaling-shift", o.scaling_shift, "log10 loss offset of the filtered series")->default_val(0.1);

  auto* w2s = stage("weak2strong", "Train a strong probe on a weak probe's pseudo-labels", do_weak2strong);
  w2s->add_option("--weak-features", o.weak_features, "Weak feature file");
  w2s->add_option("--strong-features", o.strong_features, "Strong feature file");
  w2s->add_option("--eval-fraction", o.eval_fraction, "Share of documents held out")->default_val(0.2);
  w2s->add_option("--lambda", o.lambda, "L2 strength")->default_val(1e-4);
  w2s->add_option("--max-iter", o.max_iter, "Iteration cap")->default_val(1000);

  std::string stage_name = "cli";
  try {
    const auto args = merge_config(raw_args);
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? 0 : 2;
    }
    for (const auto& s : stages) {
      if (!s.app->parsed()) continue;
      stage_name = s.app->get_name();
      Manifest manifest;
      manifest.subcommand = stage_name;
      s.fn(o, manifest);
      write_manifest(*s.app, o, manifest);
    }
    return 0;
  } catch (const IoError& e) {
    std::cerr << "tokensieve " << stage_name << ": error: " << e.what() << "\n";
    return 2;
  } catch (const ShardError& e) {
    std::cerr << "tokensieve " << stage_name << ": error: " << e.what() << "\n";
    return e.kind() == ShardError::Kind::kIo ? 2 : 1;
  } catch (const CLI::Error& e) {
    std::cerr << "tokensieve " << stage_name << ": error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "tokensieve " << stage_name << ": error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace tokensieve::cli
