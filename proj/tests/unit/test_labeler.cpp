#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "helpers.hpp"
#include "tokensieve/error.hpp"
#include "tokensieve/labeler.hpp"

using namespace tokensieve;

namespace {

LatentSet unit_latents(std::uint32_t count, double mean = 0.0, double sd = 1.0) {
  LatentSet s;
  for (std::uint32_t l = 0; l < count; ++l) s.latents[l] = {mean, sd, std::nullopt, false};
  return s;
}

// Iterate the one-step expansion over all tokens until nothing changes.
LabelVector brute_force_expand(LabelVector marks, const DocActivations& acts, const LatentSet& latents, double thr) {
  std::vector<bool> positive(marks.size(), false);
  for (const auto& a : acts) {
    if (latents.contains(a.latent) && a.activation > thr) positive[a.token] = true;
  }
  bool changed = true;
  while (changed) {
    changed = false;
    const auto prev = marks;
    for (std::size_t t = 0; t < marks.size(); ++t) {
      if (prev[t] || !positive[t]) continue;
      const bool left = t > 0 && prev[t - 1];
      const bool right = t + 1 < marks.size() && prev[t + 1];
      if (left || right) {
        marks[t] = 1;
        changed = true;
      }
    }
  }
  return marks;
}

}  // namespace

TEST_CASE("latent_stats: constant records") {
  std::vector<ActivationRecord> r = {{"d", 0, 7, 1.0}, {"d", 1, 7, 1.0}, {"d", 2, 7, 1.0}};
  const std::vector<std::uint32_t> ids = {7};
  const auto s = latent_stats(r, ids);
  CHECK(s.latents.at(7).mean == 1.0);
  CHECK(s.latents.at(7).sd == 0.0);
}

TEST_CASE("latent_stats: population SD") {
  std::vector<ActivationRecord> r = {{"d", 0, 3, 0.0}, {"d", 1, 3, 2.0}};
  const std::vector<std::uint32_t> ids = {3};
  const auto s = latent_stats(r, ids);
  CHECK(s.latents.at(3).mean == 1.0);
  CHECK(s.latents.at(3).sd == 1.0);
}

TEST_CASE("latent_stats: absent latent is flagged") {
  std::vector<ActivationRecord> r = {{"d", 0, 3, 1.0}};
  const std::vector<std::uint32_t> ids = {9};
  const auto s = latent_stats(r, ids);
  CHECK(s.latents.at(9).absent);
  CHECK(s.latents.at(9).mean == 0.0);
  CHECK(s.latents.at(9).sd == 0.0);
}

TEST_CASE("latent_stats: unlisted positions as zeros") {
  std::vector<ActivationRecord> r = {{"d", 0, 1, 4.0}};
  const std::vector<std::uint32_t> ids = {1};
  const auto s = latent_stats(r, ids, 4);
  CHECK(s.latents.at(1).mean == 1.0);
  CHECK(s.latents.at(1).sd == doctest::Approx(std::sqrt(3.0)));
  CHECK_FALSE(s.listed_records_only);
}

TEST_CASE("latent_stats: conflicting duplicates") {
  std::vector<ActivationRecord> r = {{"d", 0, 1, 4.0}, {"d", 0, 1, 5.0}};
  const std::vector<std::uint32_t> ids = {1};
  CHECK_THROWS_AS(latent_stats(r, ids), FormatError);
  std::vector<ActivationRecord> same = {{"d", 0, 1, 4.0}, {"d", 0, 1, 4.0}};
  CHECK(latent_stats(same, ids).latents.at(1).mean == 4.0);
}

TEST_CASE("seed_labels: rule evaluation") {
  const auto latents = unit_latents(4);
  const LabelingParams p;
  SUBCASE("all zero") {
    DocActivations acts = {{0, 0, 0.0}, {1, 1, 0.0}};
    CHECK(seed_labels(acts, 3, latents, p) == LabelVector{0, 0, 0});
  }
  SUBCASE("two strong latents") {
    DocActivations acts = {{1, 0, 5.0}, {1, 2, 5.0}};
    CHECK(seed_labels(acts, 3, latents, p) == LabelVector{0, 1, 0});
  }
  SUBCASE("one strong latent") {
    DocActivations acts = {{1, 0, 5.0}};
    CHECK(seed_labels(acts, 3, latents, p) == LabelVector{0, 0, 0});
  }
  SUBCASE("exactly at the boundary counts") {
    DocActivations acts = {{0, 0, 4.0}, {0, 1, 4.0}};
    CHECK(seed_labels(acts, 1, latents, p) == LabelVector{1});
  }
  SUBCASE("latents outside the set are ignored") {
    DocActivations acts = {{0, 0, 5.0}, {0, 99, 50.0}};
    CHECK(seed_labels(acts, 1, latents, p) == LabelVector{0});
  }
}

TEST_CASE("seed_labels: out-of-range token") {
  DocActivations acts = {{5, 0, 5.0}};
  CHECK_THROWS(seed_labels(acts, 3, unit_latents(1), LabelingParams{}));
}

TEST_CASE("labeling params validation") {
  CHECK_THROWS_AS((LabelingParams{-1.0, 2, 0.0}.validate()), DomainError);
  CHECK_THROWS_AS((LabelingParams{4.0, 0, 0.0}.validate()), DomainError);
}

TEST_CASE("expand_labels: worked examples") {
  const auto latents = unit_latents(2);
  const LabelingParams p;
  SUBCASE("empty seed stays empty") {
    DocActivations acts = {{0, 0, 1.0}, {1, 0, 1.0}};
    CHECK(expand_labels(LabelVector(3, 0), acts, latents, p) == LabelVector(3, 0));
  }
  SUBCASE("chain of positives joins") {
    DocActivations acts = {{3, 0, 0.5}, {4, 1, 0.5}};
    for (auto order : {SweepOrder::kForward, SweepOrder::kBackward, SweepOrder::kWorklist}) {
      CHECK(expand_labels({0, 0, 1, 0, 0}, acts, latents, p, order) == LabelVector{0, 0, 1, 1, 1});
    }
  }
  SUBCASE("no positives") {
    CHECK(expand_labels({0, 0, 1, 0, 0}, {}, latents, p) == LabelVector{0, 0, 1, 0, 0});
  }
  SUBCASE("threshold is strict") {
    DocActivations acts = {{1, 0, 0.0}};
    CHECK(expand_labels({1, 0}, acts, latents, p) == LabelVector{1, 0});
  }
}

TEST_CASE("expand_labels: length mismatch") {
  DocActivations acts = {{4, 0, 1.0}};
  CHECK_THROWS(expand_labels(LabelVector(3, 0), acts, unit_latents(1), LabelingParams{}));
}

TEST_CASE("labeling properties on random instances") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    const std::uint32_t k = 1 + rng() % 6;
    const auto latents = unit_latents(k);
    DocActivations acts;
    for (std::size_t t = 0; t < n; ++t) {
      for (std::uint32_t l = 0; l < k; ++l) {
        if (rng() % 4 == 0) acts.push_back({static_cast<std::uint32_t>(t), l, static_cast<double>(rng() % 70) / 10.0});
      }
    }
    LabelingParams p;
    p.m_min = 1 + rng() % 2;
    const auto seed = seed_labels(acts, n, latents, p);
    const auto fixed = expand_labels(seed, acts, latents, p);
    // Superset of the seed.
    for (std::size_t t = 0; t < n; ++t) CHECK(fixed[t] >= seed[t]);
    // Closed under one more step.
    CHECK(expand_labels(fixed, acts, latents, p) == fixed);
    CHECK(fixed == brute_force_expand(seed, acts, latents, p.expansion_threshold));
    // Lowering k_sd or m_min never shrinks the seed.
    LabelingParams looser = p;
    looser.k_sd = p.k_sd - 1.0;
    const auto wider = seed_labels(acts, n, latents, looser);
    for (std::size_t t = 0; t < n; ++t) CHECK(wider[t] >= seed[t]);
    looser = p;
    looser.m_min = 1;
    const auto wider2 = seed_labels(acts, n, latents, looser);
    for (std::size_t t = 0; t < n; ++t) CHECK(wider2[t] >= seed[t]);
  }
}

TEST_CASE("coarse propagation") {
  CHECK(propagate_document_label(1, 4) == LabelVector{1, 1, 1, 1});
  CHECK(propagate_document_label(0, 0).empty());
  const std::vector<CoarseUnit> units = {{{0, 10}, 0}, {{10, 30}, 1}};
  CHECK(propagate_sentence_labels({{0, 8}, {8, 12}, {12, 30}}, units) == LabelVector{0, 0, 1});
  CHECK(propagate_sentence_labels({}, units).empty());
  SUBCASE("units must tile from zero") {
    const std::vector<CoarseUnit> gap = {{{0, 10}, 0}, {{11, 30}, 1}};
    CHECK_THROWS(propagate_sentence_labels({{0, 8}}, gap));
    const std::vector<CoarseUnit> late = {{{2, 10}, 0}};
    CHECK_THROWS(propagate_sentence_labels({{2, 8}}, late));
  }
  SUBCASE("token starting past the units") {
    CHECK_THROWS(propagate_sentence_labels({{0, 8}, {30, 31}}, units));
  }
}

TEST_CASE("perturb_labels") {
  LabelVector labels(1000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 3 == 0;
  CHECK(perturb_labels(labels, {0.0, 1}, "d") == labels);
  const auto all = perturb_labels(labels, {1.0, 1}, "d");
  for (std::size_t i = 0; i < labels.size(); ++i) CHECK(all[i] == 1 - labels[i]);
  CHECK(perturb_labels(labels, {0.3, 7}, "d") == perturb_labels(labels, {0.3, 7}, "d"));
  CHECK(perturb_labels(labels, {0.3, 7}, "d") != perturb_labels(labels, {0.3, 8}, "d"));
  CHECK(perturb_labels(labels, {0.3, 7}, "d") != perturb_labels(labels, {0.3, 7}, "e"));
  CHECK_THROWS_AS(perturb_labels(labels, {1.5, 7}, "d"), DomainError);
}

TEST_CASE("perturb_labels: flip fraction at 0.25") {
  const std::size_t n = 1000000;
  const auto out = perturb_labels(LabelVector(n, 0), {0.25, 99}, "big");
  const double frac = static_cast<double>(std::count(out.begin(), out.end(), 1)) / static_cast<double>(n);
  CHECK(std::abs(frac - 0.25) <= 0.0013);
}

TEST_CASE("expected_error_rate") {
  CHECK(expected_error_rate(0.89, 0.0) == 1.0 - 0.89);
  CHECK(std::abs(expected_error_rate(0.89, 0.0) - 0.11) < 1e-15);
  CHECK(expected_error_rate(0.89, 0.1) == doctest::Approx(0.188).epsilon(1e-14));
  for (double a : {0.0, 0.13, 0.5, 0.89, 1.0}) {
    CHECK(expected_error_rate(a, 0.5) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(expected_error_rate(a, 0.0) == 1.0 - a);
    CHECK(expected_error_rate(a, 1.0) == a);
  }
  CHECK_THROWS_AS(expected_error_rate(1.1, 0.0), DomainError);
  CHECK_THROWS_AS(expected_error_rate(0.5, -0.1), DomainError);
}

TEST_CASE("activation and latent file round trip") {
  testutil::TempDir dir;
  std::vector<ActivationRecord> r = {{"a", 0, 1, 0.5}, {"b", 3, 2, 7.25}};
  write_activations(r, dir / "acts.jsonl");
  const auto back = read_activations(dir / "acts.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[1].doc_id == "b");
  CHECK(back[1].token_index == 3);
  CHECK(back[1].activation == 7.25);

  LatentSet s = unit_latents(3, 0.5, 2.0);
  s.latents[1].desc = "anatomy";
  s.save(dir / "lat.json");
  const auto l = LatentSet::load(dir / "lat.json");
  CHECK(l.latents.size() == 3);
  CHECK(l.latents.at(1).desc == std::optional<std::string>("anatomy"));
  CHECK(l.latents.at(2).sd == 2.0);

  std::ofstream(dir / "neg.json") << R"({"latents": {"1": {"mean": 0, "sd": -1}}})";
  CHECK_THROWS(LatentSet::load(dir / "neg.json"));
  std::ofstream(dir / "bad.jsonl") << R"({"doc_id":"a","token":-1,"latent":0,"act":1})" << "\n";
  CHECK_THROWS(read_activations(dir / "bad.jsonl"));
}
