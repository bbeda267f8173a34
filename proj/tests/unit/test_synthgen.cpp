#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "tokensieve/error.hpp"
#include "tokensieve/labeler.hpp"
#include "tokensieve/metrics.hpp"
#include "tokensieve/probe.hpp"
#include "tokensieve/scaling.hpp"
#include "tokensieve/synthgen.hpp"
#include "tokensieve/tokenizer.hpp"

using namespace tokensieve;

namespace {

SynthConfig small(std::uint64_t seed = 1) {
  SynthConfig c;
  c.seed = seed;
  c.docs = 200;
  c.retain_vocab = 60;
  c.forget_vocab = 20;
  return c;
}

std::pair<std::uint64_t, std::uint64_t> count_forget(const Corpus& docs) {
  std::uint64_t f = 0, n = 0;
  for (const auto& d : docs) {
    for (auto l : *d.labels) f += l;
    n += d.labels->size();
  }
  return {f, n};
}

}  // namespace

TEST_CASE("config validation and JSON") {
  auto c = small();
  c.min_len = 0;
  CHECK_THROWS_AS(c.validate(), DomainError);
  c = small();
  c.span_max = 1;
  CHECK_THROWS(c.validate());
  c = small();
  c.forget_rate = 1.5;
  CHECK_THROWS(c.validate());
  c = small(42);
  const auto back = SynthConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK_THROWS(SynthConfig::from_json(R"({"sede": 1})"));
}

TEST_CASE("vocabulary encodes each word to one token") {
  const auto v = synthetic_vocabulary(small());
  for (auto id : v.retain_ids) CHECK(encode(v.table.bytes_of(id), v.table).tokens == std::vector<TokenId>{id});
  for (auto id : v.forget_ids) CHECK(encode(v.table.bytes_of(id), v.table).tokens == std::vector<TokenId>{id});
  CHECK(v.table.hidden_id() == v.table.vocab_size() - 1);
}

TEST_CASE("gen_corpus: tokenizing the text reproduces the planted tokens") {
  const auto c = small();
  const auto v = synthetic_vocabulary(c);
  const auto s = gen_corpus(c, v);
  REQUIRE(s.docs.size() == c.docs);
  for (std::size_t i = 0; i < s.docs.size(); ++i) {
    const auto enc = encode(s.raw[i].text, v.table, s.raw[i].doc_id);
    CHECK(enc.tokens == s.docs[i].tokens);
    CHECK(enc.spans == s.docs[i].spans);
    CHECK(s.docs[i].tokens.size() >= c.min_len);
    CHECK(s.docs[i].tokens.size() <= c.max_len);
  }
}

TEST_CASE("gen_corpus: degenerate rates") {
  auto c = small();
  c.forget_rate = 0.0;
  CHECK(count_forget(gen_corpus(c).docs).first == 0);
  c.forget_rate = 1.0;
  c.min_len = c.max_len = c.span_min = c.span_max = 12;
  const auto [f, n] = count_forget(gen_corpus(c).docs);
  CHECK(f == n);
}

TEST_CASE("gen_corpus: deterministic per seed") {
  CHECK(gen_corpus(small(3)).docs == gen_corpus(small(3)).docs);
  CHECK(gen_corpus(small(3)).docs != gen_corpus(small(4)).docs);
}

TEST_CASE("expected_forget_fraction matches a brute-force recursion on tiny configs") {
  // Enumerate every outcome of the generator's choice sequence directly.
  SynthConfig c = small();
  c.min_len = 1;
  c.max_len = 5;
  c.span_min = 1;
  c.span_max = 3;
  c.forget_rate = 0.3;
  const double q = c.span_start_probability();
  std::function<double(int)> ef = [&](int remaining) -> double {
    if (remaining <= 0) return 0.0;
    double v = (1 - q) * ef(remaining - 1);
    for (int len = 1; len <= 3; ++len) {
      const int used = std::min(len, remaining);
      v += q / 3.0 * (used + ef(remaining - used));
    }
    return v;
  };
  double forget = 0.0, total = 0.0;
  for (int n = 1; n <= 5; ++n) {
    forget += ef(n);
    total += n;
  }
  CHECK(expected_forget_fraction(c) == doctest::Approx(forget / total).epsilon(1e-14));
}

TEST_CASE("activations: zero latents label nothing") {
  auto c = small();
  const auto s = gen_corpus(c);
  const auto a = gen_activations(s.docs, 0, c);
  CHECK(a.records.empty());
  const auto by_doc = group_by_document(a.records);
  for (const auto& d : s.docs) {
    const auto l = label_document({}, d.tokens.size(), a.latents, c.labeling);
    CHECK(std::count(l.begin(), l.end(), 1) == 0);
  }
}

TEST_CASE("activations: noise degrades recovery") {
  auto recall_at = [](double sd) {
    double total = 0.0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      auto c = small(seed);
      c.activation_noise_sd = sd;
      const auto s = gen_corpus(c);
      const auto a = gen_activations(s.docs, c.latent_count, c);
      const auto by_doc = group_by_document(a.records);
      std::uint64_t hit = 0, pos = 0;
      for (const auto& d : s.docs) {
        auto it = by_doc.find(d.doc_id);
        const auto l = label_document(it == by_doc.end() ? DocActivations{} : it->second, d.tokens.size(), a.latents,
                                      c.labeling);
        for (std::size_t t = 0; t < l.size(); ++t) {
          pos += (*d.labels)[t];
          hit += (*d.labels)[t] && l[t];
        }
      }
      total += static_cast<double>(hit) / static_cast<double>(pos);
    }
    return total / 3.0;
  };
  const double r0 = recall_at(0.0), r1 = recall_at(0.5), r2 = recall_at(1.5);
  CHECK(r0 == 1.0);
  CHECK(r1 <= r0);
  CHECK(r2 <= r1);
  CHECK(r2 < 1.0);
}

TEST_CASE("features: null margin and separable margin") {
  std::mt19937_64 rng(2);
  const std::size_t n = 100000;
  std::vector<FeatureKey> keys;
  LabelVector y;
  for (std::size_t i = 0; i < n; ++i) {
    keys.push_back({"r" + std::to_string(i), std::nullopt});
    y.push_back(rng() % 2);
  }
  const auto null = gen_features(keys, y, 4, 0.0, 5);
  const auto p0 = train_probe(null, y).probe;
  CHECK(std::abs(auroc(score(p0, null), y) - 0.5) < 0.01);

  std::vector<FeatureKey> k200(keys.begin(), keys.begin() + 200);
  LabelVector y200(y.begin(), y.begin() + 200);
  const auto sep = gen_features(k200, y200, 4, 10.0, 5);
  const auto p1 = train_probe(sep, y200).probe;
  CHECK(evaluate(score(p1, sep), y200, 0.5).f1 == 1.0);

  const auto one = gen_features(k200, y200, 1, 3.0, 5);
  double mean_pos = 0, mean_neg = 0;
  for (std::size_t i = 0; i < 200; ++i) (y200[i] ? mean_pos : mean_neg) += one.row(i)[0];
  const auto p2 = train_probe(one, y200).probe;
  CHECK((p2.weights[0] > 0) == (mean_pos / 100 > mean_neg / 100));

  CHECK(gen_features(k200, y200, 4, 2.0, 9) == gen_features(k200, y200, 4, 2.0, 9));
  CHECK_THROWS(gen_features(k200, y200, 0, 2.0, 9));
}

TEST_CASE("scaling series") {
  const std::vector<double> budgets = {1e15, 1e16, 1e17};
  const auto s = gen_scaling_series("b", 1.0, 0.1, budgets, 0.0, 1);
  for (const auto& p : s.points) CHECK(p.loss == std::pow(p.compute, -0.1));
  const auto shifted = gen_scaling_series("f", std::pow(10.0, 0.1), 0.1, budgets, 0.0, 1);
  for (const auto& r : slowdown(s, shifted).rows) CHECK(r.ratio == doctest::Approx(10.0).epsilon(1e-12));
  CHECK_THROWS(gen_scaling_series("b", -1.0, 0.1, budgets, 0.0, 1));
  CHECK_THROWS(gen_scaling_series("b", 1.0, 0.1, {2.0, 1.0}, 0.0, 1));
}
