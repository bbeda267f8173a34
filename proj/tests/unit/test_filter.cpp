#include <doctest.h>

#include <algorithm>
#include <random>

#include "tokensieve/error.hpp"
#include "tokensieve/filter.hpp"
#include "tokensieve/shard.hpp"

using namespace tokensieve;

namespace {

TokenizedDocument scored(std::string id, std::vector<TokenId> ids, std::vector<float> scores) {
  TokenizedDocument d;
  d.doc_id = std::move(id);
  d.tokens = std::move(ids);
  d.scores = std::move(scores);
  return d;
}

Corpus random_corpus(std::uint64_t seed, std::size_t docs) {
  std::mt19937_64 rng(seed);
  Corpus c;
  for (std::size_t i = 0; i < docs; ++i) {
    TokenizedDocument d;
    d.doc_id = "d" + std::to_string(i);
    const std::size_t n = rng() % 30;
    d.scores.emplace();
    d.labels.emplace();
    for (std::size_t t = 0; t < n; ++t) {
      d.tokens.push_back(static_cast<TokenId>(rng() % 1000));
      d.scores->push_back(static_cast<float>((rng() % 1000) / 1000.0));
      d.labels->push_back(rng() % 4 == 0);
    }
    c.push_back(d);
  }
  return c;
}

}  // namespace

TEST_CASE("filter mode names") {
  CHECK(parse_filter_mode("document") == FilterMode::kDocument);
  CHECK(parse_filter_mode("mask") == FilterMode::kLossMask);
  CHECK(parse_filter_mode("loss-mask") == FilterMode::kLossMask);
  CHECK(parse_filter_mode("removal") == FilterMode::kRemoval);
  CHECK_THROWS(parse_filter_mode("drop"));
  CHECK(to_string(FilterMode::kRemoval) == "removal");
}

TEST_CASE("filter config validation") {
  FilterConfig c;
  c.threshold = -0.1;
  CHECK_THROWS(c.validate());
  c.threshold = 0.5;
  c.mode = FilterMode::kRemoval;
  CHECK_THROWS(c.validate());
  c.hidden_id = 9;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("filter_documents") {
  const Corpus docs = {scored("a", {1}, {0.9f}), scored("b", {2}, {0.1f})};
  const std::vector<double> s = {0.9, 0.1};
  const auto r = filter_documents(docs, s, 0.5);
  REQUIRE(r.retained.size() == 1);
  CHECK(r.retained[0] == docs[1]);
  CHECK(r.dropped == std::vector<std::uint8_t>{1, 0});
  CHECK(filter_documents(docs, s, 1.0 + 1e-9).retained.size() == 2);
  CHECK_THROWS(filter_documents(docs, std::vector<double>{0.1}, 0.5));
}

TEST_CASE("filter_documents: median threshold") {
  std::mt19937_64 rng(1);
  Corpus docs(1000);
  std::vector<double> s(1000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    docs[i].doc_id = std::to_string(i);
    s[i] = static_cast<double>(rng() % 100000) / 100000.0;
  }
  auto sorted = s;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[500];
  const auto r = filter_documents(docs, s, median);
  const auto expect = std::count_if(s.begin(), s.end(), [&](double v) { return v >= median; });
  CHECK(docs.size() - r.retained.size() == static_cast<std::size_t>(expect));
}

TEST_CASE("mask_tokens and remove_tokens: worked examples") {
  const Corpus docs = {scored("a", {5, 6, 7}, {0.1f, 0.9f, 0.1f})};
  const auto m = mask_tokens(docs, 0.5);
  CHECK(m[0].tokens == std::vector<TokenId>{5, 6, 7});
  CHECK(m[0].loss_mask == LabelVector{1, 0, 1});
  const auto r = remove_tokens(docs, 0.5, 99);
  CHECK(r[0].tokens == std::vector<TokenId>{5, 99, 7});
  CHECK(r[0].loss_mask == LabelVector{1, 0, 1});
  CHECK(r[0].substituted == 1);

  const Corpus zeros = {scored("z", {1, 2}, {0.0f, 0.0f})};
  CHECK(mask_tokens(zeros, 0.5)[0].loss_mask == LabelVector{1, 1});

  const auto all = remove_tokens(docs, 0.0, 99);
  CHECK(all[0].tokens == std::vector<TokenId>{99, 99, 99});
  CHECK(all[0].loss_mask == LabelVector{0, 0, 0});
  CHECK(all[0].fully_masked());
}

TEST_CASE("remove_tokens: hidden id collision and missing scores") {
  const Corpus docs = {scored("a", {5, 6}, {0.1f, 0.9f})};
  CHECK_THROWS(remove_tokens(docs, 0.5, 5));
  TokenizedDocument d;
  d.doc_id = "u";
  d.tokens = {1};
  CHECK_THROWS_AS(mask_tokens({d}, 0.5), PreconditionError);
}

TEST_CASE("filter properties on random corpora") {
  const auto docs = random_corpus(12, 200);
  const double tau = 0.7;
  const auto masked = mask_tokens(docs, tau);
  const auto removed = remove_tokens(docs, tau, 5000);
  std::size_t zero_bits = 0, expected = 0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    CHECK(masked[d].loss_mask == removed[d].loss_mask);
    CHECK(masked[d].tokens == docs[d].tokens);
    for (std::size_t t = 0; t < docs[d].tokens.size(); ++t) {
      const bool hit = (*docs[d].scores)[t] >= tau;
      expected += hit;
      zero_bits += masked[d].loss_mask[t] == 0;
      if (hit) {
        CHECK(removed[d].tokens[t] == 5000);
      } else {
        CHECK(removed[d].tokens[t] == docs[d].tokens[t]);
      }
    }
  }
  CHECK(zero_bits == expected);

  // Lowering the threshold never unmasks anything.
  const auto lower = mask_tokens(docs, 0.4);
  for (std::size_t d = 0; d < docs.size(); ++d) {
    for (std::size_t t = 0; t < lower[d].loss_mask.size(); ++t) {
      if (masked[d].loss_mask[t] == 0) CHECK(lower[d].loss_mask[t] == 0);
    }
  }
}

TEST_CASE("filtered shard round trip through the shard format") {
  const auto docs = random_corpus(3, 50);
  const auto removed = remove_tokens(docs, 0.5, 7777);
  const auto corpus = to_corpus(removed);
  for (const auto& d : corpus) CHECK(d.labels_are_loss_mask);
  const auto back = from_corpus(deserialize_shard(serialize_shard(corpus)));
  REQUIRE(back.size() == removed.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].doc_id == removed[i].doc_id);
    CHECK(back[i].tokens == removed[i].tokens);
    CHECK(back[i].loss_mask == removed[i].loss_mask);
  }
  CHECK_THROWS(from_corpus(docs));
}

TEST_CASE("filter_report: audits") {
  const auto docs = random_corpus(4, 100);
  FilterConfig cfg;
  cfg.mode = FilterMode::kLossMask;

  cfg.threshold = 2.0;
  auto none = filter_report(docs, mask_tokens(docs, cfg.threshold), cfg, &docs);
  CHECK(none.tokens_filtered == 0);
  CHECK(none.audit->recall == 0.0);

  cfg.threshold = 0.0;
  auto all = filter_report(docs, mask_tokens(docs, cfg.threshold), cfg, &docs);
  CHECK(all.audit->recall == 1.0);
  CHECK(all.audit->collateral == 1.0);
  CHECK(all.tokens_out == 0);

  cfg.threshold = 0.6;
  const auto out = mask_tokens(docs, cfg.threshold);
  const auto rep = filter_report(docs, out, cfg, &docs);
  std::uint64_t ft = 0, fc = 0, rt = 0, rf = 0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    for (std::size_t t = 0; t < docs[d].tokens.size(); ++t) {
      const bool f = (*docs[d].labels)[t];
      const bool hit = (*docs[d].scores)[t] >= 0.6f;
      ft += f;
      fc += f && hit;
      rt += !f;
      rf += !f && hit;
    }
  }
  CHECK(rep.audit->forget_total == ft);
  CHECK(rep.audit->forget_caught == fc);
  CHECK(rep.audit->retain_total == rt);
  CHECK(rep.audit->retain_filtered == rf);
  CHECK(rep.tokens_in == rep.tokens_out + rep.tokens_filtered);
  CHECK(rep.to_json().find("\"recall\"") != std::string::npos);

  cfg.mode = FilterMode::kDocument;
  std::vector<double> ds(docs.size(), 0.0);
  ds[0] = 1.0;
  const auto dr = filter_documents(docs, ds, 0.5);
  const auto drep = filter_report(docs, dr, cfg, &docs);
  CHECK(drep.docs_out == docs.size() - 1);
  CHECK(drep.tokens_filtered == docs[0].tokens.size());
}
