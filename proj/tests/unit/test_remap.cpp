#include <doctest.h>

#include <random>

#include "tokensieve/error.hpp"
#include "tokensieve/remap.hpp"

using namespace tokensieve;

TEST_CASE("align_spans: identity") {
  const std::vector<Span> s = {{0, 2}, {2, 5}, {5, 6}};
  const auto a = align_spans(s, s);
  REQUIRE(a.sources.size() == 3);
  for (std::uint32_t i = 0; i < 3; ++i) CHECK(a.sources[i] == std::vector<std::uint32_t>{i});
}

TEST_CASE("align_spans: worked example") {
  const auto a = align_spans({{0, 5}, {5, 9}}, {{0, 3}, {3, 7}, {7, 9}});
  CHECK(a.sources[0] == std::vector<std::uint32_t>{0});
  CHECK(a.sources[1] == std::vector<std::uint32_t>{0, 1});
  CHECK(a.sources[2] == std::vector<std::uint32_t>{1});
}

TEST_CASE("align_spans: uncovered target bytes") {
  const auto a = align_spans({{0, 3}}, {{0, 3}, {3, 6}});
  CHECK(a.sources[1].empty());
  const auto t = transfer_labels({1}, 1, a);
  CHECK(t.labels == LabelVector{1, 0});
  CHECK(t.uncovered == 1);
}

TEST_CASE("align_spans: zero-length spans align to nothing") {
  const auto a = align_spans({{0, 3}}, {{1, 1}});
  CHECK(a.sources[0].empty());
}

TEST_CASE("align_spans: rejects unsorted input") {
  CHECK_THROWS_AS(align_spans({{3, 5}, {0, 3}}, {{0, 5}}), FormatError);
  CHECK_THROWS_AS(align_spans({{0, 5}}, {{0, 3}, {2, 5}}), FormatError);
}

TEST_CASE("transfer_labels: any-overlap rule") {
  const auto a = align_spans({{0, 5}, {5, 9}}, {{0, 3}, {3, 7}, {7, 9}});
  CHECK(transfer_labels({1, 0}, 2, a).labels == LabelVector{1, 1, 0});
  CHECK(transfer_labels({0, 0}, 2, a).labels == LabelVector{0, 0, 0});
  CHECK_THROWS_AS(transfer_labels({1}, 2, a), PreconditionError);
}

TEST_CASE("remap_document") {
  TokenizedDocument src{"d", {1, 2}, std::vector<Span>{{0, 5}, {5, 9}}, LabelVector{0, 1}, std::nullopt, false};
  TokenizedDocument tgt{"d", {7, 8, 9}, std::vector<Span>{{0, 3}, {3, 7}, {7, 9}}, std::nullopt, std::nullopt, false};
  const auto out = remap_document(src, tgt);
  CHECK(out.tokens == tgt.tokens);
  CHECK(out.labels == LabelVector{0, 1, 1});
  SUBCASE("mismatched ids") {
    tgt.doc_id = "e";
    CHECK_THROWS(remap_document(src, tgt));
  }
  SUBCASE("missing spans") {
    src.spans.reset();
    CHECK_THROWS(remap_document(src, tgt));
  }
}

TEST_CASE("transfer monotonicity: more source forget never removes target forget") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    auto cut = [&](std::uint32_t len) {
      std::vector<Span> s;
      std::uint32_t p = 0;
      while (p < len) {
        const std::uint32_t w = std::min<std::uint32_t>(len - p, 1 + rng() % 4);
        s.push_back({p, p + w});
        p += w;
      }
      return s;
    };
    const std::uint32_t len = 1 + rng() % 40;
    const auto src = cut(len), tgt = cut(len);
    LabelVector labels(src.size());
    for (auto& l : labels) l = rng() % 2;
    const auto a = align_spans(src, tgt);
    const auto before = transfer_labels(labels, src.size(), a).labels;
    labels[rng() % labels.size()] = 1;
    const auto after = transfer_labels(labels, src.size(), a).labels;
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i] >= before[i]);
  }
}
