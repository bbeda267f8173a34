#include <doctest.h>

#include <fstream>
#include <random>

#include "helpers.hpp"
#include "tokensieve/error.hpp"
#include "tokensieve/corpus.hpp"
#include "tokensieve/shard.hpp"
#include "tokensieve/tokenizer.hpp"

using namespace tokensieve;

namespace {

MergeTable abab_table() {
  return MergeTable({{"a", "b"}, {"ab", "ab"}}, {{"a", 0}, {"b", 1}, {"ab", 2}, {"abab", 3}}, {{"hidden", 4}});
}

MergeTable byte_table() {
  std::unordered_map<std::string, TokenId> vocab;
  for (int c = 0; c < 256; ++c) vocab.emplace(std::string(1, static_cast<char>(c)), static_cast<TokenId>(c));
  return MergeTable({}, std::move(vocab), {{"hidden", 256}});
}

// Reference BPE: repeatedly merge the leftmost occurrence of the lowest-rank
// adjacent pair. Quadratic, but obviously correct.
std::vector<std::string> naive_bpe(const std::string& text, const std::vector<std::pair<std::string, std::string>>& merges) {
  std::vector<std::string> parts;
  for (char c : text) parts.emplace_back(1, c);
  while (true) {
    std::size_t best_rank = merges.size(), best_pos = 0;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      for (std::size_t r = 0; r < best_rank; ++r) {
        if (merges[r].first == parts[i] && merges[r].second == parts[i + 1]) {
          best_rank = r;
          best_pos = i;
          break;
        }
      }
    }
    if (best_rank == merges.size()) return parts;
    parts[best_pos] += parts[best_pos + 1];
    parts.erase(parts.begin() + static_cast<std::ptrdiff_t>(best_pos) + 1);
  }
}

TokenizedDocument random_doc(std::mt19937_64& rng, int index) {
  TokenizedDocument d;
  d.doc_id = "doc/" + std::to_string(index);
  const std::size_t n = rng() % 40;
  std::uint32_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.tokens.push_back(static_cast<TokenId>(rng() % 100000));
  }
  if (rng() % 2) {
    d.spans.emplace();
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t len = 1 + rng() % 5;
      d.spans->push_back({pos, pos + len});
      pos += len;
    }
  }
  if (rng() % 2) {
    d.labels.emplace();
    for (std::size_t i = 0; i < n; ++i) d.labels->push_back(rng() % 2);
    d.labels_are_loss_mask = rng() % 3 == 0;
  }
  if (rng() % 2) {
    d.scores.emplace();
    for (std::size_t i = 0; i < n; ++i) d.scores->push_back(static_cast<float>((rng() % 1000) / 999.0));
  }
  return d;
}

}  // namespace

TEST_CASE("encode: empty text") {
  const auto doc = encode("", abab_table());
  CHECK(doc.tokens.empty());
  REQUIRE(doc.spans);
  CHECK(doc.spans->empty());
}

TEST_CASE("encode: single byte") {
  const auto doc = encode("a", abab_table());
  CHECK(doc.tokens == std::vector<TokenId>{0});
  CHECK(*doc.spans == std::vector<Span>{{0, 1}});
}

TEST_CASE("encode: abab collapses to one token") {
  const auto doc = encode("abab", abab_table());
  CHECK(doc.tokens == std::vector<TokenId>{3});
  CHECK(*doc.spans == std::vector<Span>{{0, 4}});
  CHECK(decode(doc.tokens, abab_table()) == "abab");
}

TEST_CASE("encode: unknown byte names the offset") {
  try {
    encode("abzab", abab_table(), "d7");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("encode: equal-rank ties resolve leftmost") {
  // "aaa" with (a,a) -> aa: leftmost pair merges first, giving [aa, a].
  MergeTable t({{"a", "a"}}, {{"a", 0}, {"aa", 1}}, {});
  const auto doc = encode("aaa", t);
  CHECK(doc.tokens == std::vector<TokenId>{1, 0});
  CHECK(*doc.spans == std::vector<Span>{{0, 2}, {2, 3}});
}

TEST_CASE("encode matches a naive reference and reconstructs spans") {
  // Small alphabet so merges fire often.
  std::vector<std::pair<std::string, std::string>> merges = {
      {"a", "b"}, {"b", "a"}, {"ab", "c"}, {"c", "c"}, {"ba", "ab"}, {"a", "a"}, {"abc", "cc"}};
  std::unordered_map<std::string, TokenId> vocab;
  TokenId next = 0;
  for (const char* s : {"a", "b", "c"}) vocab[s] = next++;
  for (const auto& [l, r] : merges) vocab.emplace(l + r, next++);
  MergeTable table(merges, vocab, {});
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    std::string text;
    const std::size_t n = rng() % 30;
    for (std::size_t i = 0; i < n; ++i) text += static_cast<char>('a' + rng() % 3);
    const auto doc = encode(text, table);
    const auto expected = naive_bpe(text, merges);
    REQUIRE(doc.tokens.size() == expected.size());
    std::string rebuilt;
    for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
      CHECK(table.bytes_of(doc.tokens[i]) == expected[i]);
      const auto sp = (*doc.spans)[i];
      rebuilt += text.substr(sp.start, sp.length());
    }
    CHECK(rebuilt == text);
  }
}

TEST_CASE("merge table JSON round trip") {
  const auto t = abab_table();
  const auto back = MergeTable::from_json(t.to_json());
  CHECK(back.merges() == t.merges());
  CHECK(back.vocab() == t.vocab());
  CHECK(back.hidden_id() == 4);
  CHECK(back.vocab_size() == 5);
}

TEST_CASE("merge table without hidden id") {
  MergeTable t({}, {{"a", 0}}, {});
  CHECK_THROWS_AS(t.hidden_id(), FormatError);
}

TEST_CASE("byte vocab encodes arbitrary bytes") {
  std::string text = "\x00\xff hello\n";
  text[0] = '\0';
  const auto doc = encode(text, byte_table());
  CHECK(doc.tokens.size() == text.size());
  CHECK(decode(doc.tokens, byte_table()) == text);
}

TEST_CASE("shard: empty corpus round trip") {
  const auto bytes = serialize_shard({});
  CHECK(bytes.size() == 4 + 2 + 8 + 4);
  CHECK(deserialize_shard(bytes).empty());
}

TEST_CASE("shard: golden bytes for one labelled document") {
  TokenizedDocument d;
  d.doc_id = "d1";
  d.tokens = {10, 20, 30};
  d.labels = LabelVector{1, 0, 1};
  const auto bytes = serialize_shard({d});

  std::vector<std::uint8_t> expected = {'T', 'K', 'S', 'V', 1, 0, 1, 0, 0, 0, 0, 0, 0, 0,
                                        2, 0, 'd', '1', 0x02, 3, 0, 0, 0,
                                        10, 0, 0, 0, 20, 0, 0, 0, 30, 0, 0, 0,
                                        0x05};
  const auto crc = testutil::crc32_bitwise(expected.data() + 14, expected.size() - 14);
  for (int k = 0; k < 4; ++k) expected.push_back(static_cast<std::uint8_t>(crc >> (8 * k)));
  CHECK(bytes == expected);

  std::ifstream in(std::string(TOKENSIEVE_TEST_DATA) + "/one_doc_labels.tksv", std::ios::binary);
  REQUIRE(in);
  std::vector<std::uint8_t> frozen((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(bytes == frozen);
  CHECK(deserialize_shard(frozen) == Corpus{d});
}

TEST_CASE("shard: randomized round trip") {
  std::mt19937_64 rng(5);
  Corpus docs;
  for (int i = 0; i < 1000; ++i) docs.push_back(random_doc(rng, i));
  CHECK(deserialize_shard(serialize_shard(docs)) == docs);

  testutil::TempDir dir;
  write_shard(docs, dir / "r.tksv");
  CHECK(read_shard(dir / "r.tksv") == docs);
}

TEST_CASE("shard: corruption is detected") {
  TokenizedDocument d;
  d.doc_id = "x";
  d.tokens = {1, 2, 3};
  const auto good = serialize_shard({d});

  auto kind_of = [](const std::vector<std::uint8_t>& b) {
    try {
      deserialize_shard(b);
    } catch (const ShardError& e) {
      return e.kind();
    }
    FAIL("no error");
    return ShardError::Kind::kIo;
  };
  auto bad = good;
  bad[0] = 'X';
  CHECK(kind_of(bad) == ShardError::Kind::kBadMagic);
  bad = good;
  bad[4] = 9;
  CHECK(kind_of(bad) == ShardError::Kind::kBadVersion);
  bad = good;
  bad[20] ^= 0x40;
  CHECK(kind_of(bad) == ShardError::Kind::kChecksum);
  bad.assign(good.begin(), good.begin() + 10);
  CHECK(kind_of(bad) == ShardError::Kind::kTruncated);

  CHECK_THROWS_AS(read_shard("/nonexistent/dir/x.tksv"), ShardError);
}

TEST_CASE("shard: invalid documents are rejected on write") {
  TokenizedDocument d;
  d.doc_id = "x";
  d.tokens = {1, 2};
  d.labels = LabelVector{1};
  CHECK_THROWS_AS(serialize_shard({d}), FormatError);
  d.labels.reset();
  d.spans = std::vector<Span>{{0, 2}, {1, 3}};
  CHECK_THROWS_AS(serialize_shard({d}), FormatError);
}

TEST_CASE("raw corpus JSONL round trip and duplicate ids") {
  testutil::TempDir dir;
  std::vector<RawDocument> docs = {{"a", "hello"}, {"b", "line\nbreak \"quoted\""}, {"c", ""}};
  write_raw_corpus(docs, dir / "raw.jsonl");
  const auto back = read_raw_corpus(dir / "raw.jsonl");
  REQUIRE(back.size() == 3);
  CHECK(back[1].text == docs[1].text);

  std::ofstream(dir / "dup.jsonl") << R"({"doc_id":"a","text":"x"})" << "\n" << R"({"doc_id":"a","text":"y"})" << "\n";
  CHECK_THROWS_AS(read_raw_corpus(dir / "dup.jsonl"), FormatError);
  CHECK_THROWS_AS(read_raw_corpus(dir / "missing.jsonl"), IoError);
}

TEST_CASE("histogram: worked buckets") {
  auto make = [](LabelVector l) {
    TokenizedDocument d;
    d.tokens.assign(l.size(), 1);
    d.labels = std::move(l);
    return d;
  };
  const Corpus docs = {make({0, 0}), make({1, 0}), make({1, 1})};
  const auto h = doc_forget_histogram(docs, {0, 0.25, 0.75, 1.0});
  CHECK(h.counts == std::vector<std::uint64_t>{1, 1, 1});
  CHECK(h.zero_forget_docs == 1);
  CHECK(h.total() == 3);
}

TEST_CASE("histogram: all retain lands in the zero bucket") {
  Corpus docs;
  for (int i = 0; i < 5; ++i) {
    TokenizedDocument d;
    d.tokens = {1, 2, 3};
    d.labels = LabelVector{0, 0, 0};
    docs.push_back(d);
  }
  const auto h = doc_forget_histogram(docs, {0, 0.5, 1});
  CHECK(h.zero_forget_docs == 5);
  CHECK(h.counts.front() == 5);
}

TEST_CASE("histogram: zero-token documents and conservation") {
  std::mt19937_64 rng(3);
  Corpus docs;
  for (int i = 0; i < 300; ++i) {
    TokenizedDocument d;
    const std::size_t n = rng() % 12;
    d.tokens.assign(n, 0);
    d.labels.emplace();
    for (std::size_t t = 0; t < n; ++t) d.labels->push_back(rng() % 2);
    docs.push_back(d);
  }
  const auto h = doc_forget_histogram(docs, {0, 0.1, 0.3, 0.31, 0.9, 1});
  std::uint64_t sum = h.zero_token_docs;
  for (auto c : h.counts) sum += c;
  CHECK(sum == docs.size());
  CHECK(h.total() == docs.size());
}

TEST_CASE("histogram: preconditions") {
  TokenizedDocument d;
  d.tokens = {1};
  CHECK_THROWS_AS(doc_forget_histogram({d}, {0, 1}), PreconditionError);
  d.labels = LabelVector{1};
  CHECK_THROWS(doc_forget_histogram({d}, {0.1, 1}));
  CHECK_THROWS(doc_forget_histogram({d}, {0, 0.5, 0.5, 1}));
}
