#include "tokensieve/tokenizer.hpp"

#include <fstream>
#include <queue>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tokensieve/error.hpp"

namespace tokensieve {
namespace {

std::uint64_t pair_key(TokenId a, TokenId b) {
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

std::string to_hex(std::string_view bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 0xf]);
  }
  return out;
}

std::string from_hex(std::string_view hex) {
  auto nibble = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw FormatError("invalid hex digit in merge table: '" + std::string(hex) + "'");
  };
  if (hex.size() % 2 != 0) throw FormatError("odd-length hex string in merge table: '" + std::string(hex) + "'");
  std::string out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    out.push_back(static_cast<char>(nibble(hex[i]) << 4 | nibble(hex[i + 1])));
  }
  return out;
}

}  // namespace

MergeTable::MergeTable(std::vector<std::pair<std::string, std::string>> merges,
                       std::unordered_map<std::string, TokenId> vocab,
                       std::map<std::string, TokenId> special)
    : merges_(std::move(merges)), vocab_(std::move(vocab)), special_(std::move(special)) {
  build_index();
}

void MergeTable::build_index() {
  bytes_by_id_.clear();
  rules_.clear();
  for (const auto& [bytes, id] : vocab_) {
    if (bytes.empty()) throw FormatError("merge table: empty vocabulary entry");
    if (!bytes_by_id_.emplace(id, bytes).second) {
      throw FormatError("merge table: id " + std::to_string(id) + " assigned twice");
    }
  }
  for (const auto& [name, id] : special_) {
    if (bytes_by_id_.count(id)) {
      throw FormatError("merge table: special token '" + name + "' collides with vocabulary id " + std::to_string(id));
    }
  }
  for (std::uint32_t rank = 0; rank < merges_.size(); ++rank) {
    const auto& [left, right] = merges_[rank];
    auto l = vocab_.find(left);
    auto r = vocab_.find(right);
    auto m = vocab_.find(left + right);
    if (l == vocab_.end() || r == vocab_.end() || m == vocab_.end()) {
      throw FormatError("merge table: merge rank " + std::to_string(rank) + " references bytes outside the vocabulary");
    }
    // A repeated pair keeps its first (lowest) rank.
    rules_.emplace(pair_key(l->second, r->second), MergeRule{rank, m->second});
  }
}

TokenId MergeTable::hidden_id() const {
  auto it = special_.find("hidden");
  if (it == special_.end()) throw FormatError("merge table has no 'hidden' special token");
  return it->second;
}

std::uint32_t MergeTable::vocab_size() const {
  std::uint32_t n = 0;
  for (const auto& [_, id] : vocab_) n = std::max(n, id + 1);
  for (const auto& [_, id] : special_) n = std::max(n, id + 1);
  return n;
}

const std::string& MergeTable::bytes_of(TokenId id) const {
  auto it = bytes_by_id_.find(id);
  if (it == bytes_by_id_.end()) throw FormatError("token id " + std::to_string(id) + " has no byte string");
  return it->second;
}

const MergeTable::MergeRule* MergeTable::find_merge(TokenId left, TokenId right) const {
  auto it = rules_.find(pair_key(left, right));
  return it == rules_.end() ? nullptr : &it->second;
}

std::string MergeTable::to_json() const {
  nlohmann::json j;
  j["merges"] = nlohmann::json::array();
  for (const auto& [l, r] : merges_) j["merges"].push_back({to_hex(l), to_hex(r)});
  // Sorted by id so the file is stable regardless of hash-map order.
  std::map<TokenId, std::string> by_id;
  for (const auto& [bytes, id] : vocab_) by_id.emplace(id, bytes);
  nlohmann::ordered_json vocab = nlohmann::ordered_json::object();
  for (const auto& [id, bytes] : by_id) vocab[to_hex(bytes)] = id;
  nlohmann::ordered_json out;
  out["merges"] = j["merges"];
  out["vocab"] = vocab;
  out["special"] = special_;
  return out.dump(1);
}

MergeTable MergeTable::from_json(std::string_view text) {
  try {
    auto j = nlohmann::json::parse(text);
    std::vector<std::pair<std::string, std::string>> merges;
    for (const auto& m : j.at("merges")) {
      if (!m.is_array() || m.size() != 2) throw FormatError("merge table: each merge must be a [left, right] pair");
      merges.emplace_back(from_hex(m[0].get<std::string>()), from_hex(m[1].get<std::string>()));
    }
    std::unordered_map<std::string, TokenId> vocab;
    for (const auto& [hex, id] : j.at("vocab").items()) vocab.emplace(from_hex(hex), id.get<TokenId>());
    std::map<std::string, TokenId> special;
    if (j.contains("special")) {
      for (const auto& [name, id] : j["special"].items()) special.emplace(name, id.get<TokenId>());
    }
    return MergeTable(std::move(merges), std::move(vocab), std::move(special));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("merge table: ") + e.what());
  }
}

MergeTable MergeTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open merge table: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void MergeTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write merge table: " + path.string());
  out << to_json() << '\n';
}

TokenizedDocument encode(std::string_view text, const MergeTable& table, std::string doc_id) {
  struct Node {
    TokenId id;
    std::uint32_t start, end;
    std::int64_t prev, next;
    bool alive;
  };
  std::vector<Node> nodes;
  nodes.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    auto it = table.vocab().find(std::string(1, text[i]));
    if (it == table.vocab().end()) {
      throw FormatError("cannot encode byte 0x" + to_hex(text.substr(i, 1)) + " at offset " + std::to_string(i));
    }
    const auto idx = static_cast<std::int64_t>(i);
    nodes.push_back({it->second, static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i + 1), idx - 1,
                     idx + 1 < static_cast<std::int64_t>(text.size()) ? idx + 1 : -1, true});
  }

  // (rank, start offset of left node, left index, left id, right id); the
  // start offset makes equal ranks pop leftmost first.
  struct Candidate {
    std::uint32_t rank;
    std::uint32_t start;
    std::int64_t left;
    TokenId left_id, right_id;
    bool operator>(const Candidate& o) const {
      return rank != o.rank ? rank > o.rank : start > o.start;
    }
  };
  std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> heap;
  auto push_pair = [&](std::int64_t left) {
    if (left < 0) return;
    const Node& l = nodes[static_cast<std::size_t>(left)];
    if (l.next < 0) return;
    const Node& r = nodes[static_cast<std::size_t>(l.next)];
    if (const auto* rule = table.find_merge(l.id, r.id)) {
      heap.push({rule->rank, l.start, left, l.id, r.id});
    }
  };
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i) push_pair(static_cast<std::int64_t>(i));

  while (!heap.empty()) {
    const Candidate c = heap.top();
    heap.pop();
    Node& l = nodes[static_cast<std::size_t>(c.left)];
    if (!l.alive || l.id != c.left_id || l.next < 0) continue;
    Node& r = nodes[static_cast<std::size_t>(l.next)];
    if (r.id != c.right_id) continue;
    const auto* rule = table.find_merge(l.id, r.id);
    l.id = rule->merged;
    l.end = r.end;
    r.alive = false;
    l.next = r.next;
    if (r.next >= 0) nodes[static_cast<std::size_t>(r.next)].prev = c.left;
    push_pair(l.prev);
    push_pair(c.left);
  }

  TokenizedDocument doc;
  doc.doc_id = std::move(doc_id);
  doc.spans.emplace();
  for (const Node& n : nodes) {
    if (!n.alive) continue;
    doc.tokens.push_back(n.id);
    doc.spans->push_back({n.start, n.end});
  }
  return doc;
}

std::string decode(const std::vector<TokenId>& tokens, const MergeTable& table) {
  std::string out;
  for (TokenId t : tokens) out += table.bytes_of(t);
  return out;
}

}  // namespace tokensieve
