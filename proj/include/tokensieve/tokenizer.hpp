#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tokensieve/corpus.hpp"

namespace tokensieve {

// Ranked byte-pair merges over a byte vocabulary. Rank is the index into
// `merges()`; lower ranks apply first.
class MergeTable {
 public:
  MergeTable() = default;
  MergeTable(std::vector<std::pair<std::string, std::string>> merges,
             std::unordered_map<std::string, TokenId> vocab,
             std::map<std::string, TokenId> special);

  static MergeTable load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string to_json() const;
  static MergeTable from_json(std::string_view text);

  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  const std::unordered_map<std::string, TokenId>& vocab() const { return vocab_; }
  const std::map<std::string, TokenId>& special() const { return special_; }

  // Id reserved for filtered positions; FormatError if the table has none.
  TokenId hidden_id() const;
  // One past the largest id in the vocabulary or special registry.
  std::uint32_t vocab_size() const;
  const std::string& bytes_of(TokenId id) const;

  struct MergeRule {
    std::uint32_t rank;
    TokenId merged;
  };
  const MergeRule* find_merge(TokenId left, TokenId right) const;

 private:
  void build_index();

  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, TokenId> vocab_;
  std::map<std::string, TokenId> special_;
  std::unordered_map<TokenId, std::string> bytes_by_id_;
  std::unordered_map<std::uint64_t, MergeRule> rules_;
};

// Greedy lowest-rank-first BPE; equal ranks resolve to the leftmost pair.
// Throws FormatError naming the byte offset when a byte has no vocab entry.
TokenizedDocument encode(std::string_view text, const MergeTable& table, std::string doc_id = {});

// Concatenates the token byte strings; inverse of encode.
std::string decode(const std::vector<TokenId>& tokens, const MergeTable& table);

}  // namespace tokensieve
