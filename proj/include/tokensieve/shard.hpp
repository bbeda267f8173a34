#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tokensieve/corpus.hpp"
#include "tokensieve/error.hpp"

namespace tokensieve {

// Little-endian shard layout:
//
//   "TKSV" | version u16 | doc count u64
//   per doc: id length u16 | id bytes | flags u8 | token count u32 |
//            token ids u32[n] | spans (u32 start, u32 end)[n] if bit0 |
//            labels bitmap ceil(n/8) bytes, LSB first, if bit1 |
//            scores f32[n] if bit2
//   CRC32 u32 over every byte between the header and the checksum.
//
// Flag bit3 marks the label bitmap as a loss mask rather than forget labels.
inline constexpr char kShardMagic[4] = {'T', 'K', 'S', 'V'};
inline constexpr std::uint16_t kShardVersion = 1;

enum ShardFlags : std::uint8_t {
  kHasSpans = 1u << 0,
  kHasLabels = 1u << 1,
  kHasScores = 1u << 2,
  kLabelsAreLossMask = 1u << 3,
};

class ShardError : public Error {
 public:
  enum class Kind { kIo, kBadMagic, kBadVersion, kTruncated, kChecksum, kMalformed };
  ShardError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::vector<std::uint8_t> serialize_shard(const Corpus& docs);
Corpus deserialize_shard(const std::vector<std::uint8_t>& bytes);

void write_shard(const Corpus& docs, const std::filesystem::path& path);
Corpus read_shard(const std::filesystem::path& path);

}  // namespace tokensieve
