#include "tokensieve/shard.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "tokensieve/error.hpp"

namespace tokensieve {
namespace {

static_assert(std::endian::native == std::endian::little, "shard I/O assumes a little-endian host");

constexpr std::size_t kHeaderSize = 4 + 2 + 8;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  void need(std::size_t n) const {
    if (size_ - pos_ < n) {
      throw ShardError(ShardError::Kind::kTruncated, "shard truncated at byte " + std::to_string(pos_));
    }
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void get_bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> serialize_shard(const Corpus& docs) {
  Writer w;
  w.put_bytes(kShardMagic, 4);
  w.put<std::uint16_t>(kShardVersion);
  w.put<std::uint64_t>(docs.size());
  for (const auto& doc : docs) {
    validate(doc);
    if (doc.doc_id.size() > 0xffff) throw FormatError("doc_id longer than 65535 bytes: " + doc.doc_id.substr(0, 32));
    if (doc.tokens.size() > 0xffffffffULL) throw FormatError("document '" + doc.doc_id + "' has too many tokens");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(doc.doc_id.size()));
    w.put_bytes(doc.doc_id.data(), doc.doc_id.size());
    std::uint8_t flags = 0;
    if (doc.spans) flags |= kHasSpans;
    if (doc.labels) flags |= kHasLabels;
    if (doc.scores) flags |= kHasScores;
    if (doc.labels && doc.labels_are_loss_mask) flags |= kLabelsAreLossMask;
    w.put<std::uint8_t>(flags);
    const auto n = static_cast<std::uint32_t>(doc.tokens.size());
    w.put<std::uint32_t>(n);
    w.put_bytes(doc.tokens.data(), n * sizeof(TokenId));
    if (doc.spans) {
      for (const Span& s : *doc.spans) {
        w.put<std::uint32_t>(s.start);
        w.put<std::uint32_t>(s.end);
      }
    }
    if (doc.labels) {
      std::vector<std::uint8_t> bitmap((n + 7) / 8, 0);
      for (std::uint32_t i = 0; i < n; ++i) {
        if ((*doc.labels)[i]) bitmap[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
      }
      w.put_bytes(bitmap.data(), bitmap.size());
    }
    if (doc.scores) w.put_bytes(doc.scores->data(), n * sizeof(float));
  }
  auto& buf = w.buffer();
  const std::uint32_t crc = crc_of(buf.data() + kHeaderSize, buf.size() - kHeaderSize);
  w.put<std::uint32_t>(crc);
  return std::move(buf);
}

Corpus deserialize_shard(const std::vector<std::uint8_t>& bytes) {
  Reader header(bytes.data(), bytes.size());
  char magic[4];
  if (bytes.size() < 4) throw ShardError(ShardError::Kind::kTruncated, "shard shorter than its magic bytes");
  header.get_bytes(magic, 4);
  if (std::memcmp(magic, kShardMagic, 4) != 0) throw ShardError(ShardError::Kind::kBadMagic, "not a TKSV shard");
  const auto version = header.get<std::uint16_t>();
  if (version != kShardVersion) {
    throw ShardError(ShardError::Kind::kBadVersion, "unsupported shard version " + std::to_string(version));
  }
  const auto count = header.get<std::uint64_t>();
  if (bytes.size() < kHeaderSize + 4) throw ShardError(ShardError::Kind::kTruncated, "shard has no checksum");

  const std::size_t payload_size = bytes.size() - kHeaderSize - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (stored != crc_of(bytes.data() + kHeaderSize, payload_size)) {
    throw ShardError(ShardError::Kind::kChecksum, "shard checksum mismatch");
  }
  Reader r(bytes.data() + kHeaderSize, payload_size);
  Corpus docs;
  for (std::uint64_t d = 0; d < count; ++d) {
    TokenizedDocument doc;
    const auto id_len = r.get<std::uint16_t>();
    doc.doc_id.resize(id_len);
    r.get_bytes(doc.doc_id.data(), id_len);
    const auto flags = r.get<std::uint8_t>();
    if (flags & ~0x0f) throw ShardError(ShardError::Kind::kMalformed, "unknown flag bits on '" + doc.doc_id + "'");
    const auto n = r.get<std::uint32_t>();
    r.need(static_cast<std::size_t>(n) * sizeof(TokenId));
    doc.tokens.resize(n);
    r.get_bytes(doc.tokens.data(), n * sizeof(TokenId));
    if (flags & kHasSpans) {
      r.need(static_cast<std::size_t>(n) * 8);
      doc.spans.emplace(n);
      for (auto& s : *doc.spans) {
        s.start = r.get<std::uint32_t>();
        s.end = r.get<std::uint32_t>();
      }
    }
    if (flags & kHasLabels) {
      std::vector<std::uint8_t> bitmap((n + 7) / 8);
      r.get_bytes(bitmap.data(), bitmap.size());
      doc.labels.emplace(n);
      for (std::uint32_t i = 0; i < n; ++i) (*doc.labels)[i] = (bitmap[i / 8] >> (i % 8)) & 1u;
      doc.labels_are_loss_mask = (flags & kLabelsAreLossMask) != 0;
    }
    if (flags & kHasScores) {
      r.need(static_cast<std::size_t>(n) * sizeof(float));
      doc.scores.emplace(n);
      r.get_bytes(doc.scores->data(), n * sizeof(float));
    }
    docs.push_back(std::move(doc));
  }
  if (r.remaining() != 0) {
    throw ShardError(ShardError::Kind::kMalformed, std::to_string(r.remaining()) + " trailing bytes after last document");
  }
  for (const auto& doc : docs) {
    try {
      validate(doc);
    } catch (const FormatError& e) {
      throw ShardError(ShardError::Kind::kMalformed, e.what());
    }
  }
  return docs;
}

void write_shard(const Corpus& docs, const std::filesystem::path& path) {
  const auto bytes = serialize_shard(docs);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ShardError(ShardError::Kind::kIo, "cannot write shard: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ShardError(ShardError::Kind::kIo, "short write to shard: " + path.string());
}

Corpus read_shard(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ShardError(ShardError::Kind::kIo, "cannot open shard: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_shard(bytes);
}

}  // namespace tokensieve
