#include "tokensieve/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "tokensieve/error.hpp"

namespace tokensieve {
namespace {

constexpr char kSep = '\x1f';

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& what) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("feature file truncated in " + what);
  return v;
}

}  // namespace

std::string FeatureKey::encode() const {
  if (doc_id.find(kSep) != std::string::npos) throw FormatError("doc_id contains the 0x1f key separator");
  if (!token_index) return doc_id;
  return doc_id + kSep + std::to_string(*token_index);
}

FeatureKey FeatureKey::decode(std::string_view bytes) {
  const auto pos = bytes.rfind(kSep);
  if (pos == std::string_view::npos) return {std::string(bytes), std::nullopt};
  const std::string digits(bytes.substr(pos + 1));
  if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw FormatError("malformed feature key");
  }
  return {std::string(bytes.substr(0, pos)), static_cast<std::uint32_t>(std::stoul(digits))};
}

FeatureMatrix::FeatureMatrix(std::size_t dim, std::vector<float> values, std::vector<FeatureKey> keys)
    : dim_(dim), values_(std::move(values)), keys_(std::move(keys)) {
  if (dim_ == 0) throw FormatError("feature dimension must be positive");
  if (values_.size() % dim_ != 0) throw FormatError("feature values are not a whole number of rows");
  if (!keys_.empty() && keys_.size() != rows()) throw FormatError("feature key count != row count");
}

FeatureMatrix FeatureMatrix::select(std::span<const std::size_t> idx) const {
  std::vector<float> vals;
  vals.reserve(idx.size() * dim_);
  std::vector<FeatureKey> ks;
  for (auto i : idx) {
    if (i >= rows()) throw PreconditionError("row index out of range");
    auto r = row(i);
    vals.insert(vals.end(), r.begin(), r.end());
    if (!keys_.empty()) ks.push_back(keys_[i]);
  }
  FeatureMatrix out(dim_, std::move(vals), std::move(ks));
  out.concatenated = concatenated;
  return out;
}

void FeatureMatrix::validate() const {
  for (float v : values_) {
    if (!std::isfinite(v)) throw FormatError("feature matrix holds a non-finite value");
  }
  std::set<FeatureKey> seen;
  for (const auto& k : keys_) {
    if (!seen.insert(k).second) throw FormatError("duplicate feature key for doc '" + k.doc_id + "'");
  }
}

void write_features(const FeatureMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file: " + path.string());
  const bool dense = m.keys().empty();
  out.write(dense ? "TKFD" : "TKFT", 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.dim()));
  put<std::uint64_t>(out, m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (!dense) {
      const std::string key = m.keys()[i].encode();
      if (key.size() > 0xffff) throw FormatError("feature key too long");
      put<std::uint16_t>(out, static_cast<std::uint16_t>(key.size()));
      out.write(key.data(), static_cast<std::streamsize>(key.size()));
    }
    auto r = m.row(i);
    out.write(reinterpret_cast<const char*>(r.data()), static_cast<std::streamsize>(r.size() * sizeof(float)));
  }
  if (!out) throw IoError("short write to feature file: " + path.string());
}

FeatureMatrix read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file: " + path.string());
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("feature file truncated in header");
  const bool dense = std::memcmp(magic, "TKFD", 4) == 0;
  if (!dense && std::memcmp(magic, "TKFT", 4) != 0) throw FormatError("not a TKFT feature file: " + path.string());
  const auto dim = get<std::uint32_t>(in, "header");
  const auto rows = get<std::uint64_t>(in, "header");
  if (dim == 0) throw FormatError("feature file declares dimension 0");
  std::vector<float> values(rows * dim);
  std::vector<FeatureKey> keys;
  if (!dense) keys.reserve(rows);
  for (std::uint64_t i = 0; i < rows; ++i) {
    if (!dense) {
      const auto len = get<std::uint16_t>(in, "row key");
      std::string key(len, '\0');
      if (!in.read(key.data(), len)) throw FormatError("feature file truncated in row key");
      keys.push_back(FeatureKey::decode(key));
    }
    if (!in.read(reinterpret_cast<char*>(values.data() + i * dim), static_cast<std::streamsize>(dim * sizeof(float)))) {
      throw FormatError("feature file truncated in row " + std::to_string(i));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in feature file");
  FeatureMatrix m(dim, std::move(values), std::move(keys));
  m.validate();
  return m;
}

}  // namespace tokensieve
