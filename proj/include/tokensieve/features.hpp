#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tokensieve {

// Row key: (doc_id, token_index) for token-level rows, (doc_id) for
// document-level rows.
struct FeatureKey {
  std::string doc_id;
  std::optional<std::uint32_t> token_index;

  std::string encode() const;
  static FeatureKey decode(std::string_view bytes);
  friend bool operator==(const FeatureKey&, const FeatureKey&) = default;
  friend auto operator<=>(const FeatureKey&, const FeatureKey&) = default;
};

// Dense row-major feature rows. Keys are empty for the dense variant, whose
// rows follow shard token order.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t dim, std::vector<float> values, std::vector<FeatureKey> keys = {});

  std::size_t rows() const { return dim_ == 0 ? 0 : values_.size() / dim_; }
  std::size_t dim() const { return dim_; }
  std::span<const float> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  const std::vector<float>& values() const { return values_; }
  const std::vector<FeatureKey>& keys() const { return keys_; }
  bool keyed() const { return !keys_.empty() || rows() == 0; }

  // Rows are the concatenation of two directional representation vectors.
  bool concatenated = false;

  // Subset of rows, in the given order.
  FeatureMatrix select(std::span<const std::size_t> rows) const;

  // Throws FormatError on non-finite values or duplicate keys.
  void validate() const;

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<float> values_;
  std::vector<FeatureKey> keys_;
};

// "TKFT" | dim u32 | rows u64 | per row: key length u16 | key | f32[dim]
// Dense variant: "TKFD" | dim u32 | rows u64 | f32[rows * dim]
void write_features(const FeatureMatrix& m, const std::filesystem::path& path);
FeatureMatrix read_features(const std::filesystem::path& path);

}  // namespace tokensieve
