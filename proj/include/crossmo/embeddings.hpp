// SPDX-License-Identifier: Apache-2.0
#pragma once

// Condition vectors for species and captions. The generator and CGAE only
// see the provider interfaces; the hash providers are deterministic
// stand-ins that keep the toolkit self-contained, and EmbeddingTable lets
// precomputed encoder outputs be plugged in from a sidecar file.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "crossmo/autograd.hpp"
#include "crossmo/matrix.hpp"
#include "crossmo/nn.hpp"

namespace crossmo::embed {

inline constexpr std::size_t kSpeciesDim = 64;
inline constexpr std::size_t kTextDim = 64;
inline constexpr std::size_t kMaxWords = 32;
inline constexpr std::uint64_t kDefaultProviderSeed = 0xB10C11Bull;

/// Unit-norm species condition, 1 x d.
struct SpeciesEmbedding {
  Matrix vector;
};

struct TextFeatures {
  Matrix sentence;  // 1 x d
  Matrix words;     // n_w x d, 1 <= n_w <= 32

  /// [s; W] as one (n_w + 1) x d block, the cross-attention memory.
  Matrix tokens() const;
};

/// Lower-cased, trimmed name; the key used by every species provider.
std::string canonical_species_name(std::string_view name);

/// Lower-cased whitespace tokens, capped at kMaxWords.
std::vector<std::string> tokenize(std::string_view caption);

class SpeciesProvider {
 public:
  virtual ~SpeciesProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual SpeciesEmbedding embed(std::string_view species_name) const = 0;
};

class TextProvider {
 public:
  virtual ~TextProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual TextFeatures features(std::string_view caption) const = 0;
};

class HashSpeciesProvider final : public SpeciesProvider {
 public:
  explicit HashSpeciesProvider(std::uint64_t seed = kDefaultProviderSeed, std::size_t dim = kSpeciesDim);
  std::size_t dim() const override { return dim_; }
  SpeciesEmbedding embed(std::string_view species_name) const override;

 private:
  std::uint64_t seed_;
  std::size_t dim_;
};

/// Each token maps to a hash-seeded unit Gaussian vector; the sentence is the
/// normalised mean of its words.
class HashTextProvider final : public TextProvider {
 public:
  explicit HashTextProvider(std::uint64_t seed = kDefaultProviderSeed, std::size_t dim = kTextDim);
  std::size_t dim() const override { return dim_; }
  TextFeatures features(std::string_view caption) const override;

 private:
  std::uint64_t seed_;
  std::size_t dim_;
};

/// Shortcuts over the default hash providers.
SpeciesEmbedding species_embed(std::string_view name);
TextFeatures text_features(std::string_view caption);

/// Learned unconditional text condition for classifier-free guidance: one
/// sentence row and one word row, trained with the generator.
struct NullTextCondition {
  ad::Tensor sentence;
  ad::Tensor word;

  static NullTextCondition create(nn::ParamSet& params, const std::string& name, std::size_t dim, Rng& rng);
  /// [sentence; word] as a live tensor, 2 x d.
  ad::Tensor tokens() const;
  TextFeatures features() const;
};

/// Keyed f32 vectors loaded from or written to a sidecar file. Row 0 of a
/// text entry is the sentence feature and the remaining rows are words;
/// species entries have a single row.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  void put(const std::string& key, const Matrix& rows);
  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  const Matrix& at(const std::string& key) const;
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }

  std::vector<std::uint8_t> serialize() const;
  static EmbeddingTable parse(std::vector<std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static EmbeddingTable load(const std::filesystem::path& path);

 private:
  std::size_t dim_;
  std::map<std::string, Matrix> entries_;
};

class TableSpeciesProvider final : public SpeciesProvider {
 public:
  explicit TableSpeciesProvider(EmbeddingTable table) : table_(std::move(table)) {}
  std::size_t dim() const override { return table_.dim(); }
  SpeciesEmbedding embed(std::string_view species_name) const override;

 private:
  EmbeddingTable table_;
};

/// Looks captions up verbatim.
class TableTextProvider final : public TextProvider {
 public:
  explicit TableTextProvider(EmbeddingTable table) : table_(std::move(table)) {}
  std::size_t dim() const override { return table_.dim(); }
  TextFeatures features(std::string_view caption) const override;

 private:
  EmbeddingTable table_;
};

}  // namespace crossmo::embed
