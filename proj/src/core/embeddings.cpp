// SPDX-License-Identifier: Apache-2.0

#include "crossmo/embeddings.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

#include "crossmo/binary_io.hpp"
#include "crossmo/errors.hpp"
#include "crossmo/rng.hpp"

namespace crossmo::embed {
namespace {

constexpr char kTableMagic[4] = {'E', 'M', 'B', '1'};
constexpr std::uint32_t kTableVersion = 1;

void normalize_row(double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * x[i];
  const double inv = 1.0 / std::sqrt(s);
  for (std::size_t i = 0; i < n; ++i) x[i] *= inv;
}

Matrix hashed_unit_vector(std::string_view key, std::uint64_t seed, std::size_t dim) {
  Rng rng(stable_hash(key, seed));
  Matrix v = rng.normal_matrix(1, dim);
  normalize_row(v.data.data(), dim);
  return v;
}

}  // namespace

Matrix TextFeatures::tokens() const {
  Matrix out(words.rows + 1, sentence.cols);
  std::copy(sentence.data.begin(), sentence.data.end(), out.data.begin());
  std::copy(words.data.begin(), words.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(sentence.cols));
  return out;
}

std::string canonical_species_name(std::string_view name) {
  std::size_t b = 0, e = name.size();
  while (b < e && std::isspace(static_cast<unsigned char>(name[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(name[e - 1]))) --e;
  std::string out(name.substr(b, e - b));
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> tokenize(std::string_view caption) {
  std::istringstream in{std::string(caption)};
  std::vector<std::string> out;
  std::string tok;
  while (out.size() < kMaxWords && in >> tok) {
    for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(tok);
  }
  return out;
}

HashSpeciesProvider::HashSpeciesProvider(std::uint64_t seed, std::size_t dim) : seed_(seed), dim_(dim) {
  if (dim == 0) throw InvalidInput("species embedding width must be positive");
}

SpeciesEmbedding HashSpeciesProvider::embed(std::string_view species_name) const {
  const std::string key = canonical_species_name(species_name);
  if (key.empty()) throw InvalidInput("species name must be non-empty");
  return {hashed_unit_vector("species:" + key, seed_, dim_)};
}

HashTextProvider::HashTextProvider(std::uint64_t seed, std::size_t dim) : seed_(seed), dim_(dim) {
  if (dim == 0) throw InvalidInput("text feature width must be positive");
}

TextFeatures HashTextProvider::features(std::string_view caption) const {
  const auto toks = tokenize(caption);
  if (toks.empty()) throw InvalidInput("caption must contain at least one token");
  TextFeatures f;
  f.words = Matrix(toks.size(), dim_);
  f.sentence = Matrix(1, dim_);
  for (std::size_t i = 0; i < toks.size(); ++i) {
    const Matrix w = hashed_unit_vector("word:" + toks[i], seed_, dim_);
    std::copy(w.data.begin(), w.data.end(), f.words.row(i));
    for (std::size_t k = 0; k < dim_; ++k) f.sentence.data[k] += w.data[k];
  }
  if (toks.size() == 1) {
    f.sentence = Matrix(1, dim_, std::vector<double>(f.words.data));
  } else {
    normalize_row(f.sentence.data.data(), dim_);
  }
  return f;
}

SpeciesEmbedding species_embed(std::string_view name) {
  static const HashSpeciesProvider provider;
  return provider.embed(name);
}

TextFeatures text_features(std::string_view caption) {
  static const HashTextProvider provider;
  return provider.features(caption);
}

NullTextCondition NullTextCondition::create(nn::ParamSet& params, const std::string& name, std::size_t dim, Rng& rng) {
  NullTextCondition n;
  Matrix s = rng.normal_matrix(1, dim), w = rng.normal_matrix(1, dim);
  normalize_row(s.data.data(), dim);
  normalize_row(w.data.data(), dim);
  n.sentence = params.add(name + ".sentence", std::move(s));
  n.word = params.add(name + ".word", std::move(w));
  return n;
}

ad::Tensor NullTextCondition::tokens() const { return ad::concat_rows({sentence, word}); }

TextFeatures NullTextCondition::features() const { return {sentence.value(), word.value()}; }

void EmbeddingTable::put(const std::string& key, const Matrix& rows) {
  if (rows.cols != dim_ || rows.rows == 0) throw ShapeMismatch("embedding entry has the wrong width");
  if (!all_finite(rows)) throw InvalidInput("embedding entry is not finite");
  entries_[key] = rows;
}

const Matrix& EmbeddingTable::at(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw InvalidInput("no embedding for key '" + key + "'");
  return it->second;
}

std::vector<std::uint8_t> EmbeddingTable::serialize() const {
  io::ByteWriter w;
  w.raw(std::string_view(kTableMagic, 4));
  w.u32(kTableVersion);
  w.u32(static_cast<std::uint32_t>(dim_));
  w.u64(entries_.size());
  for (const auto& [key, m] : entries_) {
    w.str(key);
    w.u32(static_cast<std::uint32_t>(m.rows));
    for (double v : m.data) w.f32(static_cast<float>(v));
  }
  return w.bytes();
}

EmbeddingTable EmbeddingTable::parse(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  if (r.remaining() < 4 || r.raw(4) != std::string(kTableMagic, 4))
    throw ParseError(ParseError::Kind::kMagicMismatch, "not an embedding sidecar (bad magic)");
  if (r.u32() != kTableVersion) throw ParseError(ParseError::Kind::kVersionMismatch, "unsupported sidecar version");
  EmbeddingTable t(r.u32());
  if (t.dim_ == 0) throw ParseError(ParseError::Kind::kMalformed, "sidecar width is zero");
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string key = r.str();
    const std::uint32_t rows = r.u32();
    if (static_cast<std::uint64_t>(rows) * t.dim_ * 4 > r.remaining())
      throw ParseError(ParseError::Kind::kTruncated, "truncated sidecar entry");
    Matrix m(rows, t.dim_);
    for (double& v : m.data) v = r.f32();
    t.put(key, m);
  }
  if (!r.at_end()) throw ParseError(ParseError::Kind::kMalformed, "trailing bytes in sidecar");
  return t;
}

void EmbeddingTable::save(const std::filesystem::path& path) const { io::write_file(path, serialize()); }

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) { return parse(io::read_file(path)); }

SpeciesEmbedding TableSpeciesProvider::embed(std::string_view species_name) const {
  const std::string key = canonical_species_name(species_name);
  if (key.empty()) throw InvalidInput("species name must be non-empty");
  Matrix v = table_.at(key);
  Matrix row(1, v.cols, std::vector<double>(v.row(0), v.row(0) + v.cols));
  normalize_row(row.data.data(), row.cols);
  return {row};
}

TextFeatures TableTextProvider::features(std::string_view caption) const {
  const Matrix& m = table_.at(std::string(caption));
  if (m.rows < 2) throw InvalidInput("text sidecar entries need a sentence row and at least one word row");
  TextFeatures f;
  f.sentence = Matrix(1, m.cols, std::vector<double>(m.row(0), m.row(0) + m.cols));
  const std::size_t n = std::min<std::size_t>(m.rows - 1, kMaxWords);
  f.words = Matrix(n, m.cols, std::vector<double>(m.row(1), m.row(1) + n * m.cols));
  return f;
}

}  // namespace crossmo::embed
