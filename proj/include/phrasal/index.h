#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "phrasal/encoder.h"

namespace phrasal {

struct IndexEntry {
  std::uint32_t id = 0;
  std::vector<float> vector;
  std::string phrase_text;
  std::string context_text;  // full context sentence, tokens joined by spaces
  std::uint32_t s = 0;
  std::uint32_t e = 0;
  std::string doc_id;
};

struct SearchHit {
  std::uint32_t id = 0;
  double score = 0;  // inner product

  bool operator==(const SearchHit&) const = default;
};

enum class Metric { inner_product, cosine };
// f64 accumulates every score in 64-bit (used for verification).
enum class Precision { f32, f64 };

/// Exact (flat) maximum inner product index. Immutable once built.
class PhraseIndex {
 public:
  static constexpr int kFormatVersion = 1;

  PhraseIndex() = default;
  explicit PhraseIndex(std::uint32_t dim, Metric metric = Metric::inner_product)
      : dim_(dim), metric_(metric) {}

  std::uint32_t dim() const { return dim_; }
  Metric metric() const { return metric_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::span<const float> vector(std::uint32_t id) const {
    return {vectors_.data() + std::size_t(id) * dim_, dim_};
  }
  // Metadata only; the vector lives in vector(id).
  const IndexEntry& entry(std::uint32_t id) const { return entries_.at(id); }
  const std::vector<float>& raw_vectors() const { return vectors_; }

  /// Top-k by inner product per query row, ties by ascending id; fewer than k
  /// entries returns all of them. Throws std::invalid_argument on a
  /// dimension mismatch or k == 0.
  std::vector<std::vector<SearchHit>> search(const Matrix<float>& queries, std::size_t k,
                                             Precision precision = Precision::f32) const;
  std::vector<SearchHit> search(std::span<const float> query, std::size_t k,
                                Precision precision = Precision::f32) const;

  /// Writes manifest.json, vectors.bin and entries.jsonl into `dir`.
  void save(const std::filesystem::path& dir) const;
  /// Throws std::runtime_error on a version mismatch, size or checksum
  /// failure; nothing is returned from a partial read.
  static PhraseIndex load(const std::filesystem::path& dir);

  bool operator==(const PhraseIndex& other) const;

 private:
  friend class IndexBuilder;
  std::uint32_t dim_ = 0;
  Metric metric_ = Metric::inner_product;
  std::vector<float> vectors_;
  std::vector<IndexEntry> entries_;
};

/// Single-writer construction. Entries repeating an earlier
/// (context_text, s, e) are dropped; surviving ids are renumbered densely.
class IndexBuilder {
 public:
  explicit IndexBuilder(std::uint32_t dim, Metric metric = Metric::inner_product);

  // Returns false when the entry was a duplicate. Throws on dimension mismatch.
  bool add(IndexEntry entry);
  std::size_t size() const { return index_.size(); }
  PhraseIndex finish() &&;

 private:
  PhraseIndex index_;
  std::unordered_set<std::string> seen_;  // (context_text, s, e) keys
};

PhraseIndex build_index(std::uint32_t dim, std::span<const IndexEntry> entries,
                        Metric metric = Metric::inner_product);

}  // namespace phrasal
