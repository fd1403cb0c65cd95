#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "phrasal/aligner.h"
#include "phrasal/corpus.h"

namespace phrasal {

// Token span [s, e], 0-indexed, inclusive end.
struct Span {
  std::uint32_t s = 0;
  std::uint32_t e = 0;

  std::uint32_t length() const { return e - s + 1; }
  auto operator<=>(const Span&) const = default;
};

// A span inside a specific sentence (its context).
struct PhraseSpan {
  std::uint32_t sent_id = 0;
  Span span;

  auto operator<=>(const PhraseSpan&) const = default;
};

struct PhrasePair {
  std::uint64_t pair_id = 0;
  std::uint32_t sent_id = 0;  // SentencePair id; both spans live in that pair
  Span src;
  Span tgt;

  auto operator<=>(const PhrasePair&) const = default;
};

struct ExtractionConfig {
  std::uint32_t max_phrase_len = 8;
  // Absolute frequency above which a boundary token disqualifies a phrase.
  // 30000 matches a ~10M sentence-pair corpus; scale down for small data.
  std::uint64_t boundary_freq_threshold = 30000;
  bool drop_numeric_punct = true;
  // Require every token of both spans to carry at least one link.
  bool strict_all_aligned = false;
};

/// All consistent span pairs of length <= max_len: at least one link joins
/// them and no link leaves either span. pair_id counts from 0 within the
/// call; sent_id is taken from `pair.id`.
std::vector<PhrasePair> enumerate_consistent(const SentencePair& pair, const Alignment& align,
                                             std::uint32_t max_len, bool strict_all_aligned = false);

std::vector<PhrasePair> apply_filters(std::span<const PhrasePair> pairs,
                                      std::span<const SentencePair> corpus,
                                      const Vocabulary& vocab_x, const Vocabulary& vocab_y,
                                      const ExtractionConfig& cfg);

// Filters applied to one side; exposed for the segmenter's index path.
bool passes_filters(const Sentence& sentence, Span span, const Vocabulary& vocab,
                    const ExtractionConfig& cfg);

struct LabeledSpan {
  Span span;
  int label = 0;
};

/// Every distinct positive span (label 1) followed by an equal-size uniform
/// sample without replacement of the remaining spans of length <= max_len
/// (label 0). Fewer available negatives than positives returns them all.
std::vector<LabeledSpan> segmentation_examples(std::span<const Span> positives, std::uint32_t sentence_len,
                                               std::uint32_t max_len, std::mt19937_64& rng);

/// Extraction over a corpus: enumerate + filters, pair ids renumbered densely
/// in corpus order.
std::vector<PhrasePair> extract_corpus(std::span<const SentencePair> corpus,
                                       std::span<const Alignment> alignments,
                                       const ExtractionConfig& cfg);

// Phrase-pair JSONL: {"pair_id","sent_id","src":{"s","e","text"},"tgt":{...}}.
void write_phrase_pairs(const std::filesystem::path& path, std::span<const PhrasePair> pairs,
                        std::span<const SentencePair> corpus);
std::vector<PhrasePair> read_phrase_pairs(const std::filesystem::path& path,
                                          std::span<const SentencePair> corpus);

}  // namespace phrasal
