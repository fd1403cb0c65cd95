#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "phrasal/encoder.h"
#include "phrasal/extract.h"

namespace phrasal {

struct SegmentConfig {
  double index_threshold = 0.7;
  double query_threshold = 0.9;
  std::uint32_t max_len = 8;

  void validate() const;  // thresholds in (0, 1), max_len >= 1
};

struct ScoredSpan {
  Span span;
  double score = 0;
};

/// Every span shorter than max_len tokens scored from one dropout-free pass;
/// spans with score > threshold, sorted by (start, end). Overlaps are kept.
std::vector<ScoredSpan> segment(const Matrix<float>& hidden, const EncoderParams<float>& params,
                                double threshold, std::uint32_t max_len);
std::vector<ScoredSpan> segment(const Sentence& sentence, const PhraseModel& model, double threshold,
                                std::uint32_t max_len);

// All n-grams of exactly `n` tokens (or the whole sentence when shorter).
std::vector<ScoredSpan> ngram_spans(std::uint32_t sentence_len, std::uint32_t n = 5);

// Segment dump JSONL: {"sent_id","s","e","score","text"}.
void write_segment_line(std::ostream& out, const Sentence& sentence, const ScoredSpan& span);

}  // namespace phrasal
