#include "phrasal/segmenter.h"

#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace phrasal {

void SegmentConfig::validate() const {
  for (double t : {index_threshold, query_threshold}) {
    if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("segmentation thresholds must lie in (0, 1)");
  }
  if (max_len == 0) throw std::invalid_argument("segmentation max_len must be >= 1");
}

std::vector<ScoredSpan> segment(const Matrix<float>& hidden, const EncoderParams<float>& params,
                                double threshold, std::uint32_t max_len) {
  std::vector<ScoredSpan> out;
  const auto n = static_cast<std::uint32_t>(hidden.rows());
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = i; j < n && j - i < max_len; ++j) {
      const double p = span_prob(hidden, i, j, params);
      if (p > threshold) out.push_back({{i, j}, p});
    }
  }
  return out;
}

std::vector<ScoredSpan> segment(const Sentence& sentence, const PhraseModel& model, double threshold,
                                std::uint32_t max_len) {
  if (sentence.empty()) return {};
  return segment(model.encode(sentence), model.params, threshold, max_len);
}

std::vector<ScoredSpan> ngram_spans(std::uint32_t sentence_len, std::uint32_t n) {
  std::vector<ScoredSpan> out;
  if (sentence_len == 0 || n == 0) return out;
  if (sentence_len <= n) {
    out.push_back({{0, sentence_len - 1}, 1.0});
    return out;
  }
  for (std::uint32_t i = 0; i + n <= sentence_len; ++i) out.push_back({{i, i + n - 1}, 1.0});
  return out;
}

void write_segment_line(std::ostream& out, const Sentence& sentence, const ScoredSpan& span) {
  nlohmann::ordered_json j{{"sent_id", sentence.id},
                           {"s", span.span.s},
                           {"e", span.span.e},
                           {"score", span.score},
                           {"text", sentence.text(span.span.s, span.span.e)}};
  out << j.dump() << '\n';
}

}  // namespace phrasal
