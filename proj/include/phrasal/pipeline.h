#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "phrasal/encoder.h"
#include "phrasal/extract.h"
#include "phrasal/index.h"
#include "phrasal/segmenter.h"

namespace phrasal {

// A search hit joined with its index metadata.
struct ResolvedHit {
  std::uint32_t id = 0;
  double score = 0;
  std::string phrase;
  std::string context;
  std::uint32_t s = 0;
  std::uint32_t e = 0;
  std::string doc_id;
};

struct RetrievalResult {
  PhraseSpan query;
  std::string query_text;
  double seg_score = 0;
  std::vector<ResolvedHit> hits;  // at most k
};

/// Phrase vectors for `spans` of one encoded sentence, one row each.
Matrix<float> phrase_vectors(const Matrix<float>& hidden, std::span<const Span> spans,
                             const EncoderParams<float>& params);

/// Segments with cfg.query_threshold, encodes every span from one
/// dropout-free pass, searches top-k. Results come in span order. Throws
/// std::invalid_argument when the index dimension differs from the model's.
std::vector<RetrievalResult> retrieve(const Sentence& sentence, const PhraseModel& model,
                                      const PhraseIndex& index, const SegmentConfig& cfg, std::size_t k,
                                      Precision precision = Precision::f32);

// Shared wire form of retrieval results (used by `search` and `serve`).
nlohmann::ordered_json results_to_json(std::span<const RetrievalResult> results);

// ---- index construction from monolingual target text ----

enum class SegmentMode { learned, ngram };

struct IndexBuildOptions {
  SegmentMode mode = SegmentMode::learned;
  double threshold = 0.7;
  std::uint32_t max_len = 8;
  std::uint32_t ngram = 5;
  Metric metric = Metric::inner_product;
};

// Phrase occurrence in a context sentence.
struct PhraseOccurrence {
  Sentence context;
  Span span;
  std::string doc_id;
};

// Occurrence JSONL: {"context","s","e","doc_id"}.
std::vector<PhraseOccurrence> load_occurrences(const std::filesystem::path& path, TokenizeOptions tokenize = {});
void write_occurrences(const std::filesystem::path& path, std::span<const PhraseOccurrence> occurrences);

/// Encodes each occurrence in its context. Rows follow input order.
Matrix<float> encode_occurrences(std::span<const PhraseOccurrence> occurrences, const PhraseModel& model);

/// Segments every sentence and indexes the selected spans. doc_id is
/// "<language>:<sentence id>".
PhraseIndex build_phrase_index(std::span<const Sentence> sentences, const PhraseModel& model,
                               const IndexBuildOptions& opts);
PhraseIndex build_occurrence_index(std::span<const PhraseOccurrence> occurrences, const PhraseModel& model,
                                   Metric metric = Metric::inner_product);

// ---- gold-set evaluation ----

struct GoldItem {
  Sentence query_context;
  Span query;
  Sentence gold_context;  // canonical context_text is gold_context.text()
  Span gold;
};

/// Gold JSONL: {"query": {"text_context","s","e","lang"}, "gold": {"context","s","e"}}.
/// Contexts go through the same tokenizer as the model. Spans outside their
/// context throw std::runtime_error naming the line.
std::vector<GoldItem> load_gold(const std::filesystem::path& path, TokenizeOptions tokenize = {});
void write_gold(const std::filesystem::path& path, std::span<const GoldItem> gold);

struct EvalOptions {
  // Count string-equal phrases from any context as correct.
  bool lenient = false;
  Precision precision = Precision::f32;
};

struct EvalResult {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? double(correct) / double(total) : 0.0; }
};

/// Encodes each gold query span directly (no segmentation), searches k=1,
/// and counts matches on the (context, s, e) identity. Throws
/// std::invalid_argument on an empty gold set.
EvalResult eval_acc_at_1(std::span<const GoldItem> gold, const PhraseModel& model, const PhraseIndex& index,
                         const EvalOptions& opts = {});

/// Fresh index of gold targets followed by `distractors`, then eval_acc_at_1.
EvalResult eval_with_distractors(std::span<const GoldItem> gold, std::span<const PhraseOccurrence> distractors,
                                 const PhraseModel& model, const EvalOptions& opts = {});

// ---- prompts ----

struct PromptConfig {
  std::string source_lang = "German";
  std::string target_lang = "English";
  std::size_t max_context_chars = 100;
  std::size_t max_phrases = 8;
  std::string open_marker = "[[";
  std::string close_marker = "]]";
  // Wrap the selected source phrases inline in the final sentence.
  bool mark_source_phrases = false;
};

/// Context window around tokens [s, e]: whole words added alternately to the
/// shorter side while the unmarked text stays within max_chars code points.
/// Truncated sides get "..."; the phrase itself is always kept.
std::string truncate_context(std::span<const std::string> tokens, Span span, std::size_t max_chars,
                             const std::string& open_marker, const std::string& close_marker);

/// Results that feed the prompt: top seg-score distinct query texts with at
/// least one hit, at most cfg.max_phrases, ordered by span start.
std::vector<const RetrievalResult*> select_prompt_results(std::span<const RetrievalResult> results,
                                                          const PromptConfig& cfg);

std::string build_prompt(const Sentence& sentence, std::span<const RetrievalResult> results,
                         const PromptConfig& cfg);

}  // namespace phrasal
