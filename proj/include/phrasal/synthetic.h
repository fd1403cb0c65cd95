#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "phrasal/aligner.h"
#include "phrasal/pipeline.h"

namespace phrasal {

/// Cipher bilingual corpus with known word alignment. Each side has 200
/// word types. Sentences are sequences of units:
///   word w            -> c(w)               (one-to-one cipher)
///   modifier m, word w -> c(w) c(m)          (local swap)
///   head h_k, particle p_k -> M_k            (2 -> 1 merge)
struct SyntheticConfig {
  std::uint64_t seed = 7;
  std::size_t train_pairs = 2000;
  std::size_t heldout_pairs = 200;
  std::size_t mono_sentences = 3000;
  std::size_t distractors = 10000;
  std::uint32_t min_units = 6;
  std::uint32_t max_units = 14;
  double p_modifier = 0.10;
  double p_collocation = 0.05;
  std::string source_lang = "src";
  std::string target_lang = "tgt";
};

struct SyntheticCorpus {
  std::vector<SentencePair> train;
  std::vector<Alignment> train_alignment;
  std::vector<SentencePair> heldout;
  std::vector<Alignment> heldout_alignment;
  std::vector<Sentence> mono;  // target language, disjoint from held-out targets
  // One item per held-out pair: a 2-4 token source span consistent under the
  // true alignment whose target span has at least 2 tokens.
  std::vector<GoldItem> gold;
  // Random 1-4 token spans of `mono`, distinct occurrences.
  std::vector<PhraseOccurrence> distractors;
  std::vector<std::string> source_words;
  std::vector<std::string> target_words;
};

SyntheticCorpus make_synthetic(const SyntheticConfig& cfg);

/// Writes train.jsonl, heldout.jsonl, train.true.pharaoh, heldout.true.pharaoh,
/// mono.<tgt>.txt, gold.jsonl and distractors.jsonl into `dir`.
void write_synthetic(const std::filesystem::path& dir, const SyntheticCorpus& corpus);

}  // namespace phrasal
