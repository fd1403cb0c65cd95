#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "phrasal/corpus.h"

namespace phrasal {

using Link = std::pair<std::uint32_t, std::uint32_t>;  // (source index, target index)

/// Word-level links between a source and a target sentence. Links are kept
/// sorted source-major and unique.
class Alignment {
 public:
  Alignment() = default;
  Alignment(std::uint32_t src_len, std::uint32_t tgt_len) : src_len_(src_len), tgt_len_(tgt_len) {}
  // Throws std::invalid_argument on out-of-range links; duplicates are merged.
  Alignment(std::uint32_t src_len, std::uint32_t tgt_len, std::vector<Link> links);

  std::uint32_t src_len() const { return src_len_; }
  std::uint32_t tgt_len() const { return tgt_len_; }
  const std::vector<Link>& links() const { return links_; }
  std::size_t size() const { return links_.size(); }
  bool empty() const { return links_.empty(); }
  bool contains(std::uint32_t i, std::uint32_t j) const;

  bool operator==(const Alignment&) const = default;

 private:
  std::uint32_t src_len_ = 0;
  std::uint32_t tgt_len_ = 0;
  std::vector<Link> links_;
};

// Pharaoh format: "0-0 1-2 2-1".
std::string to_pharaoh(const Alignment& a);
std::vector<Link> parse_pharaoh(std::string_view line);
void write_pharaoh(const std::filesystem::path& path, std::span<const Alignment> alignments);
/// Reads one link list per line and binds it to the lengths of `pairs`.
std::vector<Alignment> read_pharaoh(const std::filesystem::path& path,
                                    std::span<const SentencePair> pairs);

struct EMConfig {
  int iterations = 5;
  double epsilon = 1e-6;  // additive smoothing; also the floor for unseen (f, e)
  bool use_null = true;
};

/// t(f | e) stored sparsely per e-row. Row 0 of the source vocabulary is the
/// NULL token.
class TranslationTable {
 public:
  static constexpr std::uint32_t kNull = 0;
  static constexpr std::string_view kNullToken = "<NULL>";

  TranslationTable() = default;

  const Vocabulary& source_vocab() const { return e_vocab_; }
  const Vocabulary& target_vocab() const { return f_vocab_; }
  bool has_null() const { return use_null_; }
  double floor() const { return floor_; }

  // Unknown ids or unseen pairs return floor().
  double prob(std::uint32_t e, std::uint32_t f) const;
  double prob(std::string_view e, std::string_view f) const;
  const std::unordered_map<std::uint32_t, double>& row(std::uint32_t e) const { return rows_.at(e); }
  std::size_t rows() const { return rows_.size(); }

  // JSONL rows {"e","f","p"}, e-rows in id order, f entries sorted by token.
  void dump_jsonl(std::ostream& out) const;

 private:
  friend struct Model1Trainer;
  Vocabulary e_vocab_;
  Vocabulary f_vocab_;
  std::vector<std::unordered_map<std::uint32_t, double>> rows_;
  double floor_ = 1e-12;
  bool use_null_ = true;
};

struct Model1Result {
  TranslationTable table;
  // Corpus log-likelihood under the initial table (index 0) and after each
  // EM iteration (index k).
  std::vector<double> log_likelihood;
  std::size_t skipped = 0;
};

/// IBM Model 1 EM where x generates y (reverse=false) or y generates x.
Model1Result train_model1(std::span<const SentencePair> corpus, const EMConfig& cfg,
                          bool reverse = false);

/// Corpus log-likelihood of `corpus` under `table`, recomputed from scratch.
double model1_log_likelihood(std::span<const SentencePair> corpus, const TranslationTable& table,
                             bool reverse = false);

enum class Direction { fwd, rev };

/// fwd: every y_j links to argmax_i t(y_j | x_i) with `table` trained x->y.
/// rev: every x_i links to argmax_j t(x_i | y_j) with `table` trained y->x.
/// NULL wins only when strictly better; ties go to the smallest index.
Alignment viterbi_align(const SentencePair& pair, const TranslationTable& table, Direction dir);

enum class Heuristic { intersection, union_, grow_diag_final_and };

Heuristic parse_heuristic(std::string_view name);
std::string_view heuristic_name(Heuristic h);

Alignment symmetrize(const Alignment& fwd, const Alignment& rev, Heuristic h);

struct CorpusAlignment {
  std::vector<Alignment> alignments;
  std::vector<double> fwd_log_likelihood;
  std::vector<double> rev_log_likelihood;
  TranslationTable fwd_table;
};

/// Trains both directions, Viterbi-aligns every pair and symmetrizes.
CorpusAlignment align_corpus(std::span<const SentencePair> corpus, const EMConfig& cfg,
                             Heuristic h = Heuristic::grow_diag_final_and);

}  // namespace phrasal
