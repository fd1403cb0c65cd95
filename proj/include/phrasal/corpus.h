#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace phrasal {

// Longest sentence admitted to training or indexing; loaders truncate.
inline constexpr std::size_t kMaxSentenceTokens = 128;

struct Sentence {
  std::vector<std::string> tokens;
  std::string language;
  std::uint32_t id = 0;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  // Tokens [s, e] joined by single spaces (inclusive end).
  std::string text(std::size_t s, std::size_t e) const;
  std::string text() const;
};

struct SentencePair {
  Sentence x;
  Sentence y;
  std::uint32_t id = 0;
};

struct TokenizeOptions {
  bool lowercase = false;
};

/// Whitespace split, then leading/trailing punctuation peeled into separate
/// tokens and apostrophe clitics ('s, 're, n't style suffixes) split off.
/// Lowercasing (ASCII and Latin-1 letters) is applied after splitting.
std::vector<std::string> tokenize(std::string_view text, TokenizeOptions opts = {});
Sentence make_sentence(std::string_view text, std::string language,
                       std::uint32_t id, TokenizeOptions opts = {});

// Character classes shared with the extraction filters.
bool is_punct_codepoint(char32_t cp);
bool is_numeric_or_punct_token(std::string_view token);

/// Truncates to kMaxSentenceTokens; returns true if anything was dropped.
bool truncate_sentence(Sentence& sentence, std::size_t max_tokens = kMaxSentenceTokens);

class Vocabulary {
 public:
  Vocabulary() = default;

  // Adds one occurrence and returns the id.
  std::uint32_t add(std::string_view token, std::uint64_t count = 1);
  // Registers a token without counting it.
  std::uint32_t intern(std::string_view token);

  bool contains(std::string_view token) const;
  // Returns `fallback` for unknown tokens.
  std::uint32_t id(std::string_view token, std::uint32_t fallback) const;
  const std::string& token(std::uint32_t id) const { return tokens_.at(id); }
  std::uint64_t frequency(std::uint32_t id) const { return freqs_.at(id); }
  std::uint64_t frequency(std::string_view token) const;
  std::uint64_t total() const { return total_; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Adds the counts of `other` (associative; ids of *this are kept).
  void merge(const Vocabulary& other);

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const {
      return std::hash<std::string_view>{}(s);
    }
  };
  std::unordered_map<std::string, std::uint32_t, Hash, std::equal_to<>> index_;
  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> freqs_;
  std::uint64_t total_ = 0;
};

Vocabulary build_vocab(std::span<const Sentence> sentences);
Vocabulary build_vocab(std::span<const SentencePair> pairs, bool source_side);

enum class BitextFormat { jsonl, two_file };

struct LoadOptions {
  TokenizeOptions tokenize;
  // Fatal when the malformed fraction exceeds this and the file has at least
  // `min_lines_for_ratio` non-empty lines.
  double max_malformed_fraction = 0.10;
  std::size_t min_lines_for_ratio = 20;
  std::size_t max_tokens = kMaxSentenceTokens;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  std::size_t skipped = 0;
  std::vector<std::size_t> skipped_lines;  // 1-based
  std::size_t truncated = 0;
};

/// JSONL with fields src, tgt, src_lang, tgt_lang (optional id). Pair ids
/// follow file order 0,1,2,... regardless of the optional id field.
ParallelCorpus load_parallel_jsonl(const std::filesystem::path& path,
                                   const LoadOptions& opts = {});
/// Moses style `<prefix>.<l1>` / `<prefix>.<l2>`, line aligned.
ParallelCorpus load_parallel_two_file(const std::filesystem::path& prefix,
                                      const std::string& l1, const std::string& l2,
                                      const LoadOptions& opts = {});

struct MonolingualCorpus {
  std::vector<Sentence> sentences;
  std::size_t skipped = 0;
  std::size_t truncated = 0;
};

/// One sentence per line; empty lines are skipped (ids still follow line numbers).
MonolingualCorpus load_monolingual(const std::filesystem::path& path, const std::string& language,
                                   const LoadOptions& opts = {});

}  // namespace phrasal
