#include "phrasal/corpus.h"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "phrasal/utf8.h"

namespace phrasal {

namespace utf8 {

std::vector<CodePoint> decode(std::string_view text) {
  std::vector<CodePoint> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b0 = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    char32_t cp = b0;
    if (b0 >= 0xF8) {
      len = 0;
    } else if (b0 >= 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    } else if (b0 >= 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if (b0 >= 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if (b0 >= 0x80) {
      len = 0;  // stray continuation byte
    }
    bool ok = len > 0 && i + len <= text.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto b = static_cast<unsigned char>(text[i + k]);
      if ((b & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!ok) {
      out.push_back({0xFFFD, i, 1});
      ++i;
      continue;
    }
    out.push_back({cp, i, len});
    i += len;
  }
  return out;
}

std::size_t length(std::string_view text) {
  std::size_t n = 0;
  for (char c : text) {
    if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) ++n;
  }
  return n;
}

void append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

}  // namespace utf8

std::string Sentence::text(std::size_t s, std::size_t e) const {
  std::string out;
  for (std::size_t t = s; t <= e && t < tokens.size(); ++t) {
    if (t > s) out.push_back(' ');
    out += tokens[t];
  }
  return out;
}

std::string Sentence::text() const {
  return tokens.empty() ? std::string() : text(0, tokens.size() - 1);
}

namespace {

bool is_space(char32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v' ||
         cp == 0xA0 || cp == 0x3000 || (cp >= 0x2000 && cp <= 0x200A);
}

bool is_apostrophe(char32_t cp) { return cp == '\'' || cp == 0x2019; }

bool is_ascii_letter(char32_t cp) { return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z'); }

using Cps = std::vector<utf8::CodePoint>;

// Apostrophe followed by one or two letters, nothing else.
bool is_clitic(const Cps& cps, std::size_t begin, std::size_t end) {
  const std::size_t n = end - begin;
  if (n < 2 || n > 3 || !is_apostrophe(cps[begin].value)) return false;
  for (std::size_t k = begin + 1; k < end; ++k) {
    if (!is_ascii_letter(cps[k].value)) return false;
  }
  return true;
}

char32_t lower(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 32;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
  return cp;
}

std::string slice(std::string_view chunk, const Cps& cps, std::size_t begin, std::size_t end,
                  bool lowercase) {
  if (!lowercase) {
    const std::size_t from = cps[begin].offset;
    const std::size_t to = cps[end - 1].offset + cps[end - 1].length;
    return std::string(chunk.substr(from, to - from));
  }
  std::string out;
  for (std::size_t k = begin; k < end; ++k) utf8::append(out, lower(cps[k].value));
  return out;
}

void split_chunk(std::string_view chunk, bool lowercase, std::vector<std::string>& out) {
  const Cps cps = utf8::decode(chunk);
  std::size_t begin = 0;
  std::size_t end = cps.size();

  std::size_t core_end = end;
  while (core_end > begin && is_punct_codepoint(cps[core_end - 1].value)) --core_end;

  std::size_t core_begin = begin;
  while (core_begin < core_end && is_punct_codepoint(cps[core_begin].value)) {
    if (is_clitic(cps, core_begin, core_end)) break;
    out.push_back(slice(chunk, cps, core_begin, core_begin + 1, lowercase));
    ++core_begin;
  }

  if (core_begin < core_end) {
    // "minute's" -> "minute" "'s"
    std::size_t split = core_end;
    for (std::size_t k = core_end; k-- > core_begin + 1;) {
      if (is_apostrophe(cps[k].value)) {
        if (is_clitic(cps, k, core_end)) split = k;
        break;
      }
    }
    out.push_back(slice(chunk, cps, core_begin, split, lowercase));
    if (split < core_end) out.push_back(slice(chunk, cps, split, core_end, lowercase));
  }

  for (std::size_t k = core_end; k < end; ++k) {
    out.push_back(slice(chunk, cps, k, k + 1, lowercase));
  }
}

}  // namespace

bool is_punct_codepoint(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) || (cp >= 0x5B && cp <= 0x60) ||
           (cp >= 0x7B && cp <= 0x7E);
  }
  switch (cp) {
    case 0xA1: case 0xA7: case 0xAB: case 0xB6: case 0xB7: case 0xBB: case 0xBF:
    case 0x2010: case 0x2011: case 0x2012: case 0x2013: case 0x2014: case 0x2015:
    case 0x2018: case 0x2019: case 0x201A: case 0x201C: case 0x201D: case 0x201E:
    case 0x2026: case 0x2039: case 0x203A: case 0x3001: case 0x3002: case 0xFF0C:
    case 0xFF0E: case 0xFF01: case 0xFF1F:
      return true;
    default:
      return false;
  }
}

bool is_numeric_or_punct_token(std::string_view token) {
  if (token.empty()) return false;
  for (const auto& cp : utf8::decode(token)) {
    const bool digit = cp.value >= '0' && cp.value <= '9';
    if (!digit && !is_punct_codepoint(cp.value)) return false;
  }
  return true;
}

std::vector<std::string> tokenize(std::string_view text, TokenizeOptions opts) {
  std::vector<std::string> out;
  const Cps cps = utf8::decode(text);
  std::size_t k = 0;
  while (k < cps.size()) {
    while (k < cps.size() && is_space(cps[k].value)) ++k;
    if (k == cps.size()) break;
    std::size_t j = k;
    while (j < cps.size() && !is_space(cps[j].value)) ++j;
    const std::size_t from = cps[k].offset;
    const std::size_t to = cps[j - 1].offset + cps[j - 1].length;
    split_chunk(text.substr(from, to - from), opts.lowercase, out);
    k = j;
  }
  return out;
}

Sentence make_sentence(std::string_view text, std::string language, std::uint32_t id,
                       TokenizeOptions opts) {
  return Sentence{tokenize(text, opts), std::move(language), id};
}

bool truncate_sentence(Sentence& sentence, std::size_t max_tokens) {
  if (sentence.tokens.size() <= max_tokens) return false;
  sentence.tokens.resize(max_tokens);
  return true;
}

std::uint32_t Vocabulary::intern(std::string_view token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const auto id = static_cast<std::uint32_t>(tokens_.size());
  index_.emplace(std::string(token), id);
  tokens_.emplace_back(token);
  freqs_.push_back(0);
  return id;
}

std::uint32_t Vocabulary::add(std::string_view token, std::uint64_t count) {
  const auto id = intern(token);
  freqs_[id] += count;
  total_ += count;
  return id;
}

bool Vocabulary::contains(std::string_view token) const { return index_.find(token) != index_.end(); }

std::uint32_t Vocabulary::id(std::string_view token, std::uint32_t fallback) const {
  auto it = index_.find(token);
  return it == index_.end() ? fallback : it->second;
}

std::uint64_t Vocabulary::frequency(std::string_view token) const {
  auto it = index_.find(token);
  return it == index_.end() ? 0 : freqs_[it->second];
}

void Vocabulary::merge(const Vocabulary& other) {
  for (std::size_t k = 0; k < other.tokens_.size(); ++k) add(other.tokens_[k], other.freqs_[k]);
}

Vocabulary build_vocab(std::span<const Sentence> sentences) {
  Vocabulary vocab;
  for (const auto& s : sentences) {
    for (const auto& t : s.tokens) vocab.add(t);
  }
  return vocab;
}

Vocabulary build_vocab(std::span<const SentencePair> pairs, bool source_side) {
  Vocabulary vocab;
  for (const auto& p : pairs) {
    for (const auto& t : (source_side ? p.x : p.y).tokens) vocab.add(t);
  }
  return vocab;
}

namespace {

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return in;
}

void check_malformed(const std::filesystem::path& path, std::size_t lines,
                     const std::vector<std::size_t>& bad, const LoadOptions& opts) {
  if (lines < opts.min_lines_for_ratio || lines == 0) return;
  const double frac = static_cast<double>(bad.size()) / static_cast<double>(lines);
  if (frac <= opts.max_malformed_fraction) return;
  std::ostringstream msg;
  msg << path.string() << ": " << bad.size() << " of " << lines << " lines malformed (lines";
  for (std::size_t k = 0; k < bad.size() && k < 20; ++k) msg << ' ' << bad[k];
  if (bad.size() > 20) msg << " ...";
  msg << ')';
  throw std::runtime_error(msg.str());
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](char c) { return c == ' ' || c == '\t'; });
}

}  // namespace

ParallelCorpus load_parallel_jsonl(const std::filesystem::path& path, const LoadOptions& opts) {
  auto in = open_or_throw(path);
  ParallelCorpus corpus;
  std::string line;
  std::size_t lineno = 0;
  std::size_t nonblank = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (blank(line)) continue;
    ++nonblank;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    bool ok = j.is_object();
    for (const char* key : {"src", "tgt", "src_lang", "tgt_lang"}) {
      ok = ok && j.contains(key) && j[key].is_string();
    }
    SentencePair pair;
    if (ok) {
      const auto id = static_cast<std::uint32_t>(corpus.pairs.size());
      pair.id = id;
      pair.x = make_sentence(j["src"].get<std::string>(), j["src_lang"].get<std::string>(), id,
                             opts.tokenize);
      pair.y = make_sentence(j["tgt"].get<std::string>(), j["tgt_lang"].get<std::string>(), id,
                             opts.tokenize);
      ok = !pair.x.empty() && !pair.y.empty() && pair.x.language != pair.y.language;
    }
    if (!ok) {
      ++corpus.skipped;
      corpus.skipped_lines.push_back(lineno);
      continue;
    }
    const bool tx = truncate_sentence(pair.x, opts.max_tokens);
    const bool ty = truncate_sentence(pair.y, opts.max_tokens);
    if (tx || ty) ++corpus.truncated;
    corpus.pairs.push_back(std::move(pair));
  }
  check_malformed(path, nonblank, corpus.skipped_lines, opts);
  return corpus;
}

ParallelCorpus load_parallel_two_file(const std::filesystem::path& prefix, const std::string& l1,
                                      const std::string& l2, const LoadOptions& opts) {
  const std::filesystem::path px = prefix.string() + "." + l1;
  const std::filesystem::path py = prefix.string() + "." + l2;
  if (l1 == l2) throw std::runtime_error("two-file corpus needs distinct languages");
  auto in_x = open_or_throw(px);
  auto in_y = open_or_throw(py);
  ParallelCorpus corpus;
  std::string lx, ly;
  std::size_t lineno = 0;
  while (true) {
    const bool gx = static_cast<bool>(std::getline(in_x, lx));
    const bool gy = static_cast<bool>(std::getline(in_y, ly));
    if (!gx && !gy) break;
    if (gx != gy) {
      throw std::runtime_error("line count mismatch between " + px.string() + " and " +
                               py.string());
    }
    ++lineno;
    strip_cr(lx);
    strip_cr(ly);
    SentencePair pair;
    const auto id = static_cast<std::uint32_t>(corpus.pairs.size());
    pair.id = id;
    pair.x = make_sentence(lx, l1, id, opts.tokenize);
    pair.y = make_sentence(ly, l2, id, opts.tokenize);
    if (pair.x.empty() || pair.y.empty()) {
      ++corpus.skipped;
      corpus.skipped_lines.push_back(lineno);
      continue;
    }
    const bool tx = truncate_sentence(pair.x, opts.max_tokens);
    const bool ty = truncate_sentence(pair.y, opts.max_tokens);
    if (tx || ty) ++corpus.truncated;
    corpus.pairs.push_back(std::move(pair));
  }
  check_malformed(px, lineno, corpus.skipped_lines, opts);
  return corpus;
}

MonolingualCorpus load_monolingual(const std::filesystem::path& path, const std::string& language,
                                   const LoadOptions& opts) {
  auto in = open_or_throw(path);
  MonolingualCorpus corpus;
  std::string line;
  std::uint32_t lineno = 0;
  while (std::getline(in, line)) {
    strip_cr(line);
    Sentence s = make_sentence(line, language, lineno++, opts.tokenize);
    if (s.empty()) {
      ++corpus.skipped;
      continue;
    }
    if (truncate_sentence(s, opts.max_tokens)) ++corpus.truncated;
    corpus.sentences.push_back(std::move(s));
  }
  return corpus;
}

}  // namespace phrasal
