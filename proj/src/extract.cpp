#include "phrasal/extract.h"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace phrasal {

std::vector<PhrasePair> enumerate_consistent(const SentencePair& pair, const Alignment& align,
                                             std::uint32_t max_len, bool strict_all_aligned) {
  std::vector<PhrasePair> out;
  const std::uint32_t n = static_cast<std::uint32_t>(pair.x.size());
  const std::uint32_t m = static_cast<std::uint32_t>(pair.y.size());
  if (align.empty() || max_len == 0) return out;
  if (align.src_len() != n || align.tgt_len() != m) {
    throw std::invalid_argument("enumerate_consistent: alignment does not match sentence pair");
  }

  std::vector<std::vector<std::uint32_t>> src_links(n), tgt_links(m);
  for (const auto& [i, j] : align.links()) {
    src_links[i].push_back(j);
    tgt_links[j].push_back(i);
  }

  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = i; j < n && j - i < max_len; ++j) {
      if (strict_all_aligned && src_links[j].empty()) break;
      // Tightest target span covered by the source span.
      std::uint32_t u0 = m, v0 = 0;
      for (std::uint32_t k = i; k <= j; ++k) {
        for (auto t : src_links[k]) {
          u0 = std::min(u0, t);
          v0 = std::max(v0, t);
        }
      }
      if (u0 == m) continue;
      if (v0 - u0 + 1 > max_len) continue;
      bool consistent = true;
      for (std::uint32_t t = u0; t <= v0 && consistent; ++t) {
        for (auto s : tgt_links[t]) {
          if (s < i || s > j) {
            consistent = false;
            break;
          }
        }
      }
      if (!consistent) continue;
      if (strict_all_aligned) {
        bool all = true;
        for (std::uint32_t t = u0; t <= v0; ++t) all = all && !tgt_links[t].empty();
        bool src_all = true;
        for (std::uint32_t k = i; k <= j; ++k) src_all = src_all && !src_links[k].empty();
        if (all && src_all) out.push_back({0, pair.id, {i, j}, {u0, v0}});
        continue;
      }
      // Grow over unaligned target tokens on either side.
      for (std::uint32_t u = u0 + 1; u-- > 0;) {
        if (u < u0 && !tgt_links[u].empty()) break;
        for (std::uint32_t v = v0; v < m; ++v) {
          if (v > v0 && !tgt_links[v].empty()) break;
          if (v - u + 1 > max_len) break;
          out.push_back({0, pair.id, {i, j}, {u, v}});
        }
        if (v0 - u + 1 >= max_len) break;
      }
    }
  }
  std::sort(out.begin(), out.end(),
            [](const PhrasePair& a, const PhrasePair& b) { return std::tie(a.src, a.tgt) < std::tie(b.src, b.tgt); });
  for (std::size_t k = 0; k < out.size(); ++k) out[k].pair_id = k;
  return out;
}

bool passes_filters(const Sentence& sentence, Span span, const Vocabulary& vocab,
                    const ExtractionConfig& cfg) {
  const auto& first = sentence.tokens.at(span.s);
  const auto& last = sentence.tokens.at(span.e);
  if (vocab.frequency(first) > cfg.boundary_freq_threshold ||
      vocab.frequency(last) > cfg.boundary_freq_threshold) {
    return false;
  }
  if (cfg.drop_numeric_punct) {
    bool all = true;
    for (std::uint32_t t = span.s; t <= span.e && all; ++t) {
      all = is_numeric_or_punct_token(sentence.tokens[t]);
    }
    if (all) return false;
  }
  return true;
}

std::vector<PhrasePair> apply_filters(std::span<const PhrasePair> pairs,
                                      std::span<const SentencePair> corpus,
                                      const Vocabulary& vocab_x, const Vocabulary& vocab_y,
                                      const ExtractionConfig& cfg) {
  std::vector<PhrasePair> out;
  for (const auto& p : pairs) {
    const SentencePair& sp = corpus[p.sent_id];
    if (passes_filters(sp.x, p.src, vocab_x, cfg) && passes_filters(sp.y, p.tgt, vocab_y, cfg)) {
      out.push_back(p);
    }
  }
  return out;
}

std::vector<LabeledSpan> segmentation_examples(std::span<const Span> positives, std::uint32_t sentence_len,
                                               std::uint32_t max_len, std::mt19937_64& rng) {
  std::vector<Span> pos(positives.begin(), positives.end());
  std::sort(pos.begin(), pos.end());
  pos.erase(std::unique(pos.begin(), pos.end()), pos.end());

  std::vector<Span> neg;
  for (std::uint32_t s = 0; s < sentence_len; ++s) {
    for (std::uint32_t e = s; e < sentence_len && e - s < max_len; ++e) {
      if (!std::binary_search(pos.begin(), pos.end(), Span{s, e})) neg.push_back({s, e});
    }
  }
  // Partial Fisher-Yates keeps the draw uniform without replacement.
  const std::size_t take = std::min(pos.size(), neg.size());
  for (std::size_t k = 0; k < take; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, neg.size() - 1);
    std::swap(neg[k], neg[pick(rng)]);
  }
  neg.resize(take);

  std::vector<LabeledSpan> out;
  out.reserve(pos.size() + neg.size());
  for (const auto& s : pos) out.push_back({s, 1});
  for (const auto& s : neg) out.push_back({s, 0});
  return out;
}

std::vector<PhrasePair> extract_corpus(std::span<const SentencePair> corpus,
                                       std::span<const Alignment> alignments,
                                       const ExtractionConfig& cfg) {
  if (corpus.size() != alignments.size()) {
    throw std::invalid_argument("extract_corpus: corpus and alignment counts differ");
  }
  const Vocabulary vx = build_vocab(corpus, true);
  const Vocabulary vy = build_vocab(corpus, false);
  std::vector<PhrasePair> out;
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    if (corpus[k].id != k) throw std::invalid_argument("extract_corpus: pair ids must equal positions");
    auto pairs = enumerate_consistent(corpus[k], alignments[k], cfg.max_phrase_len, cfg.strict_all_aligned);
    auto kept = apply_filters(pairs, corpus, vx, vy, cfg);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  for (std::size_t k = 0; k < out.size(); ++k) out[k].pair_id = k;
  return out;
}

void write_phrase_pairs(const std::filesystem::path& path, std::span<const PhrasePair> pairs,
                        std::span<const SentencePair> corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& p : pairs) {
    const auto& sp = corpus[p.sent_id];
    nlohmann::ordered_json j;
    j["pair_id"] = p.pair_id;
    j["sent_id"] = p.sent_id;
    j["src"] = {{"s", p.src.s}, {"e", p.src.e}, {"text", sp.x.text(p.src.s, p.src.e)}};
    j["tgt"] = {{"s", p.tgt.s}, {"e", p.tgt.e}, {"text", sp.y.text(p.tgt.s, p.tgt.e)}};
    out << j.dump() << '\n';
  }
}

std::vector<PhrasePair> read_phrase_pairs(const std::filesystem::path& path,
                                          std::span<const SentencePair> corpus) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<PhrasePair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PhrasePair p;
      p.pair_id = j.at("pair_id").get<std::uint64_t>();
      p.sent_id = j.at("sent_id").get<std::uint32_t>();
      p.src = {j.at("src").at("s").get<std::uint32_t>(), j.at("src").at("e").get<std::uint32_t>()};
      p.tgt = {j.at("tgt").at("s").get<std::uint32_t>(), j.at("tgt").at("e").get<std::uint32_t>()};
      if (p.sent_id >= corpus.size()) throw std::out_of_range("sent_id beyond corpus");
      const auto& sp = corpus[p.sent_id];
      if (p.src.s > p.src.e || p.src.e >= sp.x.size() || p.tgt.s > p.tgt.e || p.tgt.e >= sp.y.size()) {
        throw std::out_of_range("span outside its sentence");
      }
      out.push_back(p);
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace phrasal
