#include "phrasal/synthetic.h"

#include <fstream>
#include <random>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

namespace phrasal {

namespace {

constexpr std::size_t kCollocations = 10;
constexpr std::size_t kModifiers = 20;
constexpr std::size_t kRegular = 170;  // the first kCollocations double as collocation heads
constexpr std::size_t kSourceTypes = kCollocations + kModifiers + kRegular;

std::vector<std::string> make_words(std::size_t n, std::string_view consonants, std::mt19937_64& rng) {
  static constexpr std::string_view kVowels = "aeiou";
  std::uniform_int_distribution<std::size_t> cons(0, consonants.size() - 1);
  std::uniform_int_distribution<std::size_t> vow(0, kVowels.size() - 1);
  std::uniform_int_distribution<int> syllables(2, 3);
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (out.size() < n) {
    std::string w;
    for (int k = syllables(rng); k > 0; --k) {
      w.push_back(consonants[cons(rng)]);
      w.push_back(kVowels[vow(rng)]);
    }
    if (seen.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

// Source ids: [0, kRegular) regular words (the first kCollocations are also
// heads), then modifiers, then particles. Target ids: ciphers of the 190
// regular and modifier words, then the merge tokens.
struct Lexicon {
  std::vector<std::string> src;
  std::vector<std::string> tgt;
  std::size_t modifier(std::size_t k) const { return kRegular + k; }
  std::size_t particle(std::size_t k) const { return kRegular + kModifiers + k; }
  std::size_t merged(std::size_t k) const { return kRegular + kModifiers + k; }
};

struct Generated {
  std::vector<std::string> x, y;
  std::vector<Link> links;
};

Generated generate(const Lexicon& lex, const SyntheticConfig& cfg, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::uint32_t> units(cfg.min_units, cfg.max_units);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> regular(0, kRegular - 1);
  std::uniform_int_distribution<std::size_t> modifier(0, kModifiers - 1);
  std::uniform_int_distribution<std::size_t> colloc(0, kCollocations - 1);
  Generated g;
  for (std::uint32_t n = units(rng); n > 0; --n) {
    const auto i = static_cast<std::uint32_t>(g.x.size());
    const auto j = static_cast<std::uint32_t>(g.y.size());
    const double r = u(rng);
    if (r < cfg.p_collocation) {
      const std::size_t k = colloc(rng);
      g.x.push_back(lex.src[k]);
      g.x.push_back(lex.src[lex.particle(k)]);
      g.y.push_back(lex.tgt[lex.merged(k)]);
      g.links.push_back({i, j});
      g.links.push_back({i + 1, j});
    } else if (r < cfg.p_collocation + cfg.p_modifier) {
      const std::size_t m = lex.modifier(modifier(rng));
      const std::size_t w = regular(rng);
      g.x.push_back(lex.src[m]);
      g.x.push_back(lex.src[w]);
      g.y.push_back(lex.tgt[w]);
      g.y.push_back(lex.tgt[m]);
      g.links.push_back({i, j + 1});
      g.links.push_back({i + 1, j});
    } else {
      const std::size_t w = regular(rng);
      g.x.push_back(lex.src[w]);
      g.y.push_back(lex.tgt[w]);
      g.links.push_back({i, j});
    }
  }
  return g;
}

Sentence sentence(std::vector<std::string> tokens, const std::string& lang, std::uint32_t id) {
  Sentence s;
  s.tokens = std::move(tokens);
  s.language = lang;
  s.id = id;
  return s;
}

void add_pair(std::vector<SentencePair>& pairs, std::vector<Alignment>& aligns, Generated g,
              const SyntheticConfig& cfg) {
  const auto id = static_cast<std::uint32_t>(pairs.size());
  const auto xl = static_cast<std::uint32_t>(g.x.size());
  const auto yl = static_cast<std::uint32_t>(g.y.size());
  pairs.push_back({sentence(std::move(g.x), cfg.source_lang, id), sentence(std::move(g.y), cfg.target_lang, id), id});
  aligns.emplace_back(xl, yl, std::move(g.links));
}

// Source spans of 2-4 tokens consistent under `a` with a target span of >= 2 tokens.
std::vector<std::pair<Span, Span>> gold_candidates(const Alignment& a) {
  std::vector<std::pair<Span, Span>> out;
  for (std::uint32_t s = 0; s < a.src_len(); ++s) {
    for (std::uint32_t e = s + 1; e < a.src_len() && e - s < 4; ++e) {
      std::uint32_t lo = UINT32_MAX, hi = 0;
      for (const auto& [i, j] : a.links()) {
        if (i >= s && i <= e) {
          lo = std::min(lo, j);
          hi = std::max(hi, j);
        }
      }
      if (lo == UINT32_MAX || hi - lo < 1) continue;
      bool ok = true;
      for (const auto& [i, j] : a.links()) {
        if (j >= lo && j <= hi && (i < s || i > e)) ok = false;
      }
      if (ok) out.push_back({{s, e}, {lo, hi}});
    }
  }
  return out;
}

}  // namespace

SyntheticCorpus make_synthetic(const SyntheticConfig& cfg) {
  if (cfg.min_units == 0 || cfg.min_units > cfg.max_units) throw std::invalid_argument("bad unit range");
  if (cfg.p_modifier < 0 || cfg.p_collocation < 0 || cfg.p_modifier + cfg.p_collocation > 1) {
    throw std::invalid_argument("unit probabilities must be non-negative and sum to at most 1");
  }
  std::mt19937_64 rng(cfg.seed);
  Lexicon lex;
  lex.src = make_words(kSourceTypes, "bdfgklmnprst", rng);
  lex.tgt = make_words(kSourceTypes, "chjqvwxyz", rng);

  SyntheticCorpus out;
  out.source_words = lex.src;
  out.target_words = lex.tgt;
  for (std::size_t k = 0; k < cfg.train_pairs; ++k) {
    add_pair(out.train, out.train_alignment, generate(lex, cfg, rng), cfg);
  }
  std::uniform_int_distribution<std::size_t> any;
  while (out.heldout.size() < cfg.heldout_pairs) {
    Generated g = generate(lex, cfg, rng);
    const Alignment a(static_cast<std::uint32_t>(g.x.size()), static_cast<std::uint32_t>(g.y.size()), g.links);
    const auto cands = gold_candidates(a);
    if (cands.empty()) continue;
    const auto& [q, t] = cands[any(rng) % cands.size()];
    add_pair(out.heldout, out.heldout_alignment, std::move(g), cfg);
    const SentencePair& p = out.heldout.back();
    out.gold.push_back({p.x, q, p.y, t});
  }

  std::unordered_set<std::string> heldout_targets;
  for (const auto& p : out.heldout) heldout_targets.insert(p.y.text());
  while (out.mono.size() < cfg.mono_sentences) {
    Generated g = generate(lex, cfg, rng);
    Sentence s = sentence(std::move(g.y), cfg.target_lang, static_cast<std::uint32_t>(out.mono.size()));
    if (heldout_targets.contains(s.text())) continue;
    out.mono.push_back(std::move(s));
  }

  if (cfg.distractors > 0 && out.mono.empty()) throw std::invalid_argument("distractors need mono sentences");
  std::set<std::pair<std::uint32_t, Span>> used;
  std::uniform_int_distribution<std::uint32_t> len(1, 4);
  std::size_t attempts = 0;
  while (out.distractors.size() < cfg.distractors) {
    if (++attempts > cfg.distractors * 100) throw std::runtime_error("cannot draw enough distinct distractors");
    const Sentence& s = out.mono[any(rng) % out.mono.size()];
    const std::uint32_t n = static_cast<std::uint32_t>(s.size());
    const std::uint32_t l = std::min(len(rng), n);
    const std::uint32_t start = static_cast<std::uint32_t>(any(rng) % (n - l + 1));
    const Span sp{start, start + l - 1};
    if (!used.insert({s.id, sp}).second) continue;
    out.distractors.push_back({s, sp, cfg.target_lang + ":mono:" + std::to_string(s.id)});
  }
  return out;
}

void write_synthetic(const std::filesystem::path& dir, const SyntheticCorpus& corpus) {
  std::filesystem::create_directories(dir);
  auto write_pairs = [&](const std::string& name, const std::vector<SentencePair>& pairs) {
    std::ofstream out(dir / name, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    for (const auto& p : pairs) {
      nlohmann::ordered_json j{{"src", p.x.text()},
                               {"tgt", p.y.text()},
                               {"src_lang", p.x.language},
                               {"tgt_lang", p.y.language},
                               {"id", p.id}};
      out << j.dump() << '\n';
    }
  };
  write_pairs("train.jsonl", corpus.train);
  write_pairs("heldout.jsonl", corpus.heldout);
  write_pharaoh(dir / "train.true.pharaoh", corpus.train_alignment);
  write_pharaoh(dir / "heldout.true.pharaoh", corpus.heldout_alignment);
  const std::string lang = corpus.mono.empty() ? "tgt" : corpus.mono.front().language;
  {
    std::ofstream out(dir / ("mono." + lang + ".txt"), std::ios::trunc);
    for (const auto& s : corpus.mono) out << s.text() << '\n';
  }
  write_gold(dir / "gold.jsonl", corpus.gold);
  write_occurrences(dir / "distractors.jsonl", corpus.distractors);
}

}  // namespace phrasal
