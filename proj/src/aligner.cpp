#include "phrasal/aligner.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "phrasal/parallel.h"

namespace phrasal {

Alignment::Alignment(std::uint32_t src_len, std::uint32_t tgt_len, std::vector<Link> links)
    : src_len_(src_len), tgt_len_(tgt_len), links_(std::move(links)) {
  for (const auto& [i, j] : links_) {
    if (i >= src_len_ || j >= tgt_len_) {
      throw std::invalid_argument("alignment link " + std::to_string(i) + "-" + std::to_string(j) +
                                  " outside " + std::to_string(src_len_) + "x" +
                                  std::to_string(tgt_len_));
    }
  }
  std::sort(links_.begin(), links_.end());
  links_.erase(std::unique(links_.begin(), links_.end()), links_.end());
}

bool Alignment::contains(std::uint32_t i, std::uint32_t j) const {
  return std::binary_search(links_.begin(), links_.end(), Link{i, j});
}

std::string to_pharaoh(const Alignment& a) {
  std::string out;
  for (const auto& [i, j] : a.links()) {
    if (!out.empty()) out.push_back(' ');
    out += std::to_string(i);
    out.push_back('-');
    out += std::to_string(j);
  }
  return out;
}

std::vector<Link> parse_pharaoh(std::string_view line) {
  std::vector<Link> links;
  std::size_t k = 0;
  while (k < line.size()) {
    while (k < line.size() && (line[k] == ' ' || line[k] == '\t' || line[k] == '\r')) ++k;
    if (k == line.size()) break;
    std::size_t end = k;
    while (end < line.size() && line[end] != ' ' && line[end] != '\t' && line[end] != '\r') ++end;
    const std::string_view item = line.substr(k, end - k);
    const auto dash = item.find('-');
    std::uint32_t i = 0, j = 0;
    bool ok = dash != std::string_view::npos && dash > 0 && dash + 1 < item.size();
    if (ok) {
      auto r1 = std::from_chars(item.data(), item.data() + dash, i);
      auto r2 = std::from_chars(item.data() + dash + 1, item.data() + item.size(), j);
      ok = r1.ec == std::errc() && r1.ptr == item.data() + dash && r2.ec == std::errc() &&
           r2.ptr == item.data() + item.size();
    }
    if (!ok) throw std::invalid_argument("bad Pharaoh link '" + std::string(item) + "'");
    links.emplace_back(i, j);
    k = end;
  }
  return links;
}

void write_pharaoh(const std::filesystem::path& path, std::span<const Alignment> alignments) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& a : alignments) out << to_pharaoh(a) << '\n';
}

std::vector<Alignment> read_pharaoh(const std::filesystem::path& path,
                                    std::span<const SentencePair> pairs) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<Alignment> out;
  out.reserve(pairs.size());
  std::string line;
  while (std::getline(in, line)) {
    if (out.size() == pairs.size()) {
      if (line.empty()) continue;
      throw std::runtime_error(path.string() + ": more alignment lines than sentence pairs");
    }
    const auto& p = pairs[out.size()];
    try {
      out.emplace_back(static_cast<std::uint32_t>(p.x.size()), static_cast<std::uint32_t>(p.y.size()),
                       parse_pharaoh(line));
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(out.size() + 1) + ": " + e.what());
    }
  }
  if (out.size() != pairs.size()) {
    throw std::runtime_error(path.string() + ": " + std::to_string(out.size()) +
                             " alignment lines for " + std::to_string(pairs.size()) + " pairs");
  }
  return out;
}

double TranslationTable::prob(std::uint32_t e, std::uint32_t f) const {
  if (e >= rows_.size()) return floor_;
  const auto& row = rows_[e];
  auto it = row.find(f);
  return it == row.end() ? floor_ : it->second;
}

double TranslationTable::prob(std::string_view e, std::string_view f) const {
  const auto none = static_cast<std::uint32_t>(-1);
  const auto ei = e_vocab_.id(e, none);
  const auto fi = f_vocab_.id(f, none);
  if (ei == none || fi == none) return floor_;
  return prob(ei, fi);
}

void TranslationTable::dump_jsonl(std::ostream& out) const {
  for (std::uint32_t e = 0; e < rows_.size(); ++e) {
    std::vector<std::pair<std::string_view, double>> entries;
    for (const auto& [f, p] : rows_[e]) entries.emplace_back(f_vocab_.token(f), p);
    std::sort(entries.begin(), entries.end());
    for (const auto& [f, p] : entries) {
      nlohmann::json row{{"e", e_vocab_.token(e)}, {"f", f}, {"p", p}};
      out << row.dump() << '\n';
    }
  }
}

namespace {

struct EncodedPair {
  std::vector<std::uint32_t> e;  // includes NULL at the front when enabled
  std::vector<std::uint32_t> f;
};

constexpr std::size_t kMaxShards = 16;

std::size_t shard_count(std::size_t n) { return std::clamp<std::size_t>(n / 64, 1, kMaxShards); }

}  // namespace

struct Model1Trainer {
  static Model1Result train(std::span<const SentencePair> corpus, const EMConfig& cfg, bool reverse) {
    if (cfg.iterations < 1) throw std::invalid_argument("EM iterations must be >= 1");
    if (cfg.epsilon < 0) throw std::invalid_argument("EM smoothing must be >= 0");
    if (corpus.empty()) throw std::invalid_argument("cannot train Model 1 on an empty corpus");

    Model1Result result;
    TranslationTable& table = result.table;
    table.use_null_ = cfg.use_null;
    table.floor_ = cfg.epsilon > 0 ? cfg.epsilon : 1e-12;
    table.e_vocab_.intern(TranslationTable::kNullToken);

    std::vector<EncodedPair> data;
    data.reserve(corpus.size());
    for (const auto& p : corpus) {
      const Sentence& es = reverse ? p.y : p.x;
      const Sentence& fs = reverse ? p.x : p.y;
      if (es.empty() || fs.empty()) {
        ++result.skipped;
        continue;
      }
      EncodedPair enc;
      if (cfg.use_null) enc.e.push_back(TranslationTable::kNull);
      for (const auto& t : es.tokens) enc.e.push_back(table.e_vocab_.add(t));
      for (const auto& t : fs.tokens) enc.f.push_back(table.f_vocab_.add(t));
      data.push_back(std::move(enc));
    }
    if (data.empty()) throw std::invalid_argument("no usable sentence pairs for Model 1");

    // Uniform initialization over co-occurring target tokens.
    table.rows_.assign(table.e_vocab_.size(), {});
    for (const auto& d : data) {
      for (auto e : d.e) {
        for (auto f : d.f) table.rows_[e].emplace(f, 0.0);
      }
    }
    for (auto& row : table.rows_) {
      const double u = row.empty() ? 0.0 : 1.0 / static_cast<double>(row.size());
      for (auto& [f, p] : row) p = u;
    }

    using Counts = std::vector<std::unordered_map<std::uint32_t, double>>;
    const std::size_t shards = shard_count(data.size());
    for (int it = 0; it < cfg.iterations; ++it) {
      std::vector<Counts> counts(shards, Counts(table.rows_.size()));
      std::vector<double> ll(shards, 0.0);
      parallel_shards(shards, [&](std::size_t s) {
        const std::size_t b = shard_begin(data.size(), shards, s);
        const std::size_t e = shard_begin(data.size(), shards, s + 1);
        std::vector<double> post;
        for (std::size_t k = b; k < e; ++k) {
          const auto& d = data[k];
          post.resize(d.e.size());
          for (auto f : d.f) {
            double denom = 0;
            for (std::size_t i = 0; i < d.e.size(); ++i) {
              post[i] = table.rows_[d.e[i]].at(f);
              denom += post[i];
            }
            ll[s] += std::log(denom / static_cast<double>(d.e.size()));
            for (std::size_t i = 0; i < d.e.size(); ++i) counts[s][d.e[i]][f] += post[i] / denom;
          }
        }
      });
      double total_ll = 0;
      for (double v : ll) total_ll += v;
      result.log_likelihood.push_back(total_ll);

      Counts& merged = counts[0];
      for (std::size_t s = 1; s < shards; ++s) {
        for (std::size_t e = 0; e < merged.size(); ++e) {
          for (const auto& [f, c] : counts[s][e]) merged[e][f] += c;
        }
      }
      for (std::size_t e = 0; e < table.rows_.size(); ++e) {
        auto& row = table.rows_[e];
        if (row.empty()) continue;
        double sum = 0;
        for (const auto& [f, p] : row) {
          auto it2 = merged[e].find(f);
          sum += it2 == merged[e].end() ? 0.0 : it2->second;
        }
        const double norm = sum + cfg.epsilon * static_cast<double>(row.size());
        for (auto& [f, p] : row) {
          auto it2 = merged[e].find(f);
          const double c = it2 == merged[e].end() ? 0.0 : it2->second;
          p = norm > 0 ? (c + cfg.epsilon) / norm : 1.0 / static_cast<double>(row.size());
        }
      }
    }
    result.log_likelihood.push_back(model1_log_likelihood(corpus, table, reverse));
    return result;
  }
};

Model1Result train_model1(std::span<const SentencePair> corpus, const EMConfig& cfg, bool reverse) {
  return Model1Trainer::train(corpus, cfg, reverse);
}

double model1_log_likelihood(std::span<const SentencePair> corpus, const TranslationTable& table,
                             bool reverse) {
  const auto none = static_cast<std::uint32_t>(-1);
  double ll = 0;
  for (const auto& p : corpus) {
    const Sentence& es = reverse ? p.y : p.x;
    const Sentence& fs = reverse ? p.x : p.y;
    if (es.empty() || fs.empty()) continue;
    std::vector<std::uint32_t> e;
    if (table.has_null()) e.push_back(TranslationTable::kNull);
    for (const auto& t : es.tokens) e.push_back(table.source_vocab().id(t, none));
    for (const auto& t : fs.tokens) {
      const auto f = table.target_vocab().id(t, none);
      double denom = 0;
      for (auto ei : e) denom += (ei == none || f == none) ? table.floor() : table.prob(ei, f);
      ll += std::log(denom / static_cast<double>(e.size()));
    }
  }
  return ll;
}

Alignment viterbi_align(const SentencePair& pair, const TranslationTable& table, Direction dir) {
  const Sentence& es = dir == Direction::fwd ? pair.x : pair.y;
  const Sentence& fs = dir == Direction::fwd ? pair.y : pair.x;
  const auto none = static_cast<std::uint32_t>(-1);
  std::vector<std::uint32_t> e_ids;
  for (const auto& t : es.tokens) e_ids.push_back(table.source_vocab().id(t, none));

  std::vector<Link> links;
  for (std::uint32_t j = 0; j < fs.size(); ++j) {
    const auto f = table.target_vocab().id(fs.tokens[j], none);
    auto prob = [&](std::uint32_t e) {
      return (e == none || f == none) ? table.floor() : table.prob(e, f);
    };
    double best = -1;
    std::uint32_t best_i = 0;
    for (std::uint32_t i = 0; i < e_ids.size(); ++i) {
      const double p = prob(e_ids[i]);
      if (p > best) {
        best = p;
        best_i = i;
      }
    }
    if (e_ids.empty()) continue;
    if (table.has_null() && prob(TranslationTable::kNull) > best) continue;
    if (dir == Direction::fwd) {
      links.emplace_back(best_i, j);
    } else {
      links.emplace_back(j, best_i);
    }
  }
  return Alignment(static_cast<std::uint32_t>(pair.x.size()), static_cast<std::uint32_t>(pair.y.size()),
                   std::move(links));
}

Heuristic parse_heuristic(std::string_view name) {
  if (name == "intersection") return Heuristic::intersection;
  if (name == "union") return Heuristic::union_;
  if (name == "grow-diag-final-and" || name == "gdfa") return Heuristic::grow_diag_final_and;
  throw std::invalid_argument("unknown symmetrization heuristic '" + std::string(name) + "'");
}

std::string_view heuristic_name(Heuristic h) {
  switch (h) {
    case Heuristic::intersection: return "intersection";
    case Heuristic::union_: return "union";
    case Heuristic::grow_diag_final_and: return "grow-diag-final-and";
  }
  return "";
}

namespace {

struct Grid {
  std::uint32_t rows, cols;
  std::vector<char> cells;
  Grid(std::uint32_t r, std::uint32_t c) : rows(r), cols(c), cells(std::size_t(r) * c, 0) {}
  char& at(std::uint32_t i, std::uint32_t j) { return cells[std::size_t(i) * cols + j]; }
  char at(std::uint32_t i, std::uint32_t j) const { return cells[std::size_t(i) * cols + j]; }
};

Grid to_grid(const Alignment& a) {
  Grid g(a.src_len(), a.tgt_len());
  for (const auto& [i, j] : a.links()) g.at(i, j) = 1;
  return g;
}

}  // namespace

Alignment symmetrize(const Alignment& fwd, const Alignment& rev, Heuristic h) {
  if (fwd.src_len() != rev.src_len() || fwd.tgt_len() != rev.tgt_len()) {
    throw std::invalid_argument("symmetrize: alignments refer to different sentence lengths");
  }
  const std::uint32_t n = fwd.src_len();
  const std::uint32_t m = fwd.tgt_len();
  const Grid gf = to_grid(fwd);
  const Grid gr = to_grid(rev);

  Grid out(n, m);
  std::vector<char> src_aligned(n, 0), tgt_aligned(m, 0);
  auto add = [&](std::uint32_t i, std::uint32_t j) {
    out.at(i, j) = 1;
    src_aligned[i] = 1;
    tgt_aligned[j] = 1;
  };
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < m; ++j) {
      const bool in_f = gf.at(i, j), in_r = gr.at(i, j);
      if (h == Heuristic::union_ ? (in_f || in_r) : (in_f && in_r)) add(i, j);
    }
  }

  if (h == Heuristic::grow_diag_final_and) {
    static constexpr int kNeighbors[8][2] = {{-1, 0}, {0, -1}, {1, 0}, {0, 1},
                                             {-1, -1}, {-1, 1}, {1, -1}, {1, 1}};
    bool added = true;
    while (added) {
      added = false;
      for (std::uint32_t i = 0; i < n; ++i) {
        for (std::uint32_t j = 0; j < m; ++j) {
          if (!out.at(i, j)) continue;
          for (const auto& d : kNeighbors) {
            const long ni = long(i) + d[0], nj = long(j) + d[1];
            if (ni < 0 || nj < 0 || ni >= long(n) || nj >= long(m)) continue;
            const auto ui = std::uint32_t(ni), uj = std::uint32_t(nj);
            if (out.at(ui, uj)) continue;
            if ((!src_aligned[ui] || !tgt_aligned[uj]) && (gf.at(ui, uj) || gr.at(ui, uj))) {
              add(ui, uj);
              added = true;
            }
          }
        }
      }
    }
    for (const Grid* g : {&gf, &gr}) {
      for (std::uint32_t i = 0; i < n; ++i) {
        for (std::uint32_t j = 0; j < m; ++j) {
          if (g->at(i, j) && !src_aligned[i] && !tgt_aligned[j]) add(i, j);
        }
      }
    }
  }

  std::vector<Link> links;
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < m; ++j) {
      if (out.at(i, j)) links.emplace_back(i, j);
    }
  }
  return Alignment(n, m, std::move(links));
}

CorpusAlignment align_corpus(std::span<const SentencePair> corpus, const EMConfig& cfg, Heuristic h) {
  auto fwd = train_model1(corpus, cfg, false);
  auto rev = train_model1(corpus, cfg, true);
  CorpusAlignment out;
  out.alignments.reserve(corpus.size());
  for (const auto& p : corpus) {
    out.alignments.push_back(symmetrize(viterbi_align(p, fwd.table, Direction::fwd),
                                        viterbi_align(p, rev.table, Direction::rev), h));
  }
  out.fwd_log_likelihood = std::move(fwd.log_likelihood);
  out.rev_log_likelihood = std::move(rev.log_likelihood);
  out.fwd_table = std::move(fwd.table);
  return out;
}

}  // namespace phrasal
