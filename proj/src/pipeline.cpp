#include "phrasal/pipeline.h"

#include <fstream>
#include <stdexcept>

#include "phrasal/parallel.h"

namespace phrasal {

namespace {

constexpr std::size_t kShards = 64;

void check_dims(const PhraseModel& model, const PhraseIndex& index) {
  if (index.dim() != 0 && index.dim() != model.params.config.o) {
    throw std::invalid_argument("index dimension " + std::to_string(index.dim()) +
                                " does not match encoder output dimension " +
                                std::to_string(model.params.config.o));
  }
}

ResolvedHit resolve(const PhraseIndex& index, const SearchHit& hit) {
  const IndexEntry& e = index.entry(hit.id);
  return {hit.id, hit.score, e.phrase_text, e.context_text, e.s, e.e, e.doc_id};
}

// Runs fn(i) for i in [0, n) over a fixed shard split.
template <typename F>
void parallel_for(std::size_t n, F&& fn) {
  const std::size_t shards = std::min(n, kShards);
  if (shards == 0) return;
  parallel_shards(shards, [&](std::size_t shard) {
    const std::size_t end = shard_begin(n, shards, shard + 1);
    for (std::size_t i = shard_begin(n, shards, shard); i < end; ++i) fn(i);
  });
}

Span checked_span(const nlohmann::json& j, std::size_t len, const std::string& where, const char* what) {
  const auto s = j.at("s").get<std::int64_t>();
  const auto e = j.at("e").get<std::int64_t>();
  if (s < 0 || e < s || static_cast<std::size_t>(e) >= len) {
    throw std::runtime_error(where + ": " + what + " span [" + std::to_string(s) +
                             ", " + std::to_string(e) + "] outside a context of " + std::to_string(len) +
                             " tokens");
  }
  return {static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(e)};
}

}  // namespace

Matrix<float> phrase_vectors(const Matrix<float>& hidden, std::span<const Span> spans,
                             const EncoderParams<float>& params) {
  Matrix<float> out(static_cast<Eigen::Index>(spans.size()), params.config.o);
  for (std::size_t k = 0; k < spans.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) = phrase_rep(hidden, spans[k].s, spans[k].e, params);
  }
  return out;
}

std::vector<RetrievalResult> retrieve(const Sentence& sentence, const PhraseModel& model,
                                      const PhraseIndex& index, const SegmentConfig& cfg, std::size_t k,
                                      Precision precision) {
  check_dims(model, index);
  std::vector<RetrievalResult> results;
  if (sentence.empty()) return results;
  const Matrix<float> hidden = model.encode(sentence);
  // Segment output is sorted by (s, e) with no repeats, so identical spans
  // never reach the search.
  const auto scored = segment(hidden, model.params, cfg.query_threshold, cfg.max_len);
  if (scored.empty()) return results;
  std::vector<Span> spans;
  for (const auto& s : scored) spans.push_back(s.span);
  std::vector<std::vector<SearchHit>> hits(spans.size());
  if (!index.empty()) hits = index.search(phrase_vectors(hidden, spans, model.params), k, precision);
  for (std::size_t q = 0; q < spans.size(); ++q) {
    RetrievalResult r;
    r.query = {sentence.id, spans[q]};
    r.query_text = sentence.text(spans[q].s, spans[q].e);
    r.seg_score = scored[q].score;
    for (const auto& h : hits[q]) r.hits.push_back(resolve(index, h));
    results.push_back(std::move(r));
  }
  return results;
}

nlohmann::ordered_json results_to_json(std::span<const RetrievalResult> results) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : results) {
    auto hits = nlohmann::ordered_json::array();
    for (const auto& h : r.hits) {
      hits.push_back({{"phrase", h.phrase}, {"context", h.context}, {"s", h.s}, {"e", h.e}, {"score", h.score}});
    }
    arr.push_back({{"query_span", {{"s", r.query.span.s}, {"e", r.query.span.e}, {"text", r.query_text}}},
                   {"hits", std::move(hits)}});
  }
  return {{"results", std::move(arr)}};
}

std::vector<PhraseOccurrence> load_occurrences(const std::filesystem::path& path, TokenizeOptions tokenize) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<PhraseOccurrence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PhraseOccurrence occ;
      occ.context = make_sentence(j.at("context").get<std::string>(), "", static_cast<std::uint32_t>(out.size()),
                                  tokenize);
      occ.span = checked_span(j, occ.context.size(), path.string() + " line " + std::to_string(lineno), "occurrence");
      occ.doc_id = j.value("doc_id", std::string());
      out.push_back(std::move(occ));
    } catch (const nlohmann::json::exception& ex) {
      throw std::runtime_error(path.string() + " line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

void write_occurrences(const std::filesystem::path& path, std::span<const PhraseOccurrence> occurrences) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& o : occurrences) {
    nlohmann::ordered_json j{
        {"context", o.context.text()}, {"s", o.span.s}, {"e", o.span.e}, {"doc_id", o.doc_id}};
    out << j.dump() << '\n';
  }
}

Matrix<float> encode_occurrences(std::span<const PhraseOccurrence> occurrences, const PhraseModel& model) {
  Matrix<float> out(static_cast<Eigen::Index>(occurrences.size()), model.params.config.o);
  parallel_for(occurrences.size(), [&](std::size_t i) {
    const auto& occ = occurrences[i];
    const Matrix<float> hidden = model.encode(occ.context);
    out.row(static_cast<Eigen::Index>(i)) = phrase_rep(hidden, occ.span.s, occ.span.e, model.params);
  });
  return out;
}

PhraseIndex build_phrase_index(std::span<const Sentence> sentences, const PhraseModel& model,
                               const IndexBuildOptions& opts) {
  const std::uint32_t o = model.params.config.o;
  std::vector<std::vector<IndexEntry>> per_sentence(sentences.size());
  parallel_for(sentences.size(), [&](std::size_t i) {
    const Sentence& sent = sentences[i];
    if (sent.empty()) return;
    const Matrix<float> hidden = model.encode(sent);
    const auto scored = opts.mode == SegmentMode::ngram
                            ? ngram_spans(static_cast<std::uint32_t>(sent.size()), opts.ngram)
                            : segment(hidden, model.params, opts.threshold, opts.max_len);
    const std::string context = sent.text();
    const std::string doc = sent.language + ":" + std::to_string(sent.id);
    for (const auto& sp : scored) {
      const RowVector<float> v = phrase_rep(hidden, sp.span.s, sp.span.e, model.params);
      IndexEntry entry;
      entry.vector.assign(v.data(), v.data() + o);
      entry.phrase_text = sent.text(sp.span.s, sp.span.e);
      entry.context_text = context;
      entry.s = sp.span.s;
      entry.e = sp.span.e;
      entry.doc_id = doc;
      per_sentence[i].push_back(std::move(entry));
    }
  });
  IndexBuilder builder(o, opts.metric);
  for (auto& entries : per_sentence) {
    for (auto& e : entries) builder.add(std::move(e));
  }
  return std::move(builder).finish();
}

PhraseIndex build_occurrence_index(std::span<const PhraseOccurrence> occurrences, const PhraseModel& model,
                                   Metric metric) {
  const std::uint32_t o = model.params.config.o;
  const Matrix<float> vectors = encode_occurrences(occurrences, model);
  IndexBuilder builder(o, metric);
  for (std::size_t i = 0; i < occurrences.size(); ++i) {
    const auto& occ = occurrences[i];
    IndexEntry entry;
    const auto row = vectors.row(static_cast<Eigen::Index>(i));
    entry.vector.assign(row.data(), row.data() + o);
    entry.phrase_text = occ.context.text(occ.span.s, occ.span.e);
    entry.context_text = occ.context.text();
    entry.s = occ.span.s;
    entry.e = occ.span.e;
    entry.doc_id = occ.doc_id;
    builder.add(std::move(entry));
  }
  return std::move(builder).finish();
}

std::vector<GoldItem> load_gold(const std::filesystem::path& path, TokenizeOptions tokenize) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open gold file " + path.string());
  std::vector<GoldItem> gold;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto& q = j.at("query");
      const auto& g = j.at("gold");
      GoldItem item;
      const auto id = static_cast<std::uint32_t>(gold.size());
      item.query_context = make_sentence(q.at("text_context").get<std::string>(),
                                         q.value("lang", std::string()), id, tokenize);
      item.gold_context = make_sentence(g.at("context").get<std::string>(), "", id, tokenize);
      item.query = checked_span(q, item.query_context.size(), "gold line " + std::to_string(lineno), "query");
      item.gold = checked_span(g, item.gold_context.size(), "gold line " + std::to_string(lineno), "gold");
      gold.push_back(std::move(item));
    } catch (const nlohmann::json::exception& ex) {
      throw std::runtime_error("gold line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return gold;
}

void write_gold(const std::filesystem::path& path, std::span<const GoldItem> gold) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& g : gold) {
    nlohmann::ordered_json j{
        {"query",
         {{"text_context", g.query_context.text()},
          {"s", g.query.s},
          {"e", g.query.e},
          {"lang", g.query_context.language}}},
        {"gold", {{"context", g.gold_context.text()}, {"s", g.gold.s}, {"e", g.gold.e}}}};
    out << j.dump() << '\n';
  }
}

EvalResult eval_acc_at_1(std::span<const GoldItem> gold, const PhraseModel& model, const PhraseIndex& index,
                         const EvalOptions& opts) {
  if (gold.empty()) throw std::invalid_argument("gold set is empty");
  check_dims(model, index);
  EvalResult result;
  result.total = gold.size();
  if (index.empty()) return result;
  std::vector<PhraseOccurrence> queries;
  queries.reserve(gold.size());
  for (const auto& g : gold) queries.push_back({g.query_context, g.query, {}});
  const auto hits = index.search(encode_occurrences(queries, model), 1, opts.precision);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (hits[i].empty()) continue;
    const IndexEntry& top = index.entry(hits[i].front().id);
    const GoldItem& g = gold[i];
    const bool match = opts.lenient ? top.phrase_text == g.gold_context.text(g.gold.s, g.gold.e)
                                    : top.s == g.gold.s && top.e == g.gold.e &&
                                          top.context_text == g.gold_context.text();
    if (match) ++result.correct;
  }
  return result;
}

EvalResult eval_with_distractors(std::span<const GoldItem> gold, std::span<const PhraseOccurrence> distractors,
                                 const PhraseModel& model, const EvalOptions& opts) {
  std::vector<PhraseOccurrence> all;
  all.reserve(gold.size() + distractors.size());
  for (const auto& g : gold) all.push_back({g.gold_context, g.gold, "gold"});
  all.insert(all.end(), distractors.begin(), distractors.end());
  const PhraseIndex index = build_occurrence_index(all, model);
  return eval_acc_at_1(gold, model, index, opts);
}

}  // namespace phrasal
