#include <doctest.h>

#include <random>
#include <set>
#include <sstream>

#include "phrasal/segmenter.h"

using namespace phrasal;

namespace {

PhraseModel random_model(std::uint64_t seed, float head_scale = 1.0f) {
  std::vector<Sentence> sents{make_sentence("a b c d e f g h i j k l m n o p", "en", 0)};
  PhraseModel m;
  m.vocab = make_encoder_vocab(sents);
  EncoderConfig cfg;
  cfg.vocab_size = static_cast<std::uint32_t>(m.vocab.size());
  cfg.d = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.o = 8;
  cfg.max_positions = 64;
  m.params = init_params<float>(cfg, seed);
  m.params.seg_w *= head_scale;
  return m;
}

Sentence random_sentence(std::mt19937_64& rng, std::uint32_t n) {
  std::string text;
  for (std::uint32_t k = 0; k < n; ++k) text += std::string(1, char('a' + rng() % 16)) + " ";
  return make_sentence(text, "en", 0);
}

}  // namespace

TEST_CASE("SegmentConfig validation") {
  SegmentConfig cfg;
  CHECK(cfg.index_threshold == 0.7);
  CHECK(cfg.query_threshold == 0.9);
  CHECK(cfg.max_len == 8);
  CHECK_NOTHROW(cfg.validate());
  cfg.query_threshold = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.max_len = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("segment: zero head scores 0.5 everywhere") {
  auto m = random_model(1);
  m.params.seg_w.setZero();
  m.params.seg_b.setZero();
  const auto s = make_sentence("a b c d e f g h i j", "en", 0);
  CHECK(segment(s, m, 0.7, 8).empty());
  const auto all = segment(s, m, 0.4, 8);
  // Length 10, spans of at most 8 tokens: 10+9+...+3 = 52.
  CHECK(all.size() == 52);
  for (const auto& sp : all) {
    CHECK(sp.score == 0.5);
    CHECK(sp.span.length() <= 8);
  }
  CHECK(segment(make_sentence("", "en", 0), m, 0.4, 8).empty());
}

TEST_CASE("segment: matches a direct span_prob scan, sorted, bounded, deterministic") {
  std::mt19937_64 rng(3);
  const auto m = random_model(2, 8.0f);
  for (int trial = 0; trial < 30; ++trial) {
    const auto s = random_sentence(rng, 1 + std::uint32_t(rng() % 20));
    const auto h = m.encode(s);
    for (std::uint32_t max_len : {1u, 3u, 8u}) {
      const auto low = segment(s, m, 0.7, max_len);
      const auto high = segment(s, m, 0.9, max_len);
      std::vector<ScoredSpan> expect;
      for (std::uint32_t i = 0; i < s.size(); ++i) {
        for (std::uint32_t j = i; j < s.size() && j - i + 1 <= max_len; ++j) {
          const double p = span_prob(h, i, j, m.params);
          if (p > 0.7) expect.push_back({{i, j}, p});
        }
      }
      REQUIRE(low.size() == expect.size());
      for (std::size_t k = 0; k < low.size(); ++k) {
        CHECK(low[k].span == expect[k].span);
        CHECK(low[k].score == expect[k].score);
        if (k) CHECK(low[k - 1].span < low[k].span);
      }
      CHECK(low.size() <= s.size() * max_len);
      std::set<Span> lo;
      for (const auto& sp : low) lo.insert(sp.span);
      for (const auto& sp : high) CHECK(lo.count(sp.span));
      const auto again = segment(s, m, 0.7, max_len);
      CHECK(again.size() == low.size());
    }
  }
}

TEST_CASE("ngram_spans") {
  CHECK(ngram_spans(0).empty());
  const auto short_sent = ngram_spans(3, 5);
  REQUIRE(short_sent.size() == 1);
  CHECK(short_sent[0].span == Span{0, 2});
  const auto spans = ngram_spans(7, 5);
  REQUIRE(spans.size() == 3);
  CHECK(spans[0].span == Span{0, 4});
  CHECK(spans[2].span == Span{2, 6});
  CHECK(ngram_spans(4, 1).size() == 4);
}

TEST_CASE("write_segment_line") {
  auto s = make_sentence("die Premierminister Indiens", "de", 12);
  std::ostringstream out;
  write_segment_line(out, s, {{1, 2}, 0.95});
  CHECK(out.str() == R"({"sent_id":12,"s":1,"e":2,"score":0.95,"text":"Premierminister Indiens"})" "\n");
}
