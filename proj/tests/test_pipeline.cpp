#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <random>
#include <set>

#include "phrasal/pipeline.h"
#include "phrasal/utf8.h"
#include "prompt_fixture.h"
#include "test_util.h"
#include "toy_model.h"

using namespace phrasal;

using testutil::example_prompt_inputs;
using testutil::hit_in;
using testutil::result;

namespace {

const std::filesystem::path kGolden = std::filesystem::path(PHRASAL_TEST_DATA) / "golden" / "example_prompt.txt";

std::string strip_markers(std::string s) {
  for (const std::string m : {"[[", "]]"}) {
    for (auto p = s.find(m); p != std::string::npos; p = s.find(m)) s.erase(p, m.size());
  }
  return s;
}

}  // namespace

TEST_CASE("build_prompt: four-block example reproduced byte-for-byte from the golden file") {
  const auto [src, results] = example_prompt_inputs();
  const std::string prompt = build_prompt(src, results, PromptConfig{});
  if (std::getenv("PHRASAL_UPDATE_GOLDEN")) testutil::write_text(kGolden, prompt);
  REQUIRE(std::filesystem::exists(kGolden));
  CHECK(prompt == testutil::read_text(kGolden));

  CHECK(prompt.find("German Phrase: trafen\nPotential Translation: met\nContext: ") != std::string::npos);
  CHECK(prompt.find("Obama and Abe [[met]] with Japanese university students") != std::string::npos);
  CHECK(prompt.find("point fingers at [[Tokyo]]") != std::string::npos);
  CHECK(prompt.find("German: Die Premierminister Indiens und Japans trafen sich in Tokio .\n") != std::string::npos);
  CHECK(prompt.find("please faithfully translate the following sentence from German into English:") != std::string::npos);
  // Blocks appear in source order, whatever the segmentation scores.
  CHECK(prompt.find("Phrase: Premierminister") < prompt.find("Phrase: Indiens und Japans"));
  CHECK(prompt.find("Phrase: trafen") < prompt.find("Phrase: Tokio"));
  std::size_t contexts = 0;
  for (std::size_t p = prompt.find("Context: "); p != std::string::npos; p = prompt.find("Context: ", p + 1)) {
    const std::string line = prompt.substr(p + 9, prompt.find('\n', p) - p - 9);
    std::string bare = strip_markers(line);
    if (bare.rfind("... ", 0) == 0) bare = bare.substr(4);
    if (bare.size() >= 4 && bare.substr(bare.size() - 4) == " ...") bare.resize(bare.size() - 4);
    CHECK(utf8::length(bare) <= 100);
    ++contexts;
  }
  CHECK(contexts == 4);
}

TEST_CASE("build_prompt: zero usable results gives the plain instruction form") {
  const Sentence src = make_sentence("Die Premierminister Indiens und Japans trafen sich in Tokio.", "de", 0);
  const std::string expect =
      "Please faithfully translate the following sentence from German into English, and do not alter its meaning:\n"
      "German: Die Premierminister Indiens und Japans trafen sich in Tokio .\n"
      "English:\n";
  CHECK(build_prompt(src, {}, PromptConfig{}) == expect);
  // Results without hits do not count.
  const std::vector<RetrievalResult> empty_hits{result(src, 1, 1, 0.99, {})};
  CHECK(build_prompt(src, empty_hits, PromptConfig{}) == expect);

  PromptConfig cfg;
  cfg.source_lang = "Czech";
  cfg.target_lang = "German";
  CHECK(build_prompt(src, {}, cfg).find("from Czech into German") != std::string::npos);
}

TEST_CASE("build_prompt: inline source marking and custom markers") {
  const auto [src, results] = example_prompt_inputs();
  PromptConfig cfg;
  cfg.mark_source_phrases = true;
  const auto p = build_prompt(src, results, cfg);
  CHECK(p.find("German: Die [[Premierminister]] [[Indiens und Japans]] [[trafen]] sich in [[Tokio]] .\n") !=
        std::string::npos);
  cfg.open_marker = "<";
  cfg.close_marker = ">";
  CHECK(build_prompt(src, results, cfg).find("Abe <met> with") != std::string::npos);
}

TEST_CASE("select_prompt_results: cap by segmentation score, text dedup, span order") {
  const Sentence src = make_sentence("a b a c d", "x", 0);
  const auto h = hit_in("t", 0, 0);
  const std::vector<RetrievalResult> rs{
      result(src, 0, 0, 0.91, {h}), result(src, 1, 1, 0.99, {h}), result(src, 2, 2, 0.95, {h}),
      result(src, 3, 3, 0.97, {h}), result(src, 4, 4, 0.98, {}),  result(src, 0, 1, 0.92, {h})};
  PromptConfig cfg;
  cfg.max_phrases = 3;
  const auto chosen = select_prompt_results(rs, cfg);
  REQUIRE(chosen.size() == 3);
  // Candidates by score: b(.99) c(.97) a@2(.95) a@0 dropped as repeat text.
  CHECK(chosen[0]->query.span == Span{1, 1});
  CHECK(chosen[1]->query.span == Span{2, 2});
  CHECK(chosen[2]->query.span == Span{3, 3});
  cfg.max_phrases = 10;
  CHECK(select_prompt_results(rs, cfg).size() == 4);
}

TEST_CASE("truncate_context: whole words, ellipses, phrase always kept, within budget") {
  const std::vector<std::string> toks{"one", "two", "three", "four", "five", "six", "seven"};
  CHECK(truncate_context(toks, {3, 3}, 100, "[[", "]]") == "one two three [[four]] five six seven");
  CHECK(truncate_context(toks, {3, 3}, 14, "[[", "]]") == "... two three [[four]] ...");
  CHECK(truncate_context(toks, {3, 3}, 20, "[[", "]]") == "... three [[four]] five six ...");
  CHECK(truncate_context(toks, {3, 3}, 4, "[[", "]]") == "... [[four]] ...");
  CHECK(truncate_context(toks, {3, 3}, 1, "[[", "]]") == "... [[four]] ...");
  CHECK(truncate_context(toks, {0, 0}, 12, "[[", "]]") == "[[one]] two ...");
  CHECK_THROWS_AS(truncate_context(toks, {7, 7}, 10, "[[", "]]"), std::out_of_range);

  std::mt19937_64 rng(3);
  const std::vector<std::string> words{"a", "bb", "ccc", "Straße", "élan", "x-y-z", "0123456789", "…"};
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<std::string> t;
    const std::size_t n = 1 + rng() % 40;
    for (std::size_t k = 0; k < n; ++k) t.push_back(words[rng() % words.size()]);
    const std::uint32_t s = std::uint32_t(rng() % n), e = std::uint32_t(s + rng() % std::min<std::size_t>(4, n - s));
    const std::size_t budget = rng() % 120;
    const std::string out = truncate_context(t, {s, e}, budget, "[[", "]]");
    std::string phrase;
    for (std::uint32_t k = s; k <= e; ++k) phrase += (k > s ? " " : "") + t[k];
    INFO(out);
    CHECK(out.find("[[" + phrase + "]]") != std::string::npos);
    std::string bare = strip_markers(out);
    const bool left_cut = bare.rfind("... ", 0) == 0;
    const bool right_cut = bare.size() >= 4 && bare.substr(bare.size() - 4) == " ...";
    if (left_cut) bare = bare.substr(4);
    if (right_cut) bare.resize(bare.size() - 4);
    if (utf8::length(phrase) <= budget) CHECK(utf8::length(bare) <= budget);
    // The visible window is a contiguous run of whole tokens.
    std::string full;
    for (std::size_t k = 0; k < n; ++k) full += (k ? " " : "") + t[k];
    CHECK(full.find(bare) != std::string::npos);
    if (bare == full) CHECK((!left_cut && !right_cut));
    if (!left_cut && !right_cut) CHECK(bare == full);
  }
}

TEST_CASE("retrieve: span order, prefix property, empty index, dimension check") {
  const auto model = testutil::toy_model({"w0", "w1", "w2", "w3"});
  std::vector<PhraseOccurrence> occ;
  for (int k = 0; k < 4; ++k) {
    occ.push_back({make_sentence("w" + std::to_string(k) + " w3", "en", std::uint32_t(k)), {0, 0}, "d"});
  }
  const auto idx = build_occurrence_index(occ, model);
  REQUIRE(idx.size() == 4);
  const Sentence q = make_sentence("w2 w1", "x", 5);
  SegmentConfig cfg;
  const auto r32 = retrieve(q, model, idx, cfg, 32);
  REQUIRE(r32.size() == 3);  // every span scores sigmoid(3) > 0.9
  CHECK(r32[0].query.span == Span{0, 0});
  CHECK(r32[1].query.span == Span{0, 1});
  CHECK(r32[2].query.span == Span{1, 1});
  CHECK(r32[0].query.sent_id == 5);
  CHECK(r32[1].query_text == "w2 w1");
  CHECK(r32[0].hits.size() == 4);
  CHECK(r32[0].hits[0].phrase == "w2");
  CHECK(r32[0].hits[0].context == "w2 w3");
  CHECK(r32[2].hits[0].phrase == "w1");
  const auto r1 = retrieve(q, model, idx, cfg, 1);
  for (std::size_t k = 0; k < r1.size(); ++k) {
    REQUIRE(r1[k].hits.size() == 1);
    CHECK(r1[k].hits[0].id == r32[k].hits[0].id);
    CHECK(r1[k].hits[0].score == r32[k].hits[0].score);
  }

  const auto none = retrieve(q, model, PhraseIndex(64), cfg, 4);
  REQUIRE(none.size() == 3);
  for (const auto& r : none) CHECK(r.hits.empty());
  CHECK(retrieve(q, testutil::toy_model({"w0"}, -3.0f), idx, cfg, 4).empty());
  CHECK(retrieve(make_sentence("", "x", 0), model, idx, cfg, 4).empty());
  CHECK_THROWS_AS(retrieve(q, model, PhraseIndex(8), cfg, 4), std::invalid_argument);

  const auto j = results_to_json(r1);
  CHECK(j.dump().rfind(R"({"results":[{"query_span":{"s":0,"e":0,"text":"w2"},"hits":[{"phrase":"w2","context":"w2 w3","s":0,"e":0,"score":)", 0) == 0);
}

TEST_CASE("build_phrase_index: learned and n-gram modes, doc ids, dedup") {
  const auto model = testutil::toy_model({"a", "b", "c"});
  std::vector<Sentence> sents{make_sentence("a b c", "en", 0), make_sentence("a b c", "en", 1),
                              make_sentence("", "en", 2), make_sentence("c a", "en", 3)};
  IndexBuildOptions opts;
  opts.max_len = 2;
  const auto idx = build_phrase_index(sents, model, opts);
  // "a b c": 3 + 2 spans; the repeat sentence is deduplicated; "c a": 3 spans.
  CHECK(idx.size() == 8);
  CHECK(idx.entry(0).doc_id == "en:0");
  CHECK(idx.entry(7).doc_id == "en:3");
  CHECK(idx.entry(1).phrase_text == "a b");
  opts.mode = SegmentMode::ngram;
  opts.ngram = 2;
  CHECK(build_phrase_index(sents, model, opts).size() == 3);
  opts.mode = SegmentMode::learned;
  opts.threshold = 0.99;
  CHECK(build_phrase_index(sents, model, opts).empty());
}

TEST_CASE("occurrences and gold: JSONL round-trips and load-time errors") {
  testutil::TempDir dir("pipeline");
  const std::vector<PhraseOccurrence> occ{{make_sentence("Obama and Abe met .", "en", 0), {3, 3}, "en:mono:4"}};
  write_occurrences(dir / "o.jsonl", occ);
  CHECK(testutil::read_text(dir / "o.jsonl") == R"({"context":"Obama and Abe met .","s":3,"e":3,"doc_id":"en:mono:4"})" "\n");
  const auto back = load_occurrences(dir / "o.jsonl");
  REQUIRE(back.size() == 1);
  CHECK(back[0].span == Span{3, 3});
  CHECK(back[0].context.tokens == occ[0].context.tokens);

  const std::vector<GoldItem> gold{{make_sentence("Abe trafen sich", "de", 0), {1, 1},
                                    make_sentence("Obama and Abe met .", "en", 0), {3, 3}}};
  write_gold(dir / "g.jsonl", gold);
  const auto g = load_gold(dir / "g.jsonl");
  REQUIRE(g.size() == 1);
  CHECK(g[0].query == Span{1, 1});
  CHECK(g[0].query_context.language == "de");
  CHECK(g[0].gold_context.text() == "Obama and Abe met .");

  testutil::write_text(dir / "bad.jsonl",
                       testutil::read_text(dir / "g.jsonl") +
                           R"({"query":{"text_context":"a b","s":0,"e":0,"lang":"de"},"gold":{"context":"x y","s":1,"e":2}})" "\n");
  try {
    load_gold(dir / "bad.jsonl");
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  testutil::write_text(dir / "junk.jsonl", "{not json\n");
  CHECK_THROWS_AS(load_gold(dir / "junk.jsonl"), std::runtime_error);
  testutil::write_text(dir / "neg.jsonl", R"({"query":{"text_context":"a b","s":-1,"e":0},"gold":{"context":"x","s":0,"e":0}})" "\n");
  CHECK_THROWS_AS(load_gold(dir / "neg.jsonl"), std::runtime_error);
  CHECK_THROWS_AS(load_gold(dir / "missing.jsonl"), std::runtime_error);
  CHECK_THROWS_AS(load_occurrences(dir / "junk.jsonl"), std::runtime_error);
}

TEST_CASE("eval_acc_at_1: absent target, hand-counted fixture, empty gold") {
  std::vector<std::string> vocab;
  for (int k = 0; k < 10; ++k) vocab.push_back("q" + std::to_string(k));
  const auto model = testutil::toy_model(vocab);

  std::vector<GoldItem> gold;
  for (int k = 0; k < 10; ++k) {
    gold.push_back({make_sentence("q" + std::to_string(k) + " z", "x", std::uint32_t(k)), {0, 0},
                    make_sentence("gold context " + std::to_string(k), "en", 0), {2, 2}});
  }
  // Entry k carries query k's own vector, so it is query k's top hit. Items
  // 0, 2, 3, 5, 6, 8, 9 point at the gold occurrence; the rest at decoys.
  std::vector<PhraseOccurrence> queries;
  for (const auto& g : gold) queries.push_back({g.query_context, g.query, ""});
  const Matrix<float> q = encode_occurrences(queries, model);
  const std::set<int> right{0, 2, 3, 5, 6, 8, 9};
  IndexBuilder builder(64);
  for (int k = 0; k < 10; ++k) {
    IndexEntry e;
    e.vector.assign(q.row(k).data(), q.row(k).data() + 64);
    const bool ok = right.count(k) > 0;
    e.context_text = ok ? gold[k].gold_context.text() : "decoy context " + std::to_string(k);
    e.s = ok ? 2 : 1;
    e.e = ok ? 2 : 1;
    e.phrase_text = ok ? std::to_string(k) : "context";
    builder.add(std::move(e));
  }
  const auto idx = std::move(builder).finish();
  const auto r = eval_acc_at_1(gold, model, idx);
  CHECK(r.correct == 7);
  CHECK(r.total == 10);
  CHECK(r.accuracy() == doctest::Approx(0.7));

  // Lenient: the decoys' phrase text "context" equals no gold phrase either.
  CHECK(eval_acc_at_1(gold, model, idx, {true, Precision::f64}).correct == 7);

  // Single item whose target is not in the index.
  const std::vector<GoldItem> one{gold[1]};
  CHECK(eval_acc_at_1(one, model, idx).accuracy() == 0.0);
  CHECK(eval_acc_at_1(one, model, PhraseIndex(64)).accuracy() == 0.0);
  CHECK_THROWS_AS(eval_acc_at_1({}, model, idx), std::invalid_argument);
  CHECK_THROWS_AS(eval_acc_at_1(one, model, PhraseIndex(3)), std::invalid_argument);
}

TEST_CASE("eval_with_distractors: separable toy gives 1.0; accuracy monotone and order-invariant") {
  std::vector<std::string> vocab;
  for (int k = 0; k < 20; ++k) vocab.push_back("t" + std::to_string(k));
  const auto toy = testutil::toy_model(vocab);
  std::vector<GoldItem> gold;
  for (int k = 0; k < 20; ++k) {
    const std::string w = "t" + std::to_string(k);
    gold.push_back({make_sentence(w + " t0", "x", std::uint32_t(k)), {0, 0},
                    make_sentence("t19 " + w + " t19", "en", std::uint32_t(k)), {1, 1}});
  }
  CHECK(eval_with_distractors(gold, {}, toy).accuracy() == 1.0);

  // A random trained-looking model: outcomes depend on real scores.
  PhraseModel model;
  std::vector<Sentence> all;
  for (const auto& g : gold) all.push_back(g.query_context), all.push_back(g.gold_context);
  model.vocab = make_encoder_vocab(all);
  EncoderConfig cfg;
  cfg.vocab_size = static_cast<std::uint32_t>(model.vocab.size());
  cfg.d = 16;
  cfg.o = 8;
  cfg.layers = 1;
  model.params = init_params<float>(cfg, 4);
  std::mt19937_64 rng(9);
  std::vector<PhraseOccurrence> distractors;
  for (std::uint32_t k = 0; k < 3000; ++k) {
    std::string text;
    const std::size_t n = 3 + rng() % 6;
    for (std::size_t t = 0; t < n; ++t) text += vocab[rng() % vocab.size()] + " ";
    const Sentence s = make_sentence(text, "en", k);
    const std::uint32_t a = std::uint32_t(rng() % n);
    distractors.push_back({s, {a, std::uint32_t(std::min<std::size_t>(n - 1, a + rng() % 3))}, "m"});
  }
  const EvalOptions exact{false, Precision::f64};
  const auto acc0 = eval_with_distractors(gold, {}, model, exact).accuracy();
  const auto acc1 = eval_with_distractors(gold, std::span(distractors).first(300), model, exact).accuracy();
  const auto acc2 = eval_with_distractors(gold, distractors, model, exact).accuracy();
  MESSAGE("random-model accuracy with 0/300/3000 distractors: " << acc0 << " " << acc1 << " " << acc2);
  CHECK(acc0 >= acc1);
  CHECK(acc1 >= acc2);

  // Same entries in a different order: same accuracy.
  std::vector<PhraseOccurrence> entries;
  for (const auto& g : gold) entries.push_back({g.gold_context, g.gold, "gold"});
  entries.insert(entries.end(), distractors.begin(), distractors.end());
  std::shuffle(entries.begin(), entries.end(), rng);
  const auto shuffled = build_occurrence_index(entries, model);
  CHECK(eval_acc_at_1(gold, model, shuffled, exact).accuracy() == acc2);
}
