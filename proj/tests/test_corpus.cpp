#include <doctest.h>

#include <algorithm>
#include <cctype>
#include <map>
#include <random>

#include "phrasal/corpus.h"
#include "phrasal/utf8.h"
#include "test_util.h"

using namespace phrasal;
using testutil::TempDir;
using testutil::write_text;

namespace {

using Tokens = std::vector<std::string>;

// Reference splitter for ASCII text without apostrophes: peel punctuation
// characters off both ends of every whitespace chunk, one per token.
Tokens reference_tokenize(const std::string& text) {
  Tokens out;
  std::string chunk;
  auto flush = [&] {
    if (chunk.empty()) return;
    std::size_t b = 0, e = chunk.size();
    while (e > 0 && std::ispunct(static_cast<unsigned char>(chunk[e - 1]))) --e;
    while (b < e && std::ispunct(static_cast<unsigned char>(chunk[b]))) out.push_back(std::string(1, chunk[b++]));
    if (b < e) out.push_back(chunk.substr(b, e - b));
    for (std::size_t k = e; k < chunk.size(); ++k) out.push_back(std::string(1, chunk[k]));
    chunk.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      chunk.push_back(c);
    }
  }
  flush();
  return out;
}

std::string join(const Tokens& t) {
  std::string s;
  for (std::size_t k = 0; k < t.size(); ++k) s += (k ? " " : "") + t[k];
  return s;
}

}  // namespace

TEST_CASE("tokenize: documented examples") {
  CHECK(tokenize("a minute 's silence") == Tokens{"a", "minute", "'s", "silence"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("   \t ").empty());
  CHECK(tokenize("Tokio.") == Tokens{"Tokio", "."});
  CHECK(tokenize("Tokio.") == reference_tokenize("Tokio."));
}

TEST_CASE("tokenize: clitics and punctuation") {
  CHECK(tokenize("minute's silence") == Tokens{"minute", "'s", "silence"});
  CHECK(tokenize("(Obama,") == Tokens{"(", "Obama", ","});
  CHECK(tokenize("they're here!") == Tokens{"they", "'re", "here", "!"});
  CHECK(tokenize("\"quoted\"") == Tokens{"\"", "quoted", "\""});
  CHECK(tokenize("rock'n'roll") == Tokens{"rock'n'roll"});
  CHECK(tokenize("Straße. «Bonjour»") == Tokens{"Straße", ".", "«", "Bonjour", "»"});
}

TEST_CASE("tokenize: lowercasing after splitting") {
  CHECK(tokenize("Die PREMIER-Minister ÄRGER.", {true}) == Tokens{"die", "premier-minister", "ärger", "."});
  CHECK(tokenize("Die", {false}) == Tokens{"Die"});
}

TEST_CASE("tokenize: random ASCII text matches the reference splitter") {
  std::mt19937 rng(11);
  const std::string alphabet = "abcXYZ019.,;:!?()-\"  ";
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::uniform_int_distribution<int> len(0, 40);
  for (int trial = 0; trial < 2000; ++trial) {
    std::string text;
    for (int k = len(rng); k > 0; --k) text.push_back(alphabet[pick(rng)]);
    INFO(text);
    CHECK(tokenize(text) == reference_tokenize(text));
  }
}

TEST_CASE("tokenize: deterministic and idempotent under join") {
  std::mt19937 rng(5);
  const std::vector<std::string> pieces = {"word", "Tokio.", "minute's", "(x)", "don't", "'", "''", "1,5",
                                           "«a»", "…", "ÉLAN", "l'homme", "x'yz"};
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
  for (int trial = 0; trial < 500; ++trial) {
    std::string text;
    for (int k = 0; k < 8; ++k) text += pieces[pick(rng)] + " ";
    for (bool lc : {false, true}) {
      const auto t = tokenize(text, {lc});
      CHECK(t == tokenize(text, {lc}));
      CHECK(tokenize(join(t), {lc}) == t);
      for (const auto& tok : t) {
        CHECK(!tok.empty());
        CHECK(tok.find(' ') == std::string::npos);
      }
    }
  }
}

TEST_CASE("utf8: invalid bytes decode to replacement characters") {
  const std::string bad = std::string("a") + char(0xFF) + char(0x80) + "b";
  const auto cps = utf8::decode(bad);
  REQUIRE(cps.size() == 4);
  CHECK(cps[1].value == 0xFFFD);
  CHECK(cps[2].value == 0xFFFD);
  CHECK(utf8::length("Straße") == 6);
  std::string out;
  utf8::append(out, U'€');
  CHECK(out == "\xE2\x82\xAC");
}

TEST_CASE("vocabulary: counts") {
  const std::vector<Sentence> one{{{"a", "a", "b"}, "en", 0}};
  const Vocabulary v = build_vocab(one);
  CHECK(v.frequency("a") == 2);
  CHECK(v.frequency("b") == 1);
  CHECK(v.total() == 3);
  CHECK(v.size() == 2);
  CHECK(v.id("a", 99) == 0);
  CHECK(v.id("zzz", 99) == 99);

  const Vocabulary empty = build_vocab(std::span<const Sentence>{});
  CHECK(empty.size() == 0);
  CHECK(empty.total() == 0);
}

TEST_CASE("vocabulary: 1000 sentences match a brute-force recount, order-invariant") {
  std::mt19937 rng(3);
  std::uniform_int_distribution<int> word(0, 60), len(1, 12);
  std::vector<Sentence> sents;
  for (std::uint32_t i = 0; i < 1000; ++i) {
    Sentence s;
    s.id = i;
    for (int k = len(rng); k > 0; --k) s.tokens.push_back("w" + std::to_string(word(rng)));
    sents.push_back(s);
  }
  std::map<std::string, std::uint64_t> recount;
  std::uint64_t total = 0;
  for (const auto& s : sents) {
    for (const auto& t : s.tokens) {
      ++recount[t];
      ++total;
    }
  }
  const Vocabulary v = build_vocab(sents);
  CHECK(v.total() == total);
  CHECK(v.size() == recount.size());
  std::uint64_t sum = 0;
  for (std::uint32_t id = 0; id < v.size(); ++id) {
    CHECK(v.frequency(id) == recount.at(v.token(id)));
    sum += v.frequency(id);
  }
  CHECK(sum == v.total());

  std::shuffle(sents.begin(), sents.end(), rng);
  const Vocabulary shuffled = build_vocab(sents);
  for (const auto& [tok, n] : recount) CHECK(shuffled.frequency(tok) == n);

  // Sharded counting merges associatively.
  Vocabulary a = build_vocab(std::span<const Sentence>(sents).first(400));
  const Vocabulary b = build_vocab(std::span<const Sentence>(sents).subspan(400));
  a.merge(b);
  for (const auto& [tok, n] : recount) CHECK(a.frequency(tok) == n);
  CHECK(a.total() == total);
}

TEST_CASE("load_parallel_jsonl: examples") {
  TempDir dir("corpus");
  write_text(dir / "one.jsonl", R"({"src":"trafen","tgt":"met","src_lang":"de","tgt_lang":"en"})" "\n");
  const auto one = load_parallel_jsonl(dir / "one.jsonl");
  REQUIRE(one.pairs.size() == 1);
  CHECK(one.pairs[0].x.tokens == Tokens{"trafen"});
  CHECK(one.pairs[0].y.tokens == Tokens{"met"});
  CHECK(one.pairs[0].x.language == "de");
  CHECK(one.pairs[0].id == 0);

  write_text(dir / "empty.jsonl", "");
  const auto empty = load_parallel_jsonl(dir / "empty.jsonl");
  CHECK(empty.pairs.empty());
  CHECK(empty.skipped == 0);

  write_text(dir / "three.jsonl",
             R"({"src":"a b","tgt":"x y","src_lang":"de","tgt_lang":"en"})" "\n"
             R"({"src":"broken",)" "\n"
             R"({"src":"c","tgt":"z","src_lang":"de","tgt_lang":"en","id":77})" "\n");
  const auto three = load_parallel_jsonl(dir / "three.jsonl");
  CHECK(three.pairs.size() == 2);
  CHECK(three.skipped == 1);
  CHECK(three.skipped_lines == std::vector<std::size_t>{2});
  CHECK(three.pairs[1].id == 1);

  CHECK_THROWS(load_parallel_jsonl(dir / "missing.jsonl"));
}

TEST_CASE("load_parallel_jsonl: more than 10% malformed is fatal and names lines") {
  TempDir dir("corpus");
  std::string text;
  for (int k = 0; k < 30; ++k) {
    if (k % 5 == 0) {
      text += "not json\n";
    } else {
      text += R"({"src":"a","tgt":"b","src_lang":"de","tgt_lang":"en"})" "\n";
    }
  }
  write_text(dir / "bad.jsonl", text);
  try {
    load_parallel_jsonl(dir / "bad.jsonl");
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find(" 1 6 11") != std::string::npos);
  }
  // Same language on both sides is malformed too.
  write_text(dir / "same.jsonl", R"({"src":"a","tgt":"b","src_lang":"en","tgt_lang":"en"})" "\n"
                                 R"({"src":"a","tgt":"b","src_lang":"de","tgt_lang":"en"})" "\n");
  CHECK(load_parallel_jsonl(dir / "same.jsonl").skipped == 1);
}

TEST_CASE("load_parallel_two_file and load_monolingual") {
  TempDir dir("corpus");
  write_text(dir / "c.de", "Die Katze .\n\nHallo Welt\n");
  write_text(dir / "c.en", "The cat.\nempty\nHello world\n");
  const auto c = load_parallel_two_file(dir / "c", "de", "en");
  REQUIRE(c.pairs.size() == 2);
  CHECK(c.skipped == 1);
  CHECK(c.pairs[0].y.tokens == Tokens{"The", "cat", "."});
  CHECK(c.pairs[1].x.language == "de");

  write_text(dir / "c.fr", "une\n");
  CHECK_THROWS_AS(load_parallel_two_file(dir / "c", "de", "fr"), std::runtime_error);
  CHECK_THROWS_AS(load_parallel_two_file(dir / "c", "de", "it"), std::runtime_error);

  std::string longline;
  for (int k = 0; k < 200; ++k) longline += "w ";
  write_text(dir / "mono.txt", "first line\n\n" + longline + "\n");
  const auto mono = load_monolingual(dir / "mono.txt", "en");
  REQUIRE(mono.sentences.size() == 2);
  CHECK(mono.skipped == 1);
  CHECK(mono.truncated == 1);
  CHECK(mono.sentences[1].size() == kMaxSentenceTokens);
  CHECK(mono.sentences[0].text() == "first line");
  CHECK(mono.sentences[1].id == 2);
}
