#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <set>
#include <sstream>

#include "phrasal/synthetic.h"
#include "phrasal/trainer.h"

using namespace phrasal;

namespace {

Matrix<double> random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Matrix<double> m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = dist(rng);
  return m;
}

// Softmax cross-entropy written out term by term.
double reference_direction(const Matrix<double>& a, const Matrix<double>& num, const Matrix<double>& den, double tau) {
  const Eigen::Index k = a.rows();
  double loss = 0;
  for (Eigen::Index i = 0; i < k; ++i) {
    double pos = 0;
    for (Eigen::Index c = 0; c < a.cols(); ++c) pos += a(i, c) * num(i, c);
    long double z = 0;
    for (Eigen::Index j = 0; j < k; ++j) {
      double s = 0;
      for (Eigen::Index c = 0; c < a.cols(); ++c) s += a(i, c) * den(j, c);
      z += std::exp(static_cast<long double>(s / tau));
    }
    loss += -(pos / tau - std::log(static_cast<double>(z)));
  }
  return loss / double(k);
}

EncoderConfig small_config(std::uint32_t vocab) {
  EncoderConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.o = 4;
  cfg.ffn = 16;
  cfg.max_positions = 32;
  cfg.dropout = 0.2f;
  return cfg;
}

struct Fixture {
  SyntheticCorpus syn;
  std::vector<PhrasePair> pairs;
  PhraseModel model;

  explicit Fixture(std::size_t n_pairs, std::uint32_t d = 8, std::uint64_t seed = 1) {
    SyntheticConfig sc;
    sc.train_pairs = n_pairs;
    sc.heldout_pairs = 5;
    sc.mono_sentences = 10;
    sc.distractors = 10;
    sc.min_units = 3;
    sc.max_units = 6;
    syn = make_synthetic(sc);
    ExtractionConfig ec;
    ec.max_phrase_len = 4;
    pairs = extract_corpus(syn.train, syn.train_alignment, ec);
    model.vocab = make_encoder_vocab(syn.train);
    auto cfg = small_config(static_cast<std::uint32_t>(model.vocab.size()));
    cfg.d = d;
    cfg.ffn = 2 * d;
    model.params = init_params<float>(cfg, seed);
  }

  std::vector<TrainingSource> sources() const { return {TrainingSource{syn.train, pairs}}; }
};

std::vector<const float*> tensors(const EncoderParams<float>& p, std::vector<Eigen::Index>* sizes = nullptr) {
  std::vector<const float*> out;
  for_each_tensor(p, [&](const std::string&, const auto& t) {
    out.push_back(t.data());
    if (sizes) sizes->push_back(t.size());
  });
  return out;
}

bool bitwise_equal(const EncoderParams<float>& a, const EncoderParams<float>& b) {
  std::vector<Eigen::Index> sizes;
  const auto pa = tensors(a, &sizes), pb = tensors(b);
  for (std::size_t k = 0; k < pa.size(); ++k) {
    if (std::memcmp(pa[k], pb[k], sizeof(float) * sizes[k]) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("TrainConfig validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.learning_rate == 5e-5);
  CHECK(cfg.beta == 1.0);
  CHECK(cfg.dropout == 0.2f);
  cfg.temperature = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.beta = -1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("contrastive loss: K=1 is zero, K=2 hand-set example") {
  std::mt19937_64 rng(1);
  const auto x = random_matrix(1, 5, rng), y = random_matrix(1, 5, rng);
  CHECK(symmetric_contrastive_loss(x, y, 1.0) == 0.0);

  Matrix<double> a(2, 2), b(2, 2);
  a << 1, 0, 0, 1;
  b << 2, 0, 0, 2;
  const double expect = -std::log(std::exp(2.0) / (std::exp(2.0) + 1.0));
  CHECK(expect == doctest::Approx(0.1269).epsilon(1e-3));
  CHECK(contrastive_direction(a, b, b, 1.0, nullptr, nullptr, nullptr) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(symmetric_contrastive_loss(a, b, 1.0) == doctest::Approx(2 * expect).epsilon(1e-14));
}

TEST_CASE("contrastive loss: K=8 random batches match the brute-force softmax") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_matrix(8, 6, rng, 2.0), num = random_matrix(8, 6, rng, 2.0), den = random_matrix(8, 6, rng, 2.0);
    for (double tau : {1.0, 0.5, 3.0}) {
      const double got = contrastive_direction(a, num, den, tau, nullptr, nullptr, nullptr);
      CHECK(got == doctest::Approx(reference_direction(a, num, den, tau)).epsilon(1e-6));
      // Standard form: positives sit inside the denominator, so the loss is non-negative.
      CHECK(contrastive_direction(a, num, num, tau, nullptr, nullptr, nullptr) >= 0.0);
    }
    // Swapping the roles of x and y leaves the symmetric loss unchanged.
    CHECK(symmetric_contrastive_loss(a, num, 1.0) == doctest::Approx(symmetric_contrastive_loss(num, a, 1.0)).epsilon(1e-12));
  }
  // Large scores stay finite through log-sum-exp.
  Matrix<double> big = Matrix<double>::Identity(3, 3) * 100.0;
  CHECK(std::isfinite(symmetric_contrastive_loss(big, big, 1.0)));
  Matrix<double> inf = big;
  inf(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(symmetric_contrastive_loss(inf, big, 1.0), std::domain_error);
}

TEST_CASE("contrastive loss: gradients match finite differences") {
  std::mt19937_64 rng(3);
  const auto a = random_matrix(5, 4, rng), num = random_matrix(5, 4, rng), den = random_matrix(5, 4, rng);
  Matrix<double> da = Matrix<double>::Zero(5, 4), dn = da, dd = da;
  contrastive_direction(a, num, den, 0.7, &da, &dn, &dd);
  const double h = 1e-6;
  for (int which = 0; which < 3; ++which) {
    for (Eigen::Index k = 0; k < 20; ++k) {
      Matrix<double> aa = a, nn = num, ee = den;
      Matrix<double>& m = which == 0 ? aa : which == 1 ? nn : ee;
      const double saved = m.data()[k];
      m.data()[k] = saved + h;
      const double up = contrastive_direction(aa, nn, ee, 0.7, nullptr, nullptr, nullptr);
      m.data()[k] = saved - h;
      const double down = contrastive_direction(aa, nn, ee, 0.7, nullptr, nullptr, nullptr);
      const double an = (which == 0 ? da : which == 1 ? dn : dd).data()[k];
      CHECK((up - down) / (2 * h) == doctest::Approx(an).epsilon(1e-6));
    }
  }
}

TEST_CASE("bce_loss: ln 2 at zero logits, limits, scalar oracle, clamp") {
  const std::vector<double> zeros(6, 0.0);
  const std::vector<int> labels{1, 0, 1, 1, 0, 0};
  CHECK(bce_loss(zeros, labels) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  std::vector<double> perfect;
  for (int t : labels) perfect.push_back(t ? 40.0 : -40.0);
  CHECK(bce_loss(perfect, labels) < 1e-6);

  std::mt19937_64 rng(4);
  std::normal_distribution<double> dist(0, 3);
  std::vector<double> logits(10);
  std::vector<int> lab(10);
  for (int k = 0; k < 10; ++k) logits[k] = dist(rng), lab[k] = int(rng() % 2);
  double ref = 0;
  for (int k = 0; k < 10; ++k) {
    const double p = std::clamp(1 / (1 + std::exp(-logits[k])), 1e-7, 1 - 1e-7);
    ref -= lab[k] ? std::log(p) : std::log(1 - p);
  }
  std::vector<double> grad(10);
  CHECK(bce_loss(logits, lab, grad) == doctest::Approx(ref / 10).epsilon(1e-12));
  for (int k = 0; k < 10; ++k) CHECK(grad[k] == doctest::Approx((1 / (1 + std::exp(-logits[k])) - lab[k]) / 10).epsilon(1e-9));

  // Clamped: a confidently wrong logit costs at most -log(1e-7).
  const std::vector<double> wrong{-1000.0};
  const std::vector<int> one{1};
  CHECK(bce_loss(wrong, one) == doctest::Approx(-std::log(1e-7)).epsilon(1e-9));
  CHECK_THROWS_AS(bce_loss(wrong, labels), std::invalid_argument);
}

TEST_CASE("make_batches: cap, determinism, skipping and balanced segmentation") {
  SentencePair sp;
  sp.x = make_sentence("a b c d e f", "de", 0);
  sp.y = make_sentence("u v w x y z", "en", 0);
  SentencePair empty = sp;
  empty.id = 1;
  const std::vector<SentencePair> corpus{sp, empty};
  std::vector<PhrasePair> pairs;
  for (std::uint32_t k = 0; k < 10; ++k) pairs.push_back({k, 0, {k % 6, k % 6}, {(k + k / 6) % 6, (k + k / 6) % 6}});
  PhraseModel model;
  model.vocab = make_encoder_vocab(corpus);
  model.params = init_params<float>(small_config(static_cast<std::uint32_t>(model.vocab.size())), 1);
  const std::vector<TrainingSource> sources{{corpus, pairs}};
  TrainConfig cfg;
  cfg.max_pairs_per_sentence = 4;
  const auto batches = make_batches(sources, model, cfg, 0);
  REQUIRE(batches.size() == 1);
  CHECK(batches[0].sentences.size() == 1);  // sentence 1 has no phrase pairs
  CHECK(batches[0].pairs.size() == 4);
  std::set<std::pair<Span, Span>> drawn;
  for (const auto& p : batches[0].pairs) drawn.insert({p.src, p.tgt});
  CHECK(drawn.size() == 4);
  for (Side side : {Side::x, Side::y}) {
    int pos = 0, neg = 0;
    for (const auto& s : batches[0].seg) {
      if (s.side == side) (s.label ? pos : neg)++;
    }
    CHECK(pos == 6);
    CHECK(neg == 6);
  }
  const auto again = make_batches(sources, model, cfg, 0);
  CHECK(again[0].pairs.size() == batches[0].pairs.size());
  for (std::size_t k = 0; k < again[0].pairs.size(); ++k) {
    CHECK(again[0].pairs[k].src == batches[0].pairs[k].src);
    CHECK(again[0].pairs[k].tgt == batches[0].pairs[k].tgt);
  }
  cfg.max_pairs_per_sentence = 20;
  CHECK(make_batches(sources, model, cfg, 0)[0].pairs.size() == 10);
}

TEST_CASE("make_batches: two corpora interleave, replay is identical") {
  Fixture de(60), cs(60);
  for (auto& p : cs.syn.train) p.x.language = "cs";
  PhraseModel model = de.model;
  const std::vector<TrainingSource> sources{{de.syn.train, de.pairs}, {cs.syn.train, cs.pairs}};
  TrainConfig cfg;
  cfg.batch_size = 16;
  const auto a = make_batches(sources, model, cfg, 3);
  const auto b = make_batches(sources, model, cfg, 3);
  REQUIRE(a.size() == b.size());
  std::size_t mixed = 0, total = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    std::set<std::string> langs;
    for (std::size_t i = 0; i < a[k].sentences.size(); ++i) {
      langs.insert(a[k].sentences[i].x_lang);
      CHECK(a[k].sentences[i].sent_id == b[k].sentences[i].sent_id);
      CHECK(a[k].sentences[i].source == b[k].sentences[i].source);
      total++;
    }
    CHECK(a[k].pairs.size() == b[k].pairs.size());
    mixed += langs.size() == 2;
  }
  CHECK(total == 120);
  CHECK(mixed >= a.size() - 1);
  // A different epoch reshuffles.
  const auto c = make_batches(sources, model, cfg, 4);
  bool differs = false;
  for (std::size_t i = 0; i < c[0].sentences.size(); ++i) {
    differs = differs || c[0].sentences[i].sent_id != a[0].sentences[i].sent_id;
  }
  CHECK(differs);
}

TEST_CASE("batch_loss: combined gradient matches finite differences in 64-bit") {
  Fixture f(12);
  TrainConfig cfg;
  cfg.batch_size = 3;
  const auto batches = make_batches(f.sources(), f.model, cfg, 0);
  const auto& batch = batches[0];
  REQUIRE(batch.pairs.size() >= 2);
  const auto params = cast_params<double>(f.model.params);
  const DropoutMask z(1, 0.2f), zp(2, 0.2f);
  for (bool literal : {false, true}) {
    LossOptions opts;
    opts.literal_denominator_masks = literal;
    opts.beta = 0.8;
    auto grads = zeros_like(params);
    const auto v = batch_loss<double>(batch, params, z, zp, opts, &grads);
    CHECK(v.total == doctest::Approx(v.align + 0.8 * v.seg).epsilon(1e-14));
    CHECK(v.align >= 0.0);
    auto p = params;
    std::vector<double*> coords, gcoords;
    for_each_tensor(p, [&](const std::string&, auto& t) {
      for (Eigen::Index k = 0; k < t.size(); ++k) coords.push_back(t.data() + k);
    });
    for_each_tensor(grads, [&](const std::string&, auto& t) {
      for (Eigen::Index k = 0; k < t.size(); ++k) gcoords.push_back(t.data() + k);
    });
    std::mt19937_64 rng(5);
    std::size_t nonzero = 0;
    for (int trial = 0; trial < 60; ++trial) {
      // Half the probes on coordinates with a gradient, the rest anywhere.
      std::size_t c = rng() % coords.size();
      if (trial % 2 == 0) {
        while (*gcoords[c] == 0.0) c = rng() % coords.size();
      }
      const double saved = *coords[c], h = 1e-6;
      *coords[c] = saved + h;
      const double up = batch_loss<double>(batch, p, z, zp, opts, nullptr).total;
      *coords[c] = saved - h;
      const double down = batch_loss<double>(batch, p, z, zp, opts, nullptr).total;
      *coords[c] = saved;
      const double fd = (up - down) / (2 * h);
      nonzero += *gcoords[c] != 0.0;
      INFO("literal " << literal << " coordinate " << c);
      CHECK(std::abs(fd - *gcoords[c]) <= 1e-4 * std::max(1.0, std::abs(fd)));
    }
    CHECK(nonzero >= 30);
  }
}

TEST_CASE("batch_loss: one pair gives zero alignment loss; zero head gives ln 2") {
  Fixture f(8);
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.max_pairs_per_sentence = 1;
  const auto batches = make_batches(f.sources(), f.model, cfg, 0);
  REQUIRE(batches[0].pairs.size() == 1);
  const DropoutMask z(1, 0.2f), zp(2, 0.2f);
  CHECK(alignment_loss(batches[0], f.model.params, z, zp, cfg) == 0.0);
  auto zero_head = f.model.params;
  zero_head.seg_w.setZero();
  zero_head.seg_b.setZero();
  CHECK(segmentation_loss(batches[0], zero_head, z) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("train_step: lr=0 keeps parameters, beta=0 equals alignment-only, NaN rejected") {
  Fixture f(20);
  TrainConfig cfg;
  cfg.batch_size = 8;
  const auto batches = make_batches(f.sources(), f.model, cfg, 0);

  cfg.learning_rate = 0;
  auto p = f.model.params;
  auto opt = OptimizerState::for_params(p);
  const auto m = train_step(batches[0], p, opt, cfg);
  CHECK(bitwise_equal(p, f.model.params));
  CHECK(m.step == 1);
  CHECK(m.l_total == doctest::Approx(m.l_align + m.l_seg));

  cfg.learning_rate = 1e-3;
  cfg.beta = 0;
  auto a = f.model.params;
  auto opt_a = OptimizerState::for_params(a);
  train_step(batches[0], a, opt_a, cfg);
  CHECK_FALSE(bitwise_equal(a, f.model.params));

  auto b = f.model.params;
  auto opt_b = OptimizerState::for_params(b);
  const auto [z, zp] = step_masks(cfg, 0);
  LossOptions only_align;
  only_align.with_seg = false;
  auto grads = zeros_like(b);
  batch_loss<float>(batches[0], b, z, zp, only_align, &grads);
  adam_update(b, grads, opt_b, cfg);
  CHECK(bitwise_equal(a, b));

  auto bad = f.model.params;
  bad.layers[0].w1(0, 0) = std::numeric_limits<float>::quiet_NaN();
  const auto before = bad;
  auto opt_bad = OptimizerState::for_params(bad);
  CHECK_THROWS_AS(train_step(batches[0], bad, opt_bad, cfg), std::domain_error);
  CHECK(opt_bad.step == 0);
  CHECK(std::isnan(bad.layers[0].w1(0, 0)));
  bad.layers[0].w1(0, 0) = 0;
  auto restored = before;
  restored.layers[0].w1(0, 0) = 0;
  CHECK(bitwise_equal(bad, restored));
}

TEST_CASE("adam_update: first step moves each coordinate by lr against the gradient sign") {
  auto p = zero_params<float>(small_config(5));
  auto g = zeros_like(p);
  g.seg_w(0) = 3.0f;
  g.seg_w(1) = -0.01f;
  auto opt = OptimizerState::for_params(p);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  adam_update(p, g, opt, cfg);
  CHECK(p.seg_w(0) == doctest::Approx(-0.1).epsilon(1e-5));
  CHECK(p.seg_w(1) == doctest::Approx(0.1).epsilon(1e-4));
  CHECK(p.seg_w(2) == 0.0f);
  CHECK(opt.step == 1);
}

TEST_CASE("train: 200 steps on 50 pairs lower the loss; runs are reproducible") {
  Fixture f(50, 16);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 10;
  cfg.steps = 200;
  cfg.max_phrase_len = 4;
  auto model = f.model;
  std::ostringstream log;
  const auto history = train(model, f.sources(), cfg, [&](const TrainMetrics& m) { write_metrics_line(log, m); });
  REQUIRE(history.size() == 200);
  double first = 0, last = 0;
  for (int k = 0; k < 20; ++k) first += history[k].l_total, last += history[180 + k].l_total;
  MESSAGE("mean loss over steps 1-20: " << first / 20 << ", steps 181-200: " << last / 20);
  CHECK(last < first);
  CHECK(history.back().step == 200);
  CHECK(log.str().rfind(R"({"step":1,"l_align":)", 0) == 0);

  cfg.steps = 30;
  auto m1 = f.model, m2 = f.model;
  const auto h1 = train(m1, f.sources(), cfg);
  const auto h2 = train(m2, f.sources(), cfg);
  CHECK(bitwise_equal(m1.params, m2.params));
  CHECK(h1.back().l_total == h2.back().l_total);
}
