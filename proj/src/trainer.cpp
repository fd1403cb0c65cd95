#include "phrasal/trainer.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace phrasal {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0)) throw std::invalid_argument("learning rate must be >= 0");
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw std::invalid_argument("dropout must be in [0, 1)");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(beta >= 0)) throw std::invalid_argument("beta must be >= 0");
  if (!(temperature > 0)) throw std::invalid_argument("temperature must be > 0");
  if (max_pairs_per_sentence == 0) throw std::invalid_argument("max pairs per sentence must be positive");
  if (max_phrase_len == 0) throw std::invalid_argument("max phrase length must be positive");
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::vector<TrainingBatch> make_batches(std::span<const TrainingSource> sources, const PhraseModel& model,
                                        const TrainConfig& cfg, std::uint64_t epoch) {
  struct Item {
    std::uint32_t source;
    std::uint32_t sent;
  };
  std::vector<std::vector<std::vector<std::uint32_t>>> by_sentence(sources.size());
  std::vector<Item> items;
  for (std::uint32_t s = 0; s < sources.size(); ++s) {
    const auto& src = sources[s];
    by_sentence[s].resize(src.corpus.size());
    for (std::uint32_t k = 0; k < src.pairs.size(); ++k) {
      const auto sid = src.pairs[k].sent_id;
      if (sid >= src.corpus.size()) throw std::invalid_argument("phrase pair refers to a missing sentence");
      by_sentence[s][sid].push_back(k);
    }
    for (std::uint32_t i = 0; i < src.corpus.size(); ++i) {
      if (!by_sentence[s][i].empty()) items.push_back({s, i});
    }
  }
  std::mt19937_64 rng(mix(cfg.seed, epoch));
  std::shuffle(items.begin(), items.end(), rng);

  std::vector<TrainingBatch> batches;
  for (std::size_t b = 0; b < items.size(); b += cfg.batch_size) {
    TrainingBatch batch;
    const std::size_t end = std::min(items.size(), b + cfg.batch_size);
    for (std::size_t k = b; k < end; ++k) {
      const auto [s, sid] = items[k];
      const SentencePair& sp = sources[s].corpus[sid];
      std::mt19937_64 local(mix(mix(cfg.seed, epoch), (std::uint64_t(s) << 32) | sid));
      const auto slot = static_cast<std::uint32_t>(batch.sentences.size());
      BatchSentence bs;
      bs.source = s;
      bs.sent_id = sid;
      bs.x_lang = sp.x.language;
      bs.y_lang = sp.y.language;
      bs.x = model.ids(sp.x);
      bs.y = model.ids(sp.y);
      batch.sentences.push_back(std::move(bs));

      std::vector<std::uint32_t> chosen = by_sentence[s][sid];
      const std::size_t take = std::min<std::size_t>(chosen.size(), cfg.max_pairs_per_sentence);
      for (std::size_t i = 0; i < take; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, chosen.size() - 1);
        std::swap(chosen[i], chosen[pick(local)]);
      }
      std::vector<Span> xs, ys;
      for (auto idx : by_sentence[s][sid]) {
        xs.push_back(sources[s].pairs[idx].src);
        ys.push_back(sources[s].pairs[idx].tgt);
      }
      for (std::size_t i = 0; i < take; ++i) {
        const auto& p = sources[s].pairs[chosen[i]];
        batch.pairs.push_back({slot, p.src, p.tgt});
      }
      for (const auto& ls : segmentation_examples(xs, static_cast<std::uint32_t>(sp.x.size()),
                                                  cfg.max_phrase_len, local)) {
        batch.seg.push_back({slot, Side::x, ls.span, ls.label});
      }
      for (const auto& ls : segmentation_examples(ys, static_cast<std::uint32_t>(sp.y.size()),
                                                  cfg.max_phrase_len, local)) {
        batch.seg.push_back({slot, Side::y, ls.span, ls.label});
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

double contrastive_direction(const Matrix<double>& a, const Matrix<double>& num, const Matrix<double>& den,
                             double temperature, Matrix<double>* d_a, Matrix<double>* d_num,
                             Matrix<double>* d_den) {
  const Eigen::Index k = a.rows();
  if (k == 0) return 0.0;
  const double inv_t = 1.0 / temperature;
  const Matrix<double> scores = (a * den.transpose()) * inv_t;
  double loss = 0;
  Matrix<double> probs(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double positive = a.row(i).dot(num.row(i)) * inv_t;
    const double mx = scores.row(i).maxCoeff();
    probs.row(i) = (scores.row(i).array() - mx).exp();
    const double sum = probs.row(i).sum();
    probs.row(i) /= sum;
    const double lse = mx + std::log(sum);
    if (!std::isfinite(positive) || !std::isfinite(lse)) {
      throw std::domain_error("non-finite contrastive score");
    }
    loss -= positive - lse;
  }
  loss /= static_cast<double>(k);
  const double scale = inv_t / static_cast<double>(k);
  if (d_a) *d_a += (probs * den - num) * scale;
  if (d_num) *d_num -= a * scale;
  if (d_den) *d_den += probs.transpose() * a * scale;
  return loss;
}

double symmetric_contrastive_loss(const Matrix<double>& hx, const Matrix<double>& hy, double temperature,
                                  Matrix<double>* d_hx, Matrix<double>* d_hy) {
  return contrastive_direction(hx, hy, hy, temperature, d_hx, d_hy, d_hy) +
         contrastive_direction(hy, hx, hx, temperature, d_hy, d_hx, d_hx);
}

double bce_loss(std::span<const double> logits, std::span<const int> labels, std::span<double> d_logits) {
  if (logits.size() != labels.size()) throw std::invalid_argument("bce_loss: size mismatch");
  if (logits.empty()) return 0.0;
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  const double n = static_cast<double>(logits.size());
  double loss = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double p_raw = sigmoid(logits[k]);
    const double p = std::clamp(p_raw, lo, hi);
    const double t = labels[k];
    loss -= t * std::log(p) + (1 - t) * std::log(1 - p);
    if (!d_logits.empty()) {
      // Zero slope where the clamp is active.
      d_logits[k] = (p_raw > lo && p_raw < hi) ? (p_raw - t) / n : 0.0;
    }
  }
  return loss / n;
}

template <typename T>
LossValue batch_loss(const TrainingBatch& batch, const EncoderParams<T>& params, const DropoutMask& z,
                     const DropoutMask& z_prime, const LossOptions& opts, EncoderParams<T>* grads) {
  const std::size_t n = batch.sentences.size();
  const bool literal = opts.with_align && opts.literal_denominator_masks;

  // Forward passes: [0] x under z, [1] y under z', and for the literal
  // denominators [2] y under z, [3] x under z'.
  const std::size_t passes = literal ? 4 : 2;
  std::vector<std::vector<ForwardCache<T>>> caches(passes, std::vector<ForwardCache<T>>(n));
  std::vector<std::vector<Matrix<T>>> hidden(passes, std::vector<Matrix<T>>(n));
  std::vector<std::vector<char>> needed(passes, std::vector<char>(n, 0));
  for (const auto& p : batch.pairs) {
    for (std::size_t q = 0; q < passes; ++q) needed[q][p.slot] = 1;
  }
  if (opts.with_seg) {
    for (const auto& s : batch.seg) needed[s.side == Side::x ? 0 : 1][s.slot] = 1;
  }
  for (std::size_t q = 0; q < passes; ++q) {
    for (std::size_t k = 0; k < n; ++k) {
      if (!needed[q][k]) continue;
      const bool x_side = q == 0 || q == 3;
      const DropoutMask& base = (q == 0 || q == 2) ? z : z_prime;
      const auto& ids = x_side ? batch.sentences[k].x : batch.sentences[k].y;
      hidden[q][k] = encode_context<T>(ids, params, base.derive(k), grads ? &caches[q][k] : nullptr);
    }
  }

  LossValue value;
  std::vector<std::vector<Matrix<T>>> d_hidden;
  if (grads) {
    d_hidden.assign(passes, std::vector<Matrix<T>>(n));
    for (std::size_t q = 0; q < passes; ++q) {
      for (std::size_t k = 0; k < n; ++k) {
        if (needed[q][k]) d_hidden[q][k] = Matrix<T>::Zero(hidden[q][k].rows(), hidden[q][k].cols());
      }
    }
  }

  if (opts.with_align && !batch.pairs.empty()) {
    const Eigen::Index K = static_cast<Eigen::Index>(batch.pairs.size());
    const Eigen::Index o = params.config.o;
    // Row blocks: x under z, y under z', y under z, x under z'.
    std::vector<Matrix<double>> vec(passes, Matrix<double>(K, o));
    for (Eigen::Index i = 0; i < K; ++i) {
      const auto& p = batch.pairs[i];
      for (std::size_t q = 0; q < passes; ++q) {
        const Span sp = (q == 0 || q == 3) ? p.src : p.tgt;
        vec[q].row(i) = phrase_rep(hidden[q][p.slot], sp.s, sp.e, params).template cast<double>();
      }
    }
    std::vector<Matrix<double>> d_vec;
    if (grads) d_vec.assign(passes, Matrix<double>::Zero(K, o));
    auto ptr = [&](std::size_t q) { return grads ? &d_vec[q] : nullptr; };
    if (literal) {
      value.align = contrastive_direction(vec[0], vec[1], vec[2], opts.temperature, ptr(0), ptr(1), ptr(2)) +
                    contrastive_direction(vec[1], vec[0], vec[3], opts.temperature, ptr(1), ptr(0), ptr(3));
    } else {
      value.align = symmetric_contrastive_loss(vec[0], vec[1], opts.temperature, ptr(0), ptr(1));
    }
    if (grads) {
      for (Eigen::Index i = 0; i < K; ++i) {
        const auto& p = batch.pairs[i];
        for (std::size_t q = 0; q < passes; ++q) {
          const Span sp = (q == 0 || q == 3) ? p.src : p.tgt;
          const RowVector<T> d = d_vec[q].row(i).template cast<T>();
          phrase_rep_backward(hidden[q][p.slot], sp.s, sp.e, params, d, *grads, d_hidden[q][p.slot]);
        }
      }
    }
  }

  if (opts.with_seg && !batch.seg.empty()) {
    std::vector<double> logits, d_logits;
    std::vector<int> labels;
    for (const auto& s : batch.seg) {
      const std::size_t q = s.side == Side::x ? 0 : 1;
      logits.push_back(static_cast<double>(span_logit(hidden[q][s.slot], s.span.s, s.span.e, params)));
      labels.push_back(s.label);
    }
    d_logits.assign(logits.size(), 0.0);
    value.seg = bce_loss(logits, labels, grads ? std::span<double>(d_logits) : std::span<double>());
    if (grads && opts.beta != 0.0) {
      for (std::size_t k = 0; k < batch.seg.size(); ++k) {
        const auto& s = batch.seg[k];
        const std::size_t q = s.side == Side::x ? 0 : 1;
        span_logit_backward(hidden[q][s.slot], s.span.s, s.span.e, params,
                            static_cast<T>(opts.beta * d_logits[k]), *grads, d_hidden[q][s.slot]);
      }
    }
  }

  value.total = value.align + opts.beta * value.seg;
  if (!std::isfinite(value.total)) throw std::domain_error("non-finite training loss");

  if (grads) {
    for (std::size_t q = 0; q < passes; ++q) {
      for (std::size_t k = 0; k < n; ++k) {
        if (needed[q][k]) backward_context(caches[q][k], d_hidden[q][k], params, *grads);
      }
    }
  }
  return value;
}

template LossValue batch_loss<float>(const TrainingBatch&, const EncoderParams<float>&, const DropoutMask&,
                                     const DropoutMask&, const LossOptions&, EncoderParams<float>*);
template LossValue batch_loss<double>(const TrainingBatch&, const EncoderParams<double>&, const DropoutMask&,
                                      const DropoutMask&, const LossOptions&, EncoderParams<double>*);

double alignment_loss(const TrainingBatch& batch, const EncoderParams<float>& params, const DropoutMask& z,
                      const DropoutMask& z_prime, const TrainConfig& cfg) {
  LossOptions opts;
  opts.temperature = cfg.temperature;
  opts.literal_denominator_masks = cfg.literal_denominator_masks;
  opts.with_seg = false;
  return batch_loss<float>(batch, params, z, z_prime, opts, nullptr).align;
}

double segmentation_loss(const TrainingBatch& batch, const EncoderParams<float>& params, const DropoutMask& z) {
  LossOptions opts;
  opts.with_align = false;
  return batch_loss<float>(batch, params, z, z, opts, nullptr).seg;
}

OptimizerState OptimizerState::for_params(const EncoderParams<float>& p) {
  return OptimizerState{zeros_like(p), zeros_like(p), 0};
}

std::pair<DropoutMask, DropoutMask> step_masks(const TrainConfig& cfg, std::uint64_t step) {
  return {DropoutMask(mix(mix(cfg.seed, step), 1), cfg.dropout),
          DropoutMask(mix(mix(cfg.seed, step), 2), cfg.dropout)};
}

void adam_update(EncoderParams<float>& params, const EncoderParams<float>& grads, OptimizerState& opt,
                 const TrainConfig& cfg) {
  opt.step += 1;
  const double t = static_cast<double>(opt.step);
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
  const auto b1 = static_cast<float>(cfg.adam_beta1);
  const auto b2 = static_cast<float>(cfg.adam_beta2);
  const auto lr = static_cast<float>(cfg.learning_rate);
  const auto eps = static_cast<float>(cfg.adam_eps);
  const auto ic1 = static_cast<float>(1.0 / c1);
  const auto ic2 = static_cast<float>(1.0 / c2);

  std::vector<float*> p_ptr, g_ptr, m_ptr, v_ptr;
  std::vector<Eigen::Index> sizes;
  for_each_tensor(params, [&](const std::string&, auto& x) {
    p_ptr.push_back(x.data());
    sizes.push_back(x.size());
  });
  for_each_tensor(grads, [&](const std::string&, const auto& x) { g_ptr.push_back(const_cast<float*>(x.data())); });
  for_each_tensor(opt.m, [&](const std::string&, auto& x) { m_ptr.push_back(x.data()); });
  for_each_tensor(opt.v, [&](const std::string&, auto& x) { v_ptr.push_back(x.data()); });

  for (std::size_t k = 0; k < p_ptr.size(); ++k) {
    for (Eigen::Index i = 0; i < sizes[k]; ++i) {
      const float g = g_ptr[k][i];
      float& m = m_ptr[k][i];
      float& v = v_ptr[k][i];
      m = b1 * m + (1.0f - b1) * g;
      v = b2 * v + (1.0f - b2) * g * g;
      const float mhat = m * ic1;
      const float vhat = v * ic2;
      p_ptr[k][i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

TrainMetrics train_step(const TrainingBatch& batch, EncoderParams<float>& params, OptimizerState& opt,
                        const TrainConfig& cfg) {
  const auto [z, z_prime] = step_masks(cfg, opt.step);
  LossOptions opts;
  opts.beta = cfg.beta;
  opts.temperature = cfg.temperature;
  opts.literal_denominator_masks = cfg.literal_denominator_masks;
  EncoderParams<float> grads = zeros_like(params);
  const LossValue value = batch_loss<float>(batch, params, z, z_prime, opts, &grads);

  bool finite = true;
  for_each_tensor(grads, [&](const std::string&, const auto& g) { finite = finite && g.allFinite(); });
  if (!finite) throw std::domain_error("non-finite gradient; step rejected");

  adam_update(params, grads, opt, cfg);
  return TrainMetrics{opt.step, value.align, value.seg, value.total};
}

std::vector<TrainMetrics> train(PhraseModel& model, std::span<const TrainingSource> sources,
                                const TrainConfig& cfg, const std::function<void(const TrainMetrics&)>& on_step) {
  cfg.validate();
  OptimizerState opt = OptimizerState::for_params(model.params);
  std::vector<TrainMetrics> history;
  history.reserve(cfg.steps);
  std::uint64_t epoch = 0;
  while (history.size() < cfg.steps) {
    const auto batches = make_batches(sources, model, cfg, epoch++);
    if (batches.empty()) throw std::invalid_argument("no training batches: no phrase pairs extracted");
    for (const auto& b : batches) {
      if (history.size() >= cfg.steps) break;
      history.push_back(train_step(b, model.params, opt, cfg));
      if (on_step) on_step(history.back());
    }
  }
  return history;
}

void write_metrics_line(std::ostream& out, const TrainMetrics& m) {
  nlohmann::ordered_json j{{"step", m.step}, {"l_align", m.l_align}, {"l_seg", m.l_seg}, {"l_total", m.l_total}};
  out << j.dump() << '\n';
}

}  // namespace phrasal
