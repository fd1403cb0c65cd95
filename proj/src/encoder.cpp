#include "phrasal/encoder.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace phrasal {

void EncoderConfig::validate() const {
  if (vocab_size == 0) throw std::invalid_argument("encoder vocab_size must be positive");
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw std::invalid_argument("encoder hidden size must be divisible by the head count");
  }
  if (o == 0) throw std::invalid_argument("encoder output size o must be >= 1");
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw std::invalid_argument("dropout must be in [0, 1)");
  if (max_positions == 0) throw std::invalid_argument("max_positions must be positive");
}

namespace {

template <typename T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

constexpr double kLayerNormEps = 1e-5;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

template <typename T>
void layer_norm(const Matrix<T>& x, const RowVector<T>& g, const RowVector<T>& b, Matrix<T>& xhat,
                ColVector<T>& rstd, Matrix<T>& y) {
  const Eigen::Index n = x.rows(), d = x.cols();
  xhat.resize(n, d);
  rstd.resize(n);
  y.resize(n, d);
  for (Eigen::Index t = 0; t < n; ++t) {
    const T mu = x.row(t).mean();
    const T var = (x.row(t).array() - mu).square().mean();
    rstd(t) = T(1) / std::sqrt(var + T(kLayerNormEps));
    xhat.row(t) = (x.row(t).array() - mu) * rstd(t);
    y.row(t) = xhat.row(t).cwiseProduct(g) + b;
  }
}

// dy -> dx, accumulating dg and db.
template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& xhat, const ColVector<T>& rstd,
                              const RowVector<T>& g, RowVector<T>& dg, RowVector<T>& db) {
  const Eigen::Index n = dy.rows(), d = dy.cols();
  dg += (dy.cwiseProduct(xhat)).colwise().sum();
  db += dy.colwise().sum();
  Matrix<T> dx(n, d);
  for (Eigen::Index t = 0; t < n; ++t) {
    const RowVector<T> dxhat = dy.row(t).cwiseProduct(g);
    const T m1 = dxhat.mean();
    const T m2 = dxhat.cwiseProduct(xhat.row(t)).mean();
    dx.row(t) = rstd(t) * (dxhat.array() - m1 - xhat.row(t).array() * m2).matrix();
  }
  return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::tanh(T(kGeluC) * (x + T(0.044715) * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
  const T u = T(kGeluC) * (x + T(0.044715) * x * x * x);
  const T t = std::tanh(u);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * T(kGeluC) * (T(1) + T(3 * 0.044715) * x * x);
}

template <typename T>
Matrix<T> dropout_mask(const DropoutMask& mask, std::uint32_t site, Eigen::Index rows, Eigen::Index cols,
                       std::uint64_t offset = 0) {
  Matrix<T> m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    m.data()[k] = static_cast<T>(mask.scale(site, offset + static_cast<std::uint64_t>(k)));
  }
  return m;
}

template <typename T>
void layer_forward(const LayerParams<T>& L, const EncoderConfig& cfg, std::uint32_t layer,
                   const DropoutMask& mask, const Matrix<T>& x, LayerCache<T>& c, Matrix<T>& out) {
  const Eigen::Index n = x.rows();
  const Eigen::Index dh = cfg.d / cfg.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  c.x_in = x;
  c.q = (x * L.wq).rowwise() + L.bq;
  c.k = (x * L.wk).rowwise() + L.bk;
  c.v = (x * L.wv).rowwise() + L.bv;
  c.ctx.resize(n, cfg.d);
  c.attn.assign(cfg.heads, Matrix<T>());
  c.attn_mask.assign(mask.active() ? cfg.heads : 0, Matrix<T>());
  for (std::uint32_t h = 0; h < cfg.heads; ++h) {
    Matrix<T> s = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
    for (Eigen::Index i = 0; i < n; ++i) {
      const T mx = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - mx).exp();
      s.row(i) /= s.row(i).sum();
    }
    c.attn[h] = s;
    if (mask.active()) {
      c.attn_mask[h] = dropout_mask<T>(mask, DropoutMask::attention_site(layer), n, n,
                                       static_cast<std::uint64_t>(h) * n * n);
      s = s.cwiseProduct(c.attn_mask[h]);
    }
    c.ctx.middleCols(h * dh, dh) = s * c.v.middleCols(h * dh, dh);
  }
  const Matrix<T> r1 = x + ((c.ctx * L.wo).rowwise() + L.bo);
  layer_norm(r1, L.ln1_g, L.ln1_b, c.xhat1, c.rstd1, c.x1);
  c.f1 = (c.x1 * L.w1).rowwise() + L.b1;
  c.g = c.f1.unaryExpr([](T v) { return gelu(v); });
  Matrix<T> f2 = (c.g * L.w2).rowwise() + L.b2;
  if (mask.active()) {
    c.ffn_mask = dropout_mask<T>(mask, DropoutMask::ffn_site(layer), n, cfg.d);
    f2 = f2.cwiseProduct(c.ffn_mask);
  } else {
    c.ffn_mask.resize(0, 0);
  }
  const Matrix<T> r2 = c.x1 + f2;
  layer_norm(r2, L.ln2_g, L.ln2_b, c.xhat2, c.rstd2, out);
}

template <typename T>
Matrix<T> layer_backward(const LayerParams<T>& L, const EncoderConfig& cfg, const LayerCache<T>& c,
                         const Matrix<T>& d_out, LayerParams<T>& G) {
  const Eigen::Index n = c.x_in.rows();
  const Eigen::Index dh = cfg.d / cfg.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  const Matrix<T> dr2 = layer_norm_backward(d_out, c.xhat2, c.rstd2, L.ln2_g, G.ln2_g, G.ln2_b);
  Matrix<T> dx1 = dr2;
  Matrix<T> df2 = c.ffn_mask.size() ? Matrix<T>(dr2.cwiseProduct(c.ffn_mask)) : dr2;
  G.w2.noalias() += c.g.transpose() * df2;
  G.b2 += df2.colwise().sum();
  Matrix<T> dg = df2 * L.w2.transpose();
  const Matrix<T> df1 = dg.cwiseProduct(c.f1.unaryExpr([](T v) { return gelu_grad(v); }));
  G.w1.noalias() += c.x1.transpose() * df1;
  G.b1 += df1.colwise().sum();
  dx1.noalias() += df1 * L.w1.transpose();

  const Matrix<T> dr1 = layer_norm_backward(dx1, c.xhat1, c.rstd1, L.ln1_g, G.ln1_g, G.ln1_b);
  Matrix<T> dx = dr1;
  G.wo.noalias() += c.ctx.transpose() * dr1;
  G.bo += dr1.colwise().sum();
  const Matrix<T> dctx = dr1 * L.wo.transpose();

  Matrix<T> dq(n, cfg.d), dk(n, cfg.d), dv(n, cfg.d);
  for (std::uint32_t h = 0; h < cfg.heads; ++h) {
    const auto dctx_h = dctx.middleCols(h * dh, dh);
    const Matrix<T>& a = c.attn[h];
    const Matrix<T> a_used = c.attn_mask.empty() ? a : Matrix<T>(a.cwiseProduct(c.attn_mask[h]));
    Matrix<T> da = dctx_h * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh) = a_used.transpose() * dctx_h;
    if (!c.attn_mask.empty()) da = da.cwiseProduct(c.attn_mask[h]);
    Matrix<T> ds(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const T dot = da.row(i).dot(a.row(i));
      ds.row(i) = a.row(i).array() * (da.row(i).array() - dot);
    }
    ds *= scale;
    dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  G.wq.noalias() += c.x_in.transpose() * dq;
  G.wk.noalias() += c.x_in.transpose() * dk;
  G.wv.noalias() += c.x_in.transpose() * dv;
  G.bq += dq.colwise().sum();
  G.bk += dk.colwise().sum();
  G.bv += dv.colwise().sum();
  dx.noalias() += dq * L.wq.transpose();
  dx.noalias() += dk * L.wk.transpose();
  dx.noalias() += dv * L.wv.transpose();
  return dx;
}

template <typename T>
RowVector<T> head_input(const Matrix<T>& hidden, std::uint32_t a, std::uint32_t b) {
  if (a > b || b >= hidden.rows()) throw std::out_of_range("span outside the encoded sentence");
  const Eigen::Index d = hidden.cols();
  RowVector<T> in(2 * d);
  in.head(d) = hidden.row(a);
  in.tail(d) = hidden.row(b);
  return in;
}

}  // namespace

DropoutMask::DropoutMask(std::uint64_t seed, float rate) : seed_(seed), rate_(rate) {
  if (!(rate >= 0.0f && rate < 1.0f)) throw std::invalid_argument("dropout rate must be in [0, 1)");
}

DropoutMask DropoutMask::derive(std::uint64_t slot) const {
  DropoutMask m;
  m.seed_ = splitmix64(seed_ ^ splitmix64(slot + 0x632BE59BD9B4E019ULL));
  m.rate_ = rate_;
  return m;
}

double DropoutMask::scale(std::uint32_t site, std::uint64_t index) const {
  if (rate_ <= 0.0f) return 1.0;
  const std::uint64_t h = splitmix64(seed_ ^ splitmix64((std::uint64_t(site) << 40) ^ index));
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u < static_cast<double>(rate_) ? 0.0 : 1.0 / (1.0 - static_cast<double>(rate_));
}

template <typename T>
EncoderParams<T> zero_params(const EncoderConfig& cfg) {
  cfg.validate();
  const Eigen::Index d = cfg.d, f = cfg.ffn_dim(), d2 = 2 * cfg.d;
  EncoderParams<T> p;
  p.config = cfg;
  p.tok_emb = Matrix<T>::Zero(cfg.vocab_size, d);
  p.pos_emb = Matrix<T>::Zero(cfg.max_positions, d);
  p.emb_ln_g = RowVector<T>::Zero(d);
  p.emb_ln_b = RowVector<T>::Zero(d);
  p.layers.resize(cfg.layers);
  for (auto& L : p.layers) {
    for (Matrix<T>* w : {&L.wq, &L.wk, &L.wv, &L.wo}) *w = Matrix<T>::Zero(d, d);
    for (RowVector<T>* b : {&L.bq, &L.bk, &L.bv, &L.bo, &L.ln1_g, &L.ln1_b, &L.b2, &L.ln2_g, &L.ln2_b}) {
      *b = RowVector<T>::Zero(d);
    }
    L.w1 = Matrix<T>::Zero(d, f);
    L.b1 = RowVector<T>::Zero(f);
    L.w2 = Matrix<T>::Zero(f, d);
  }
  if (cfg.align_hidden) {
    p.align_w1 = Matrix<T>::Zero(d2, d2);
    p.align_b1 = RowVector<T>::Zero(d2);
  } else {
    p.align_w1 = Matrix<T>::Zero(0, 0);
    p.align_b1 = RowVector<T>::Zero(0);
  }
  p.align_w2 = Matrix<T>::Zero(d2, cfg.o);
  p.align_b2 = RowVector<T>::Zero(cfg.o);
  p.seg_w = RowVector<T>::Zero(d2);
  p.seg_b = RowVector<T>::Zero(1);
  return p;
}

template <typename T>
EncoderParams<T> init_params(const EncoderConfig& cfg, std::uint64_t seed) {
  EncoderParams<T> p = zero_params<T>(cfg);
  std::mt19937_64 rng(seed);
  auto fill = [&](auto& t, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = static_cast<T>(dist(rng));
  };
  const double d = cfg.d, f = cfg.ffn_dim();
  fill(p.tok_emb, 0.1);
  fill(p.pos_emb, 0.05);
  p.emb_ln_g.setOnes();
  for (auto& L : p.layers) {
    fill(L.wq, 1.0 / std::sqrt(d));
    fill(L.wk, 1.0 / std::sqrt(d));
    fill(L.wv, 1.0 / std::sqrt(d));
    fill(L.wo, 1.0 / std::sqrt(d));
    fill(L.w1, 1.0 / std::sqrt(d));
    fill(L.w2, 1.0 / std::sqrt(f));
    L.ln1_g.setOnes();
    L.ln2_g.setOnes();
  }
  if (cfg.align_hidden) fill(p.align_w1, 1.0 / std::sqrt(2 * d));
  fill(p.align_w2, 1.0 / std::sqrt(2 * d));
  fill(p.seg_w, 0.02);
  return p;
}

template <typename T>
Matrix<T> encode_context(std::span<const std::uint32_t> ids, const EncoderParams<T>& params,
                         const DropoutMask& mask, ForwardCache<T>* cache) {
  const EncoderConfig& cfg = params.config;
  const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
  if (n == 0) throw std::invalid_argument("cannot encode an empty sentence");
  if (ids.size() > cfg.max_positions) {
    throw std::invalid_argument("sentence of " + std::to_string(ids.size()) + " tokens exceeds " +
                                std::to_string(cfg.max_positions) + " positions");
  }
  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  c.ids.assign(ids.begin(), ids.end());

  Matrix<T> x(n, cfg.d);
  for (Eigen::Index t = 0; t < n; ++t) {
    if (ids[t] >= cfg.vocab_size) throw std::invalid_argument("token id outside the vocabulary");
    x.row(t) = params.tok_emb.row(ids[t]) + params.pos_emb.row(t);
  }
  Matrix<T> h;
  layer_norm(x, params.emb_ln_g, params.emb_ln_b, c.emb_xhat, c.emb_rstd, h);
  if (mask.active()) {
    c.emb_mask = dropout_mask<T>(mask, DropoutMask::kEmbeddingSite, n, cfg.d);
    h = h.cwiseProduct(c.emb_mask);
  } else {
    c.emb_mask.resize(0, 0);
  }
  c.layers.resize(cfg.layers);
  Matrix<T> next;
  for (std::uint32_t l = 0; l < cfg.layers; ++l) {
    layer_forward(params.layers[l], cfg, l, mask, h, c.layers[l], next);
    h.swap(next);
  }
  return h;
}

template <typename T>
void backward_context(const ForwardCache<T>& cache, const Matrix<T>& d_hidden,
                      const EncoderParams<T>& params, EncoderParams<T>& grads) {
  const EncoderConfig& cfg = params.config;
  Matrix<T> d = d_hidden;
  for (std::uint32_t l = cfg.layers; l-- > 0;) {
    d = layer_backward(params.layers[l], cfg, cache.layers[l], d, grads.layers[l]);
  }
  if (cache.emb_mask.size()) d = d.cwiseProduct(cache.emb_mask);
  const Matrix<T> dx = layer_norm_backward(d, cache.emb_xhat, cache.emb_rstd, params.emb_ln_g,
                                           grads.emb_ln_g, grads.emb_ln_b);
  for (Eigen::Index t = 0; t < dx.rows(); ++t) {
    grads.tok_emb.row(cache.ids[t]) += dx.row(t);
    grads.pos_emb.row(t) += dx.row(t);
  }
}

template <typename T>
RowVector<T> phrase_rep(const Matrix<T>& hidden, std::uint32_t s, std::uint32_t e,
                        const EncoderParams<T>& params) {
  const RowVector<T> in = head_input(hidden, s, e);
  if (params.config.align_hidden) {
    const RowVector<T> a = ((in * params.align_w1) + params.align_b1).array().tanh().matrix();
    return a * params.align_w2 + params.align_b2;
  }
  return in * params.align_w2 + params.align_b2;
}

template <typename T>
void phrase_rep_backward(const Matrix<T>& hidden, std::uint32_t s, std::uint32_t e,
                         const EncoderParams<T>& params, const RowVector<T>& d_out,
                         EncoderParams<T>& grads, Matrix<T>& d_hidden) {
  const RowVector<T> in = head_input(hidden, s, e);
  RowVector<T> d_in;
  if (params.config.align_hidden) {
    const RowVector<T> a = ((in * params.align_w1) + params.align_b1).array().tanh().matrix();
    grads.align_w2.noalias() += a.transpose() * d_out;
    grads.align_b2 += d_out;
    const RowVector<T> dz = (d_out * params.align_w2.transpose()).cwiseProduct(
        (RowVector<T>::Ones(a.size()) - a.cwiseProduct(a)));
    grads.align_w1.noalias() += in.transpose() * dz;
    grads.align_b1 += dz;
    d_in = dz * params.align_w1.transpose();
  } else {
    grads.align_w2.noalias() += in.transpose() * d_out;
    grads.align_b2 += d_out;
    d_in = d_out * params.align_w2.transpose();
  }
  const Eigen::Index d = hidden.cols();
  d_hidden.row(s) += d_in.head(d);
  d_hidden.row(e) += d_in.tail(d);
}

template <typename T>
T span_logit(const Matrix<T>& hidden, std::uint32_t i, std::uint32_t j, const EncoderParams<T>& params) {
  return head_input(hidden, i, j).dot(params.seg_w) + params.seg_b(0);
}

template <typename T>
void span_logit_backward(const Matrix<T>& hidden, std::uint32_t i, std::uint32_t j,
                         const EncoderParams<T>& params, T d_logit, EncoderParams<T>& grads,
                         Matrix<T>& d_hidden) {
  const RowVector<T> in = head_input(hidden, i, j);
  grads.seg_w += d_logit * in;
  grads.seg_b(0) += d_logit;
  const Eigen::Index d = hidden.cols();
  d_hidden.row(i) += d_logit * params.seg_w.head(d);
  d_hidden.row(j) += d_logit * params.seg_w.tail(d);
}

double sigmoid(double logit) {
  double p;
  if (logit >= 0) {
    p = 1.0 / (1.0 + std::exp(-logit));
  } else {
    const double z = std::exp(logit);
    p = z / (1.0 + z);
  }
  return std::clamp(p, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

std::vector<std::uint32_t> PhraseModel::ids(const Sentence& sentence) const {
  std::vector<std::uint32_t> out;
  out.reserve(sentence.size());
  for (const auto& t : sentence.tokens) out.push_back(vocab.id(t, 0));
  return out;
}

Matrix<float> PhraseModel::encode(const Sentence& sentence) const {
  const auto token_ids = ids(sentence);
  return encode_context<float>(token_ids, params, DropoutMask::none());
}

Vocabulary make_encoder_vocab(std::span<const Sentence> sentences) {
  Vocabulary v;
  v.intern(PhraseModel::kUnknown);
  for (const auto& s : sentences) {
    for (const auto& t : s.tokens) v.add(t);
  }
  return v;
}

Vocabulary make_encoder_vocab(std::span<const SentencePair> pairs) {
  Vocabulary v;
  v.intern(PhraseModel::kUnknown);
  for (const auto& p : pairs) {
    for (const auto& t : p.x.tokens) v.add(t);
    for (const auto& t : p.y.tokens) v.add(t);
  }
  return v;
}

#define PHRASAL_INSTANTIATE(T)                                                                      \
  template EncoderParams<T> zero_params<T>(const EncoderConfig&);                                   \
  template EncoderParams<T> init_params<T>(const EncoderConfig&, std::uint64_t);                    \
  template Matrix<T> encode_context<T>(std::span<const std::uint32_t>, const EncoderParams<T>&,     \
                                       const DropoutMask&, ForwardCache<T>*);                       \
  template void backward_context<T>(const ForwardCache<T>&, const Matrix<T>&,                       \
                                    const EncoderParams<T>&, EncoderParams<T>&);                    \
  template RowVector<T> phrase_rep<T>(const Matrix<T>&, std::uint32_t, std::uint32_t,               \
                                      const EncoderParams<T>&);                                     \
  template void phrase_rep_backward<T>(const Matrix<T>&, std::uint32_t, std::uint32_t,              \
                                       const EncoderParams<T>&, const RowVector<T>&,                \
                                       EncoderParams<T>&, Matrix<T>&);                              \
  template T span_logit<T>(const Matrix<T>&, std::uint32_t, std::uint32_t, const EncoderParams<T>&); \
  template void span_logit_backward<T>(const Matrix<T>&, std::uint32_t, std::uint32_t,              \
                                       const EncoderParams<T>&, T, EncoderParams<T>&, Matrix<T>&);

PHRASAL_INSTANTIATE(float)
PHRASAL_INSTANTIATE(double)

#undef PHRASAL_INSTANTIATE

}  // namespace phrasal
