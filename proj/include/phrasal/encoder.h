#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "phrasal/corpus.h"

namespace phrasal {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

struct EncoderConfig {
  std::uint32_t vocab_size = 0;
  std::uint32_t d = 64;
  std::uint32_t layers = 2;
  std::uint32_t heads = 2;
  std::uint32_t o = 32;
  std::uint32_t ffn = 0;  // 0 means 4*d
  std::uint32_t max_positions = 128;
  float dropout = 0.2f;
  // false turns MLP_align into a single linear map 2d -> o.
  bool align_hidden = true;

  std::uint32_t ffn_dim() const { return ffn ? ffn : 4 * d; }
  void validate() const;  // throws std::invalid_argument
  bool operator==(const EncoderConfig&) const = default;
};

template <typename T>
struct LayerParams {
  Matrix<T> wq, wk, wv, wo;
  RowVector<T> bq, bk, bv, bo;
  RowVector<T> ln1_g, ln1_b;
  Matrix<T> w1;
  RowVector<T> b1;
  Matrix<T> w2;
  RowVector<T> b2;
  RowVector<T> ln2_g, ln2_b;
};

/// Trunk plus both heads. MLP_align and MLP_seg read the same trunk output.
template <typename T>
struct EncoderParams {
  EncoderConfig config;
  Matrix<T> tok_emb;  // vocab x d
  Matrix<T> pos_emb;  // max_positions x d
  RowVector<T> emb_ln_g, emb_ln_b;
  std::vector<LayerParams<T>> layers;
  Matrix<T> align_w1;  // 2d x 2d, empty without the hidden layer
  RowVector<T> align_b1;
  Matrix<T> align_w2;  // 2d x o
  RowVector<T> align_b2;
  RowVector<T> seg_w;  // 2d
  RowVector<T> seg_b;  // 1
};

// Visits every tensor as fn(name, tensor&) in a fixed order.
template <typename P, typename F>
void for_each_tensor(P& p, F&& fn) {
  fn(std::string("tok_emb"), p.tok_emb);
  fn(std::string("pos_emb"), p.pos_emb);
  fn(std::string("emb_ln.g"), p.emb_ln_g);
  fn(std::string("emb_ln.b"), p.emb_ln_b);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    fn(pre + "wq", L.wq);
    fn(pre + "bq", L.bq);
    fn(pre + "wk", L.wk);
    fn(pre + "bk", L.bk);
    fn(pre + "wv", L.wv);
    fn(pre + "bv", L.bv);
    fn(pre + "wo", L.wo);
    fn(pre + "bo", L.bo);
    fn(pre + "ln1.g", L.ln1_g);
    fn(pre + "ln1.b", L.ln1_b);
    fn(pre + "w1", L.w1);
    fn(pre + "b1", L.b1);
    fn(pre + "w2", L.w2);
    fn(pre + "b2", L.b2);
    fn(pre + "ln2.g", L.ln2_g);
    fn(pre + "ln2.b", L.ln2_b);
  }
  fn(std::string("align.w1"), p.align_w1);
  fn(std::string("align.b1"), p.align_b1);
  fn(std::string("align.w2"), p.align_w2);
  fn(std::string("align.b2"), p.align_b2);
  fn(std::string("seg.w"), p.seg_w);
  fn(std::string("seg.b"), p.seg_b);
}

template <typename T>
EncoderParams<T> init_params(const EncoderConfig& cfg, std::uint64_t seed);
// All tensors allocated with the right shapes and set to zero.
template <typename T>
EncoderParams<T> zero_params(const EncoderConfig& cfg);
template <typename T>
EncoderParams<T> zeros_like(const EncoderParams<T>& p) {
  return zero_params<T>(p.config);
}
template <typename U, typename T>
EncoderParams<U> cast_params(const EncoderParams<T>& p) {
  std::vector<const T*> src;
  for_each_tensor(p, [&](const std::string&, const auto& t) { src.push_back(t.data()); });
  EncoderParams<U> out = zero_params<U>(p.config);
  std::size_t k = 0;
  for_each_tensor(out, [&](const std::string&, auto& t) {
    const T* from = src[k++];
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<U>(from[i]);
  });
  return out;
}
template <typename T>
std::size_t parameter_count(const EncoderParams<T>& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

/// Seed-determined Bernoulli keep masks for every dropout site of one
/// forward pass. The default mask keeps everything.
class DropoutMask {
 public:
  DropoutMask() = default;
  DropoutMask(std::uint64_t seed, float rate);
  static DropoutMask none() { return {}; }

  // Independent mask for a sub-stream (one sentence of a batch, say).
  DropoutMask derive(std::uint64_t slot) const;
  bool active() const { return rate_ > 0.0f; }
  float rate() const { return rate_; }
  std::uint64_t seed() const { return seed_; }

  // 0 or 1/(1-rate) for element `index` of dropout site `site`.
  double scale(std::uint32_t site, std::uint64_t index) const;

  static constexpr std::uint32_t kEmbeddingSite = 0;
  static std::uint32_t attention_site(std::uint32_t layer) { return 1 + 2 * layer; }
  static std::uint32_t ffn_site(std::uint32_t layer) { return 2 + 2 * layer; }

 private:
  std::uint64_t seed_ = 0;
  float rate_ = 0.0f;
};

template <typename T>
struct LayerCache {
  Matrix<T> x_in, q, k, v;
  std::vector<Matrix<T>> attn;       // softmax per head
  std::vector<Matrix<T>> attn_mask;  // dropout scale per head (empty when inactive)
  Matrix<T> ctx;
  Matrix<T> xhat1;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd1;
  Matrix<T> x1, f1, g;
  Matrix<T> ffn_mask;
  Matrix<T> xhat2;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd2;
};

template <typename T>
struct ForwardCache {
  std::vector<std::uint32_t> ids;
  Matrix<T> emb_xhat;
  Eigen::Matrix<T, Eigen::Dynamic, 1> emb_rstd;
  Matrix<T> emb_mask;
  std::vector<LayerCache<T>> layers;
};

/// Contextual states H (|x| x d). Throws std::invalid_argument when the
/// sentence is empty, too long, or holds an id outside the vocabulary.
template <typename T>
Matrix<T> encode_context(std::span<const std::uint32_t> ids, const EncoderParams<T>& params,
                         const DropoutMask& mask, ForwardCache<T>* cache = nullptr);

/// Accumulates dLoss/dtheta into `grads` given dLoss/dH.
template <typename T>
void backward_context(const ForwardCache<T>& cache, const Matrix<T>& d_hidden,
                      const EncoderParams<T>& params, EncoderParams<T>& grads);

/// MLP_align([H_s; H_e]).
template <typename T>
RowVector<T> phrase_rep(const Matrix<T>& hidden, std::uint32_t s, std::uint32_t e,
                        const EncoderParams<T>& params);
template <typename T>
void phrase_rep_backward(const Matrix<T>& hidden, std::uint32_t s, std::uint32_t e,
                         const EncoderParams<T>& params, const RowVector<T>& d_out,
                         EncoderParams<T>& grads, Matrix<T>& d_hidden);

/// MLP_seg([H_i; H_j]), the pre-sigmoid score.
template <typename T>
T span_logit(const Matrix<T>& hidden, std::uint32_t i, std::uint32_t j, const EncoderParams<T>& params);
template <typename T>
void span_logit_backward(const Matrix<T>& hidden, std::uint32_t i, std::uint32_t j,
                         const EncoderParams<T>& params, T d_logit, EncoderParams<T>& grads,
                         Matrix<T>& d_hidden);

// Logistic function kept strictly inside (0, 1).
double sigmoid(double logit);

template <typename T>
double span_prob(const Matrix<T>& hidden, std::uint32_t i, std::uint32_t j, const EncoderParams<T>& params) {
  return sigmoid(static_cast<double>(span_logit(hidden, i, j, params)));
}

/// Trained encoder with its token map. Token id 0 is the unknown token.
struct PhraseModel {
  static constexpr std::string_view kUnknown = "<unk>";

  EncoderParams<float> params;
  Vocabulary vocab;
  bool lowercase = false;

  std::vector<std::uint32_t> ids(const Sentence& sentence) const;
  Matrix<float> encode(const Sentence& sentence) const;  // dropout-free
};

/// Vocabulary with <unk> at id 0 followed by every token of `sentences`.
Vocabulary make_encoder_vocab(std::span<const Sentence> sentences);
Vocabulary make_encoder_vocab(std::span<const SentencePair> pairs);

/// Single-file checkpoint: 8-byte magic, u64 header length, JSON header
/// (config, vocabulary, tensor names/shapes/offsets), then little-endian
/// float32 payloads.
void save_checkpoint(const std::filesystem::path& path, const PhraseModel& model);
PhraseModel load_checkpoint(const std::filesystem::path& path);
// Accepts either the checkpoint file or a directory holding model.ckpt.
std::filesystem::path resolve_checkpoint_path(const std::filesystem::path& path);

}  // namespace phrasal
