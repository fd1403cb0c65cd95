#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "phrasal/encoder.h"
#include "phrasal/extract.h"

namespace phrasal {

struct TrainConfig {
  double learning_rate = 5e-5;
  float dropout = 0.2f;
  std::uint32_t batch_size = 64;  // sentence pairs per step
  std::uint32_t steps = 2000;
  double beta = 1.0;  // weight of the segmentation loss
  std::uint32_t max_pairs_per_sentence = 4;
  double temperature = 1.0;
  std::uint64_t seed = 1;
  std::uint32_t max_phrase_len = 8;  // negative span universe for segmentation
  // Use z on target phrases in the contrastive denominator (the printed
  // form) instead of z' everywhere on the target side.
  bool literal_denominator_masks = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;  // throws std::invalid_argument
};

enum class Side : std::uint8_t { x, y };

struct BatchSentence {
  std::uint32_t source = 0;   // which training source (language pair)
  std::uint32_t sent_id = 0;  // SentencePair id within that source
  std::string x_lang, y_lang;
  std::vector<std::uint32_t> x, y;  // encoder token ids
};

struct BatchPair {
  std::uint32_t slot = 0;  // index into TrainingBatch::sentences
  Span src;
  Span tgt;
};

struct SegSpan {
  std::uint32_t slot = 0;
  Side side = Side::x;
  Span span;
  int label = 0;
};

struct TrainingBatch {
  std::vector<BatchSentence> sentences;
  std::vector<BatchPair> pairs;  // P_pair, K = pairs.size()
  std::vector<SegSpan> seg;      // S
};

// One language pair's corpus together with its extracted phrase pairs.
struct TrainingSource {
  std::span<const SentencePair> corpus;
  std::span<const PhrasePair> pairs;
};

/// One epoch of batches: sentence pairs from every source shuffled together,
/// at most cfg.max_pairs_per_sentence phrase pairs drawn per sentence, and
/// balanced segmentation spans on both sides. Sentences without phrase pairs
/// are skipped. Deterministic in (cfg.seed, epoch).
std::vector<TrainingBatch> make_batches(std::span<const TrainingSource> sources, const PhraseModel& model,
                                        const TrainConfig& cfg, std::uint64_t epoch);

// ---- loss primitives over phrase vectors and logits (64-bit) ----

/// -(1/K) sum_i log softmax_j(a_i . den_j / tau)[numerator i], where the
/// numerator score of row i is a_i . num_i / tau. Gradients are accumulated
/// when the output pointers are non-null.
double contrastive_direction(const Matrix<double>& a, const Matrix<double>& num, const Matrix<double>& den,
                             double temperature, Matrix<double>* d_a, Matrix<double>* d_num,
                             Matrix<double>* d_den);

/// L_{x->y} + L_{y->x} with all target-side vectors under the same mask.
double symmetric_contrastive_loss(const Matrix<double>& hx, const Matrix<double>& hy, double temperature,
                                  Matrix<double>* d_hx = nullptr, Matrix<double>* d_hy = nullptr);

// Mean binary cross-entropy with probabilities clamped to [1e-7, 1-1e-7].
double bce_loss(std::span<const double> logits, std::span<const int> labels,
                std::span<double> d_logits = {});

struct LossOptions {
  double beta = 1.0;
  double temperature = 1.0;
  bool literal_denominator_masks = false;
  bool with_align = true;
  bool with_seg = true;
};

struct LossValue {
  double align = 0;
  double seg = 0;
  double total = 0;
};

/// Encodes the batch (x under z, y under z'), evaluates L_align + beta*L_seg
/// and, when `grads` is given, accumulates the exact gradient into it.
/// Throws std::domain_error on a non-finite loss.
template <typename T>
LossValue batch_loss(const TrainingBatch& batch, const EncoderParams<T>& params, const DropoutMask& z,
                     const DropoutMask& z_prime, const LossOptions& opts, EncoderParams<T>* grads);

double alignment_loss(const TrainingBatch& batch, const EncoderParams<float>& params, const DropoutMask& z,
                      const DropoutMask& z_prime, const TrainConfig& cfg);
// Every span in S is scored under z.
double segmentation_loss(const TrainingBatch& batch, const EncoderParams<float>& params, const DropoutMask& z);

struct OptimizerState {
  EncoderParams<float> m;
  EncoderParams<float> v;
  std::uint64_t step = 0;

  static OptimizerState for_params(const EncoderParams<float>& p);
};

struct TrainMetrics {
  std::uint64_t step = 0;
  double l_align = 0;
  double l_seg = 0;
  double l_total = 0;
};

// Masks used at a given optimizer step.
std::pair<DropoutMask, DropoutMask> step_masks(const TrainConfig& cfg, std::uint64_t step);

/// Combined loss, backprop, one Adam update. Throws std::domain_error and
/// leaves params untouched when the loss or any gradient is non-finite.
TrainMetrics train_step(const TrainingBatch& batch, EncoderParams<float>& params, OptimizerState& opt,
                        const TrainConfig& cfg);

void adam_update(EncoderParams<float>& params, const EncoderParams<float>& grads, OptimizerState& opt,
                 const TrainConfig& cfg);

/// Runs cfg.steps optimizer steps, cycling through reshuffled epochs.
std::vector<TrainMetrics> train(PhraseModel& model, std::span<const TrainingSource> sources,
                                const TrainConfig& cfg,
                                const std::function<void(const TrainMetrics&)>& on_step = {});

void write_metrics_line(std::ostream& out, const TrainMetrics& m);

}  // namespace phrasal
