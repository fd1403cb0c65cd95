#pragma once

#include <string>
#include <vector>

#include "phrasal/encoder.h"

namespace testutil {

// Encoder with no attention layers whose token states are centered one-hot
// vectors, and whose phrase vector is the state of the first token. Distinct
// tokens give near-orthogonal phrase vectors of equal norm, so a query's
// nearest entry is one starting with the same token. Every span scores
// sigmoid(seg_bias).
inline phrasal::PhraseModel toy_model(const std::vector<std::string>& tokens, float seg_bias = 3.0f) {
  using namespace phrasal;
  PhraseModel m;
  m.vocab.intern(PhraseModel::kUnknown);
  for (const auto& t : tokens) m.vocab.intern(t);
  EncoderConfig cfg;
  cfg.vocab_size = static_cast<std::uint32_t>(m.vocab.size());
  cfg.d = 64;
  cfg.o = 64;
  cfg.layers = 0;
  cfg.heads = 1;
  cfg.max_positions = 128;
  cfg.align_hidden = false;
  if (cfg.vocab_size > cfg.d) throw std::invalid_argument("toy_model supports at most 63 tokens");
  m.params = zero_params<float>(cfg);
  for (std::uint32_t id = 0; id < cfg.vocab_size; ++id) {
    m.params.tok_emb.row(id).setConstant(-1.0f / float(cfg.d));
    m.params.tok_emb(id, id) += 1.0f;
  }
  m.params.emb_ln_g.setOnes();
  for (std::uint32_t c = 0; c < cfg.o; ++c) m.params.align_w2(c, c) = 1.0f;
  m.params.seg_b(0) = seg_bias;
  return m;
}

}  // namespace testutil
