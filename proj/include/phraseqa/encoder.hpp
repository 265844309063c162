// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "phraseqa/corpus.hpp"
#include "phraseqa/nn.hpp"

namespace phraseqa {

struct EncoderConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int max_positions = 512 + 2;
  int vocab_size = 0;
  double dropout_rate = 0.1;
  double layer_norm_eps = 1e-5;

  void validate() const;
};

// Token ids with CLS/SEP framing, segment ids and an attention mask
// (1 = visible key, 0 = padding).
struct PackedInput {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> segments;
  std::vector<std::uint8_t> attend;

  std::size_t size() const { return ids.size(); }
  std::size_t visible() const;
};

// [CLS] seq [SEP], all segment 0.
PackedInput pack_single(std::span<const TokenId> seq, int max_positions);

// [CLS] first [SEP] second [SEP]; second and its SEP are segment 1. When the
// framed length overflows and truncate_first is set, `first` loses trailing
// tokens; TooLong is raised if that is not enough or not allowed.
PackedInput pack_pair(std::span<const TokenId> first, std::span<const TokenId> second, int max_positions,
                      bool truncate_first = true);

// Appends PAD positions (masked out of attention) up to `length`.
void pad_to(PackedInput& input, std::size_t length);

struct EncoderLayerTrace {
  Matrix input;
  AttentionCache attention;
  Matrix attention_dropout;
  LayerNormCache norm1;
  Matrix hidden;  // output of the first add&norm
  Matrix ff_pre;  // pre-activation of the first feed-forward affine
  Matrix ff_act;
  Matrix ff_dropout;
  LayerNormCache norm2;
};

struct EncoderTrace {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> segments;
  std::vector<std::uint8_t> attend;
  Matrix embedding_dropout;
  std::vector<EncoderLayerTrace> layers;
};

// Token + learned position + segment embeddings followed by post-norm
// transformer blocks (attention -> add&norm -> GELU feed-forward -> add&norm).
// Parameters live in a caller-owned ParamSet under `prefix`.
class Encoder {
 public:
  Encoder() = default;
  Encoder(ParamSet& params, const EncoderConfig& config, const std::string& prefix = "enc.");

  void init(ParamSet& params, Rng& rng) const;

  const EncoderConfig& config() const { return config_; }

  // Inference: dropout disabled.
  Matrix encode(const ParamSet& params, const PackedInput& input) const;
  // Training forward; dropout is applied when `dropout_rng` is non-null.
  Matrix forward(const ParamSet& params, const PackedInput& input, Rng* dropout_rng, EncoderTrace& trace) const;
  void backward(const ParamSet& params, GradSet& grads, const EncoderTrace& trace, const Matrix& d_output) const;

  ParamId token_embedding() const { return token_embedding_; }
  ParamId position_embedding() const { return position_embedding_; }
  ParamId segment_embedding() const { return segment_embedding_; }

 private:
  struct Layer {
    AttentionParams attention;
    LayerNorm norm1;
    Affine ff1;
    Affine ff2;
    LayerNorm norm2;
  };

  Matrix run(const ParamSet& params, const PackedInput& input, Rng* dropout_rng, EncoderTrace* trace) const;

  EncoderConfig config_;
  ParamId token_embedding_ = 0;
  ParamId position_embedding_ = 0;
  ParamId segment_embedding_ = 0;
  std::vector<Layer> layers_;
};

}  // namespace phraseqa
