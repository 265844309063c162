// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "phraseqa/encoder.hpp"

#include <algorithm>

#include "phraseqa/errors.hpp"

namespace phraseqa {

void EncoderConfig::validate() const {
  if (d_model <= 0 || n_layers < 0 || n_heads <= 0 || d_ff <= 0)
    fail(ErrorCode::kConfigError, "encoder dimensions must be positive");
  if (d_model % n_heads != 0) fail(ErrorCode::kConfigError, "encoder.d_model must be divisible by encoder.n_heads");
  if (max_positions < 2) fail(ErrorCode::kConfigError, "encoder.max_positions must be >= 2");
  if (vocab_size < 4) fail(ErrorCode::kConfigError, "encoder vocab_size must cover the special tokens");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) fail(ErrorCode::kConfigError, "encoder.dropout must lie in [0, 1)");
}

std::size_t PackedInput::visible() const {
  return static_cast<std::size_t>(std::count_if(attend.begin(), attend.end(), [](std::uint8_t a) { return a != 0; }));
}

PackedInput pack_single(std::span<const TokenId> seq, int max_positions) {
  if (seq.size() + 2 > static_cast<std::size_t>(max_positions))
    fail(ErrorCode::kTooLong, "sequence of " + std::to_string(seq.size()) + " tokens exceeds max_positions - 2 = " +
                                  std::to_string(max_positions - 2));
  PackedInput p;
  p.ids.reserve(seq.size() + 2);
  p.ids.push_back(Vocab::kCls);
  p.ids.insert(p.ids.end(), seq.begin(), seq.end());
  p.ids.push_back(Vocab::kSep);
  p.segments.assign(p.ids.size(), 0);
  p.attend.assign(p.ids.size(), 1);
  return p;
}

PackedInput pack_pair(std::span<const TokenId> first, std::span<const TokenId> second, int max_positions,
                      bool truncate_first) {
  const auto limit = static_cast<std::size_t>(max_positions);
  std::size_t keep_first = first.size();
  if (first.size() + second.size() + 3 > limit) {
    if (!truncate_first || second.size() + 3 > limit)
      fail(ErrorCode::kTooLong, "pair of " + std::to_string(first.size()) + "+" + std::to_string(second.size()) +
                                    " tokens exceeds max_positions " + std::to_string(max_positions));
    keep_first = limit - 3 - second.size();
  }
  PackedInput p;
  p.ids.reserve(keep_first + second.size() + 3);
  p.ids.push_back(Vocab::kCls);
  p.ids.insert(p.ids.end(), first.begin(), first.begin() + static_cast<std::ptrdiff_t>(keep_first));
  p.ids.push_back(Vocab::kSep);
  const std::size_t first_len = p.ids.size();
  p.ids.insert(p.ids.end(), second.begin(), second.end());
  p.ids.push_back(Vocab::kSep);
  p.segments.assign(p.ids.size(), 1);
  std::fill(p.segments.begin(), p.segments.begin() + static_cast<std::ptrdiff_t>(first_len), 0);
  p.attend.assign(p.ids.size(), 1);
  return p;
}

void pad_to(PackedInput& input, std::size_t length) {
  while (input.ids.size() < length) {
    input.ids.push_back(Vocab::kPad);
    input.segments.push_back(0);
    input.attend.push_back(0);
  }
}

Encoder::Encoder(ParamSet& params, const EncoderConfig& config, const std::string& prefix) : config_(config) {
  config_.validate();
  const Eigen::Index d = config_.d_model;
  token_embedding_ = params.add(prefix + "token_embedding", config_.vocab_size, d);
  position_embedding_ = params.add(prefix + "position_embedding", config_.max_positions, d);
  segment_embedding_ = params.add(prefix + "segment_embedding", 2, d);
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = prefix + "layer" + std::to_string(l);
    Layer layer;
    layer.attention = AttentionParams::create(params, p + ".attention", d);
    layer.norm1 = LayerNorm::create(params, p + ".norm1", d, config_.layer_norm_eps);
    layer.ff1 = Affine::create(params, p + ".ff1", d, config_.d_ff);
    layer.ff2 = Affine::create(params, p + ".ff2", config_.d_ff, d);
    layer.norm2 = LayerNorm::create(params, p + ".norm2", d, config_.layer_norm_eps);
    layers_.push_back(layer);
  }
}

void Encoder::init(ParamSet& params, Rng& rng) const {
  init_normal(params[token_embedding_], rng, 0.1);
  init_normal(params[position_embedding_], rng, 0.1);
  init_normal(params[segment_embedding_], rng, 0.1);
  for (const auto& layer : layers_) {
    layer.attention.init(params, rng);
    layer.norm1.init(params);
    layer.ff1.init(params, rng);
    layer.ff2.init(params, rng);
    layer.norm2.init(params);
  }
}

Matrix Encoder::encode(const ParamSet& params, const PackedInput& input) const {
  return run(params, input, nullptr, nullptr);
}

Matrix Encoder::forward(const ParamSet& params, const PackedInput& input, Rng* dropout_rng,
                        EncoderTrace& trace) const {
  return run(params, input, dropout_rng, &trace);
}

Matrix Encoder::run(const ParamSet& params, const PackedInput& input, Rng* dropout_rng, EncoderTrace* trace) const {
  const auto len = static_cast<Eigen::Index>(input.size());
  require_shape(input.segments.size() == input.size() && input.attend.size() == input.size(),
                "packed input fields differ in length");
  if (len > config_.max_positions)
    fail(ErrorCode::kTooLong, "packed length " + std::to_string(len) + " exceeds max_positions");

  const Matrix& tok = params.value(token_embedding_);
  const Matrix& pos = params.value(position_embedding_);
  const Matrix& seg = params.value(segment_embedding_);
  Matrix x(len, config_.d_model);
  for (Eigen::Index i = 0; i < len; ++i) {
    const TokenId id = input.ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= tok.rows()) fail(ErrorCode::kUnknownTokenId, "token id " + std::to_string(id));
    const auto s = input.segments[static_cast<std::size_t>(i)];
    if (s > 1) fail(ErrorCode::kShapeMismatch, "segment id must be 0 or 1");
    x.row(i) = tok.row(id) + pos.row(i) + seg.row(s);
  }

  const double rate = config_.dropout_rate;
  if (trace) {
    trace->ids = input.ids;
    trace->segments = input.segments;
    trace->attend = input.attend;
    trace->layers.assign(layers_.size(), EncoderLayerTrace{});
    x = dropout(x, rate, dropout_rng, &trace->embedding_dropout);
  }

  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    EncoderLayerTrace* lt = trace ? &trace->layers[l] : nullptr;
    if (lt) lt->input = x;
    Matrix a = multi_head_self_attention(params, layer.attention, x, config_.n_heads, input.attend,
                                         lt ? &lt->attention : nullptr);
    if (lt) a = dropout(a, rate, dropout_rng, &lt->attention_dropout);
    Matrix h = layer.norm1.forward(params, x + a, lt ? &lt->norm1 : nullptr);
    Matrix pre = layer.ff1.forward(params, h);
    Matrix act = gelu(pre);
    Matrix f = layer.ff2.forward(params, act);
    if (lt) {
      f = dropout(f, rate, dropout_rng, &lt->ff_dropout);
      lt->hidden = h;
      lt->ff_pre = std::move(pre);
      lt->ff_act = std::move(act);
    }
    x = layer.norm2.forward(params, h + f, lt ? &lt->norm2 : nullptr);
  }
  return x;
}

void Encoder::backward(const ParamSet& params, GradSet& grads, const EncoderTrace& trace,
                       const Matrix& d_output) const {
  Matrix dx = d_output;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const Layer& layer = layers_[li];
    const EncoderLayerTrace& lt = trace.layers[li];
    // x_out = norm2(h + drop(ff2(gelu(ff1(h)))))
    const Matrix d_sum2 = layer.norm2.backward(params, grads, lt.norm2, dx);
    const Matrix d_f = d_sum2.cwiseProduct(lt.ff_dropout);
    const Matrix d_act = layer.ff2.backward(params, grads, lt.ff_act, d_f);
    const Matrix d_pre = gelu_backward(lt.ff_pre, d_act);
    Matrix d_h = d_sum2 + layer.ff1.backward(params, grads, lt.hidden, d_pre);
    // h = norm1(x + drop(attn(x)))
    const Matrix d_sum1 = layer.norm1.backward(params, grads, lt.norm1, d_h);
    const Matrix d_a = d_sum1.cwiseProduct(lt.attention_dropout);
    dx = d_sum1 + multi_head_self_attention_backward(params, layer.attention, grads, lt.attention,
                                                     config_.n_heads, d_a);
  }
  dx = dx.cwiseProduct(trace.embedding_dropout);
  Matrix& d_tok = grads[token_embedding_];
  Matrix& d_pos = grads[position_embedding_];
  Matrix& d_seg = grads[segment_embedding_];
  for (Eigen::Index i = 0; i < dx.rows(); ++i) {
    d_tok.row(trace.ids[static_cast<std::size_t>(i)]) += dx.row(i);
    d_pos.row(i) += dx.row(i);
    d_seg.row(trace.segments[static_cast<std::size_t>(i)]) += dx.row(i);
  }
}

}  // namespace phraseqa
