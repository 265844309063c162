// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

// Question-agnostic answer-candidate extraction.
//
// A start head scores every context token. The conditional end head scores
// each position j from the pair (H[j], H[start]) so that P(e | s) depends on
// the chosen start; spans are decoded by a start beam of width s and an end
// beam of width e per start. The classic head scores ends independently of
// the start, P(e), and is kept as the comparison baseline.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "phraseqa/corpus.hpp"
#include "phraseqa/encoder.hpp"
#include "phraseqa/nn.hpp"

namespace phraseqa {

struct BeamConfig {
  int start_beam = 50;
  int end_beam = 2;
  int max_answer_tokens = 30;

  // Throws ConfigError unless s, e >= 1 and s * e >= k.
  void validate(std::size_t k) const;
};

struct SpanCandidate {
  std::size_t start = 0;
  std::size_t end = 0;
  double score = 0.0;  // log P(s) + log P(e | s), or log P(s) + log P(e) for the classic head
  std::size_t rank = 0;
};

// Number of spans [i, j] with 0 <= i <= j < m.
std::uint64_t count_naive_spans(std::uint64_t m);

// Collapses duplicate (start, end) pairs (keeping the best score), orders by
// score descending then (start, end) ascending, truncates to k and assigns
// contiguous ranks from 0.
std::vector<SpanCandidate> rank_spans(std::vector<SpanCandidate> spans, std::size_t k);

// Source of start and conditional end log-probabilities over a context of
// length() tokens. end_log_probs(s) is -inf outside the feasible window.
class SpanScorer {
 public:
  virtual ~SpanScorer() = default;
  virtual std::size_t length() const = 0;
  virtual std::vector<double> start_log_probs() const = 0;
  virtual std::vector<double> end_log_probs(std::size_t start) const = 0;
};

// Top-s starts, then the top-e feasible ends of each, ranked by joint score.
std::vector<SpanCandidate> beam_decode(const SpanScorer& scorer, const BeamConfig& config, std::size_t k);

enum class ClassicMode { kOptimal, kBeam };

// Independent start/end decoding. kOptimal enumerates every feasible span;
// kBeam applies the same top-s / top-e procedure as beam_decode.
std::vector<SpanCandidate> classic_decode(std::span<const double> start_log_probs,
                                          std::span<const double> end_log_probs, const BeamConfig& config,
                                          std::size_t k, ClassicMode mode);

// Scorer over raw logits: start logits (m) and one row of end logits per
// start (m x m). Used to drive the decoders without a model.
class LogitTableScorer : public SpanScorer {
 public:
  LogitTableScorer(std::vector<double> start_logits, Matrix end_logits, int max_answer_tokens);

  std::size_t length() const override { return start_logits_.size(); }
  std::vector<double> start_log_probs() const override;
  std::vector<double> end_log_probs(std::size_t start) const override;

 private:
  std::vector<double> start_logits_;
  Matrix end_logits_;
  int max_answer_tokens_;
};

struct ExtractorConfig {
  EncoderConfig encoder;
  int max_answer_tokens = 30;
};

struct ExtractorLoss {
  double start = 0.0;        // -log P(s*)
  double end = 0.0;          // -log P(e* | s*)
  double classic_end = 0.0;  // -log P_classic(e*), only when requested

  double conditional() const { return start + end; }
};

class ExtractorModel {
 public:
  explicit ExtractorModel(const ExtractorConfig& config);

  void init(Rng& rng);

  const ExtractorConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const Encoder& encoder() const { return encoder_; }

  // Encoder output rows of the context tokens (CLS/SEP dropped), m x d.
  Matrix context_embeddings(const TokenizedContext& ctx) const;

  std::vector<double> score_starts(const Matrix& h) const;
  std::vector<double> score_ends_conditional(const Matrix& h, std::size_t start) const;
  std::vector<double> score_ends_classic(const Matrix& h) const;

  std::vector<SpanCandidate> extract_beam(const TokenizedContext& ctx, const BeamConfig& config, std::size_t k) const;
  std::vector<SpanCandidate> extract_classic(const TokenizedContext& ctx, const BeamConfig& config, std::size_t k,
                                             ClassicMode mode) const;

  // -log P(s*) - log P(e* | s*), the end term teacher-forced on the gold start.
  double loss(const TokenizedContext& ctx, const GoldSpan& gold) const;
  ExtractorLoss loss_and_grad(const TokenizedContext& ctx, const GoldSpan& gold, GradSet& grads, Rng* dropout_rng,
                              bool with_classic_head) const;

 private:
  friend class ConditionalEndScorer;

  void check_gold(const TokenizedContext& ctx, const GoldSpan& gold) const;
  std::size_t window_end(std::size_t start, std::size_t m) const;

  ExtractorConfig config_;
  ParamSet params_;
  Encoder encoder_;
  Affine start_head_;
  Affine end_hidden_;  // 2d -> d over (H[j] ++ H[start])
  Affine end_out_;     // d -> 1
  Affine classic_hidden_;
  Affine classic_out_;
};

struct ExtractorEpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_em_recall = 0.0;
  double dev_f1_recall = 0.0;
};

struct ExtractorTrainConfig {
  int epochs = 2;
  std::size_t batch_size = 32;
  AdamWConfig optimizer{1e-4, 0.9, 0.999, 1e-8, 0.01};
  double warmup_fraction = 0.0;
  bool train_classic_head = true;
  std::uint64_t seed = 0;
  int threads = 1;
  BeamConfig beam;
  std::size_t dev_k = 10;
  std::function<void(const ExtractorEpochStats&)> on_epoch;
};

struct ExtractorTrainReport {
  std::vector<ExtractorEpochStats> epochs;
  int best_epoch = 0;  // 0 when no epoch ran
};

// Minibatch AdamW with a linear schedule. Keeps the parameters of the epoch
// with the best dev candidate recall@dev_k (the last epoch without dev data).
ExtractorTrainReport train_extractor(ExtractorModel& model, const TokenizedDataset& train,
                                     const TokenizedDataset* dev, const ExtractorTrainConfig& config);

// One candidate list per context of `dataset`, in context order.
std::vector<std::vector<SpanCandidate>> extract_all(const ExtractorModel& model, const TokenizedDataset& dataset,
                                                    const BeamConfig& config, std::size_t k, int threads);

// Runs `per_example(i, grads)` for i in [0, n) over static contiguous chunks,
// one gradient buffer per chunk, and adds the buffers into params in chunk
// order. Returns the sum of the per-example values.
double accumulate_gradients(ParamSet& params, std::size_t n, int threads,
                            const std::function<double(std::size_t, GradSet&)>& per_example);

}  // namespace phraseqa
