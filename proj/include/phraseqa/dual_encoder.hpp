// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

// Siamese encoding of answer candidates and questions into one vector space.
//
// A candidate is encoded as the pair (context, candidate tokens); a question
// as a single sequence. Both go through the same encoder and the same
// projection head, and the projected token embeddings are averaged.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "phraseqa/corpus.hpp"
#include "phraseqa/encoder.hpp"
#include "phraseqa/extractor.hpp"
#include "phraseqa/nn.hpp"

namespace phraseqa {

enum class Pooling {
  kPairAll,        // every visible position of the packed input
  kSecondSegment,  // segment-1 positions only (candidate tokens and their SEP)
};

struct DualEncoderConfig {
  EncoderConfig encoder;
  int dim = 64;
  Pooling pool = Pooling::kPairAll;
  bool truncate_first = true;
};

struct PhraseVector {
  std::vector<float> values;
  std::string ctx_id;
  std::size_t start = 0;
  std::size_t end = 0;
  std::string text;
};

struct QuestionVector {
  std::vector<float> values;
  std::string qid;
};

// Raw inner product accumulated in double.
double similarity(std::span<const float> g, std::span<const float> h);
double similarity(const QuestionVector& g, const PhraseVector& h);

struct PiqaLoss {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d similarity_i
};

// -s_gold + log sum_i exp(s_i), with max subtraction.
PiqaLoss piqa_loss(std::span<const double> similarities, std::size_t gold_index);
double piqa_loss(const QuestionVector& question, const std::vector<PhraseVector>& candidates, std::size_t gold_index);

// The parameters one tower resolves to.
struct TowerBinding {
  const ParamSet* params = nullptr;
  const Encoder* encoder = nullptr;
  const Affine* projection = nullptr;
};

struct PiqaTrainExample {
  std::size_t question_index = 0;  // into the owning TokenizedDataset
  std::vector<SpanCandidate> candidates;
  std::size_t gold_index = 0;
};

class DualEncoderModel {
 public:
  explicit DualEncoderModel(const DualEncoderConfig& config);

  void init(Rng& rng);

  const DualEncoderConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const Encoder& encoder() const { return encoder_; }
  const Affine& projection() const { return projection_; }

  TowerBinding question_tower() const { return {&params_, &encoder_, &projection_}; }
  TowerBinding candidate_tower() const { return {&params_, &encoder_, &projection_}; }

  PackedInput candidate_input(const TokenizedContext& ctx, const SpanCandidate& cand) const;
  PackedInput question_input(const TokenizedQuestion& q) const;

  PhraseVector encode_candidate(const ContextRecord& ctx, const SpanCandidate& cand) const;
  QuestionVector encode_question(const TokenizedQuestion& q, const std::string& qid = {}) const;

  // Pooled projection of a packed input, in double.
  RowVector embed(const PackedInput& input) const;

  // Candidate softmax loss of one example over its own candidate list;
  // gradients are added to `grads`.
  double example_loss_and_grad(const TokenizedDataset& data, const PiqaTrainExample& example, GradSet& grads,
                               std::uint64_t dropout_seed) const;
  double example_loss(const TokenizedDataset& data, const PiqaTrainExample& example) const;

  // Contexts longer than this recompute candidate forwards in the backward
  // pass instead of holding every trace.
  std::size_t keep_traces_up_to = 128;

 private:
  struct Forward {
    EncoderTrace trace;
    Matrix hidden;
    RowVector vec;
  };

  std::vector<std::uint8_t> pool_mask(const PackedInput& input) const;
  Forward forward(const PackedInput& input, Rng* dropout_rng) const;
  void backward(const PackedInput& input, const Forward& fwd, const RowVector& d_vec, GradSet& grads) const;

  DualEncoderConfig config_;
  ParamSet params_;
  Encoder encoder_;
  Affine projection_;
};

struct TrainingSet {
  std::vector<PiqaTrainExample> examples;
  std::size_t considered = 0;

  double retention() const {
    return considered == 0 ? 0.0 : static_cast<double>(examples.size()) / static_cast<double>(considered);
  }
};

// Keeps a question when one of the first n_train candidates of its context
// normalizes to its first gold answer; the first such rank is the gold index.
TrainingSet build_training_set(const TokenizedDataset& data,
                               const std::vector<std::vector<SpanCandidate>>& context_candidates,
                               std::size_t n_train);
TrainingSet build_training_set(const TokenizedDataset& data, const ExtractorModel& extractor, std::size_t n_train,
                               const BeamConfig& beam, int threads);

// Fraction of examples whose gold candidate has the highest similarity.
double top1_accuracy(const DualEncoderModel& model, const TokenizedDataset& data, const TrainingSet& set, int threads);

struct DualEpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_exact_match = 0.0;
  double dev_f1 = 0.0;
};

struct DualTrainConfig {
  int epochs = 5;
  std::size_t micro_batch = 4;
  std::size_t accumulation_steps = 8;
  AdamWConfig optimizer{1e-5, 0.9, 0.999, 1e-8, 0.01};
  double warmup_fraction = 0.0;
  std::uint64_t seed = 0;
  int threads = 1;
  std::function<void(const DualEpochStats&)> on_epoch;
};

struct DevSlice {
  const TokenizedDataset* data = nullptr;
  std::vector<std::vector<SpanCandidate>> context_candidates;
};

struct DualTrainReport {
  std::vector<DualEpochStats> epochs;
  int best_epoch = 0;
};

// AdamW on the candidate softmax loss. Micro-batch gradients are summed over
// accumulation_steps before each optimizer step. Keeps the epoch with the
// best end-to-end dev exact match (the last epoch without a dev slice).
DualTrainReport train_dual_encoder(DualEncoderModel& model, const TokenizedDataset& data, const TrainingSet& set,
                                   const DevSlice* dev, const DualTrainConfig& config);

}  // namespace phraseqa
