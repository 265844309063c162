// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "phraseqa/dual_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <spdlog/spdlog.h>

#include "phraseqa/errors.hpp"
#include "phraseqa/evalkit.hpp"
#include "phraseqa/metrics.hpp"

namespace phraseqa {
namespace {

std::vector<float> to_float(const RowVector& v) {
  std::vector<float> out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(v(i));
  return out;
}

}  // namespace

double similarity(std::span<const float> g, std::span<const float> h) {
  if (g.size() != h.size())
    fail(ErrorCode::kDimensionMismatch, "similarity between dimensions " + std::to_string(g.size()) + " and " +
                                            std::to_string(h.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) s += static_cast<double>(g[i]) * static_cast<double>(h[i]);
  return s;
}

double similarity(const QuestionVector& g, const PhraseVector& h) { return similarity(g.values, h.values); }

PiqaLoss piqa_loss(std::span<const double> similarities, std::size_t gold_index) {
  if (gold_index >= similarities.size())
    fail(ErrorCode::kIndexOutOfRange, "gold index " + std::to_string(gold_index) + " with " +
                                          std::to_string(similarities.size()) + " candidates");
  const auto ce = softmax_cross_entropy(similarities, gold_index);
  return {ce.loss, ce.grad};
}

double piqa_loss(const QuestionVector& question, const std::vector<PhraseVector>& candidates, std::size_t gold_index) {
  std::vector<double> sims;
  sims.reserve(candidates.size());
  for (const auto& c : candidates) sims.push_back(similarity(question, c));
  return piqa_loss(sims, gold_index).loss;
}

DualEncoderModel::DualEncoderModel(const DualEncoderConfig& config) : config_(config) {
  if (config_.dim <= 0) fail(ErrorCode::kConfigError, "dual.dim must be positive");
  encoder_ = Encoder(params_, config_.encoder, "enc.");
  projection_ = Affine::create(params_, "dual.projection", config_.encoder.d_model, config_.dim);
}

void DualEncoderModel::init(Rng& rng) {
  encoder_.init(params_, rng);
  projection_.init(params_, rng);
}

PackedInput DualEncoderModel::candidate_input(const TokenizedContext& ctx, const SpanCandidate& cand) const {
  if (cand.start > cand.end || cand.end >= ctx.m())
    fail(ErrorCode::kIndexOutOfRange, "candidate [" + std::to_string(cand.start) + ", " + std::to_string(cand.end) +
                                          "] outside context of " + std::to_string(ctx.m()) + " tokens");
  const std::span<const TokenId> all(ctx.tokens);
  const auto second = all.subspan(cand.start, cand.end - cand.start + 1);
  if (second.size() + 3 > static_cast<std::size_t>(config_.encoder.max_positions))
    fail(ErrorCode::kCandidateTooLong, "candidate of " + std::to_string(second.size()) + " tokens cannot be packed");
  return pack_pair(all, second, config_.encoder.max_positions, config_.truncate_first);
}

PackedInput DualEncoderModel::question_input(const TokenizedQuestion& q) const {
  if (q.tokens.empty()) fail(ErrorCode::kInvalidArgument, "question has no tokens");
  return pack_single(q.tokens, config_.encoder.max_positions);
}

std::vector<std::uint8_t> DualEncoderModel::pool_mask(const PackedInput& input) const {
  std::vector<std::uint8_t> mask(input.size(), 0);
  const bool pair = std::any_of(input.segments.begin(), input.segments.end(), [](std::uint8_t s) { return s == 1; });
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (!input.attend[i]) continue;
    // Single sequences have no second segment and always pool everything.
    mask[i] = (config_.pool == Pooling::kPairAll || !pair || input.segments[i] == 1) ? 1 : 0;
  }
  return mask;
}

RowVector DualEncoderModel::embed(const PackedInput& input) const {
  const Matrix projected = projection_.forward(params_, encoder_.encode(params_, input));
  const auto mask = pool_mask(input);
  RowVector v = RowVector::Zero(projected.cols());
  double n = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      v += projected.row(static_cast<Eigen::Index>(i));
      n += 1.0;
    }
  return v / n;
}

DualEncoderModel::Forward DualEncoderModel::forward(const PackedInput& input, Rng* dropout_rng) const {
  Forward f;
  f.hidden = encoder_.forward(params_, input, dropout_rng, f.trace);
  const Matrix projected = projection_.forward(params_, f.hidden);
  const auto mask = pool_mask(input);
  f.vec = RowVector::Zero(projected.cols());
  double n = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      f.vec += projected.row(static_cast<Eigen::Index>(i));
      n += 1.0;
    }
  f.vec /= n;
  return f;
}

void DualEncoderModel::backward(const PackedInput& input, const Forward& fwd, const RowVector& d_vec,
                                GradSet& grads) const {
  const auto mask = pool_mask(input);
  const double n = static_cast<double>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  Matrix d_projected = Matrix::Zero(fwd.hidden.rows(), d_vec.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) d_projected.row(static_cast<Eigen::Index>(i)) = d_vec / n;
  const Matrix d_hidden = projection_.backward(params_, grads, fwd.hidden, d_projected);
  encoder_.backward(params_, grads, fwd.trace, d_hidden);
}

PhraseVector DualEncoderModel::encode_candidate(const ContextRecord& ctx, const SpanCandidate& cand) const {
  PhraseVector pv;
  pv.values = to_float(embed(candidate_input(ctx.tokens, cand)));
  pv.ctx_id = ctx.ctx_id;
  pv.start = cand.start;
  pv.end = cand.end;
  pv.text = ctx.tokens.span_text(ctx.text, cand.start, cand.end);
  return pv;
}

QuestionVector DualEncoderModel::encode_question(const TokenizedQuestion& q, const std::string& qid) const {
  return {to_float(embed(question_input(q))), qid};
}

double DualEncoderModel::example_loss(const TokenizedDataset& data, const PiqaTrainExample& example) const {
  const auto& q = data.questions.at(example.question_index);
  const auto& ctx = data.context_of(q).tokens;
  const RowVector g = embed(question_input(q.tokens));
  std::vector<double> sims;
  for (const auto& c : example.candidates) sims.push_back(g.dot(embed(candidate_input(ctx, c))));
  return piqa_loss(sims, example.gold_index).loss;
}

double DualEncoderModel::example_loss_and_grad(const TokenizedDataset& data, const PiqaTrainExample& example,
                                               GradSet& grads, std::uint64_t dropout_seed) const {
  const auto& q = data.questions.at(example.question_index);
  const auto& ctx = data.context_of(q).tokens;
  const std::size_t n = example.candidates.size();
  if (n == 0) fail(ErrorCode::kInvalidArgument, "training example without candidates");

  const PackedInput q_input = question_input(q.tokens);
  Rng q_rng(derive_seed(dropout_seed, "question"));
  const Forward q_fwd = forward(q_input, &q_rng);

  const bool keep = ctx.m() <= keep_traces_up_to;
  std::vector<PackedInput> inputs;
  std::vector<Forward> kept;
  std::vector<RowVector> vecs;
  inputs.reserve(n);
  vecs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    inputs.push_back(candidate_input(ctx, example.candidates[i]));
    Rng rng(derive_seed(dropout_seed, "candidate", i));
    Forward f = forward(inputs.back(), &rng);
    vecs.push_back(f.vec);
    if (keep) kept.push_back(std::move(f));
  }

  std::vector<double> sims(n);
  for (std::size_t i = 0; i < n; ++i) sims[i] = q_fwd.vec.dot(vecs[i]);
  const auto loss = piqa_loss(sims, example.gold_index);

  RowVector d_g = RowVector::Zero(q_fwd.vec.size());
  for (std::size_t i = 0; i < n; ++i) d_g += loss.grad[i] * vecs[i];
  backward(q_input, q_fwd, d_g, grads);
  for (std::size_t i = 0; i < n; ++i) {
    if (loss.grad[i] == 0.0) continue;
    const RowVector d_h = loss.grad[i] * q_fwd.vec;
    if (keep) {
      backward(inputs[i], kept[i], d_h, grads);
    } else {
      // Same seed, same dropout mask as the first pass.
      Rng rng(derive_seed(dropout_seed, "candidate", i));
      backward(inputs[i], forward(inputs[i], &rng), d_h, grads);
    }
  }
  return loss.loss;
}

TrainingSet build_training_set(const TokenizedDataset& data,
                               const std::vector<std::vector<SpanCandidate>>& context_candidates,
                               std::size_t n_train) {
  if (context_candidates.size() != data.contexts.size())
    fail(ErrorCode::kLengthMismatch, "candidate lists do not match the context count");
  TrainingSet set;
  set.considered = data.questions.size();
  if (n_train == 0) return set;
  for (std::size_t qi = 0; qi < data.questions.size(); ++qi) {
    const auto& q = data.questions[qi];
    const auto& ctx = data.context_of(q);
    const auto& cands = context_candidates[q.ctx_index];
    const std::size_t n = std::min(n_train, cands.size());
    const std::string gold = normalize_answer(q.gold.answer_text);
    for (std::size_t r = 0; r < n; ++r) {
      if (normalize_answer(ctx.tokens.span_text(ctx.text, cands[r].start, cands[r].end)) == gold) {
        set.examples.push_back({qi, std::vector<SpanCandidate>(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(n)), r});
        break;
      }
    }
  }
  if (set.examples.empty()) spdlog::warn("dual-encoder training set is empty: no gold answer among the candidates");
  return set;
}

TrainingSet build_training_set(const TokenizedDataset& data, const ExtractorModel& extractor, std::size_t n_train,
                               const BeamConfig& beam, int threads) {
  if (n_train == 0) {
    TrainingSet set;
    set.considered = data.questions.size();
    return set;
  }
  return build_training_set(data, extract_all(extractor, data, beam, n_train, threads), n_train);
}

double top1_accuracy(const DualEncoderModel& model, const TokenizedDataset& data, const TrainingSet& set, int threads) {
  if (set.examples.empty()) return 0.0;
  std::vector<int> hit(set.examples.size(), 0);
  parallel_for(set.examples.size(), threads, [&](std::size_t i) {
    const auto& ex = set.examples[i];
    const auto& q = data.questions.at(ex.question_index);
    const auto& ctx = data.context_of(q).tokens;
    const RowVector g = model.embed(model.question_input(q.tokens));
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < ex.candidates.size(); ++c) {
      const double s = g.dot(model.embed(model.candidate_input(ctx, ex.candidates[c])));
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    hit[i] = best == ex.gold_index ? 1 : 0;
  });
  return static_cast<double>(std::accumulate(hit.begin(), hit.end(), 0)) / static_cast<double>(hit.size());
}

DualTrainReport train_dual_encoder(DualEncoderModel& model, const TokenizedDataset& data, const TrainingSet& set,
                                   const DevSlice* dev, const DualTrainConfig& config) {
  DualTrainReport report;
  if (config.epochs <= 0) return report;
  if (set.examples.empty()) fail(ErrorCode::kEmptyCorpus, "dual-encoder training set is empty");
  if (config.micro_batch == 0 || config.accumulation_steps == 0)
    fail(ErrorCode::kConfigError, "dual.micro_batch and dual.accumulation must be >= 1");
  config.optimizer.validate();

  ParamSet& params = model.params();
  const std::size_t effective = config.micro_batch * config.accumulation_steps;
  const std::size_t steps_per_epoch = (set.examples.size() + effective - 1) / effective;
  const LinearSchedule schedule(config.optimizer.learning_rate,
                                static_cast<std::int64_t>(steps_per_epoch) * config.epochs, config.warmup_fraction);
  params.zero_grad();
  ParamSet best = params;
  double best_key = -1.0;
  std::int64_t step = 0;
  std::uint64_t example_counter = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(set.examples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(config.seed, "dual.shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double loss_sum = 0.0;

    for (std::size_t s0 = 0; s0 < order.size(); s0 += effective) {
      const std::size_t step_end = std::min(order.size(), s0 + effective);
      for (std::size_t mb = s0; mb < step_end; mb += config.micro_batch) {
        const std::size_t n = std::min(config.micro_batch, step_end - mb);
        const std::uint64_t base = example_counter;
        loss_sum += accumulate_gradients(params, n, config.threads, [&](std::size_t i, GradSet& grads) {
          return model.example_loss_and_grad(data, set.examples[order[mb + i]], grads,
                                             derive_seed(config.seed, "dual.dropout", base + i));
        });
        example_counter += n;
      }
      for (auto& g : params) g.grad /= static_cast<double>(step_end - s0);
      AdamWConfig opt = config.optimizer;
      opt.learning_rate = schedule.rate(step++);
      if (opt.learning_rate > 0.0) {
        adamw_step(params, opt);
      } else {
        params.zero_grad();
      }
    }

    DualEpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    double key = static_cast<double>(epoch);
    if (dev && dev->data && !dev->data->questions.empty()) {
      const auto r = evaluate_with_candidates(*dev->data, dev->context_candidates, model, config.threads);
      stats.dev_exact_match = r.exact_match;
      stats.dev_f1 = r.f1;
      key = r.exact_match + 1e-3 * r.f1;
    }
    if (key > best_key) {
      best_key = key;
      best = params;
      report.best_epoch = epoch;
    }
    report.epochs.push_back(stats);
    if (config.on_epoch) config.on_epoch(stats);
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = best[i].value;
  return report;
}

}  // namespace phraseqa
