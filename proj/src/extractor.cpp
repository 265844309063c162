// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "phraseqa/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <spdlog/spdlog.h>

#include "phraseqa/errors.hpp"
#include "phraseqa/metrics.hpp"

namespace phraseqa {
namespace {

// Indices of finite entries ordered by value descending, index ascending.
std::vector<std::size_t> top_indices(std::span<const double> values, std::size_t lo, std::size_t hi, std::size_t n) {
  std::vector<std::size_t> idx;
  for (std::size_t i = lo; i < hi; ++i)
    if (std::isfinite(values[i])) idx.push_back(i);
  const std::size_t take = std::min(n, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(),
                    [&](std::size_t a, std::size_t b) { return values[a] > values[b] || (values[a] == values[b] && a < b); });
  idx.resize(take);
  return idx;
}

std::vector<double> column(const Matrix& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

}  // namespace

void BeamConfig::validate(std::size_t k) const {
  if (start_beam < 1 || end_beam < 1) fail(ErrorCode::kConfigError, "beam sizes must be >= 1");
  if (max_answer_tokens < 1) fail(ErrorCode::kConfigError, "max_answer_tokens must be >= 1");
  if (static_cast<std::size_t>(start_beam) * static_cast<std::size_t>(end_beam) < k)
    fail(ErrorCode::kConfigError, "start_beam * end_beam = " + std::to_string(start_beam * end_beam) +
                                      " is below the requested candidate count " + std::to_string(k));
}

std::uint64_t count_naive_spans(std::uint64_t m) { return m * (m + 1) / 2; }

std::vector<SpanCandidate> rank_spans(std::vector<SpanCandidate> spans, std::size_t k) {
  std::map<std::pair<std::size_t, std::size_t>, double> best;
  for (const auto& s : spans) {
    auto [it, inserted] = best.emplace(std::make_pair(s.start, s.end), s.score);
    if (!inserted) it->second = std::max(it->second, s.score);
  }
  std::vector<SpanCandidate> out;
  out.reserve(best.size());
  for (const auto& [key, score] : best) out.push_back({key.first, key.second, score, 0});
  std::stable_sort(out.begin(), out.end(), [](const SpanCandidate& a, const SpanCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.start != b.start) return a.start < b.start;
    return a.end < b.end;
  });
  if (out.size() > k) out.resize(k);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = i;
  return out;
}

std::vector<SpanCandidate> beam_decode(const SpanScorer& scorer, const BeamConfig& config, std::size_t k) {
  config.validate(k);
  const std::size_t m = scorer.length();
  if (m == 0) fail(ErrorCode::kEmptyContext, "cannot decode spans from an empty context");
  const auto start_lp = scorer.start_log_probs();
  std::vector<SpanCandidate> spans;
  for (std::size_t s : top_indices(start_lp, 0, m, static_cast<std::size_t>(config.start_beam))) {
    const auto end_lp = scorer.end_log_probs(s);
    for (std::size_t e : top_indices(end_lp, 0, m, static_cast<std::size_t>(config.end_beam))) {
      if (e < s || e - s + 1 > static_cast<std::size_t>(config.max_answer_tokens)) continue;
      spans.push_back({s, e, start_lp[s] + end_lp[e], 0});
    }
  }
  return rank_spans(std::move(spans), k);
}

std::vector<SpanCandidate> classic_decode(std::span<const double> start_log_probs,
                                          std::span<const double> end_log_probs, const BeamConfig& config,
                                          std::size_t k, ClassicMode mode) {
  config.validate(mode == ClassicMode::kBeam ? k : 0);
  const std::size_t m = start_log_probs.size();
  if (m == 0) fail(ErrorCode::kEmptyContext, "cannot decode spans from an empty context");
  require_shape(end_log_probs.size() == m, "classic_decode: start/end lengths differ");
  const auto window = static_cast<std::size_t>(config.max_answer_tokens);
  std::vector<SpanCandidate> spans;
  if (mode == ClassicMode::kOptimal) {
    for (std::size_t s = 0; s < m; ++s)
      for (std::size_t e = s; e < std::min(m, s + window); ++e)
        spans.push_back({s, e, start_log_probs[s] + end_log_probs[e], 0});
  } else {
    for (std::size_t s : top_indices(start_log_probs, 0, m, static_cast<std::size_t>(config.start_beam)))
      for (std::size_t e : top_indices(end_log_probs, s, std::min(m, s + window), static_cast<std::size_t>(config.end_beam)))
        spans.push_back({s, e, start_log_probs[s] + end_log_probs[e], 0});
  }
  return rank_spans(std::move(spans), k);
}

LogitTableScorer::LogitTableScorer(std::vector<double> start_logits, Matrix end_logits, int max_answer_tokens)
    : start_logits_(std::move(start_logits)), end_logits_(std::move(end_logits)), max_answer_tokens_(max_answer_tokens) {
  const auto m = static_cast<Eigen::Index>(start_logits_.size());
  require_shape(end_logits_.rows() == m && end_logits_.cols() == m, "LogitTableScorer: end logits must be m x m");
}

std::vector<double> LogitTableScorer::start_log_probs() const { return log_softmax(start_logits_); }

std::vector<double> LogitTableScorer::end_log_probs(std::size_t start) const {
  const std::size_t m = start_logits_.size();
  if (start >= m) fail(ErrorCode::kIndexOutOfRange, "start " + std::to_string(start));
  const auto row = static_cast<Eigen::Index>(start);
  std::vector<double> logits(end_logits_.row(row).data(), end_logits_.row(row).data() + m);
  return masked_log_softmax(logits, start, start + static_cast<std::size_t>(max_answer_tokens_));
}

// Conditional end scorer over precomputed context embeddings. The token part
// of the hidden layer, H W_tok, is shared by every start.
class ConditionalEndScorer : public SpanScorer {
 public:
  ConditionalEndScorer(const ExtractorModel& model, Matrix h) : model_(model), h_(std::move(h)) {
    const Eigen::Index d = h_.cols();
    const Matrix& w = model_.params_.value(model_.end_hidden_.w);
    token_part_ = h_ * w.topRows(d);
  }

  std::size_t length() const override { return static_cast<std::size_t>(h_.rows()); }
  std::vector<double> start_log_probs() const override { return model_.score_starts(h_); }

  std::vector<double> end_log_probs(std::size_t start) const override {
    const std::size_t m = length();
    const std::size_t hi = model_.window_end(start, m);
    const Eigen::Index d = h_.cols();
    const auto& params = model_.params_;
    const Matrix& w = params.value(model_.end_hidden_.w);
    const RowVector start_part = h_.row(static_cast<Eigen::Index>(start)) * w.bottomRows(d) +
                                 params.value(model_.end_hidden_.b);
    const auto rows = static_cast<Eigen::Index>(hi - start);
    Matrix hidden = token_part_.middleRows(static_cast<Eigen::Index>(start), rows);
    hidden.rowwise() += start_part;
    const Matrix logits = model_.end_out_.forward(params, tanh_forward(hidden));
    std::vector<double> full(m, 0.0);
    for (Eigen::Index r = 0; r < rows; ++r) full[start + static_cast<std::size_t>(r)] = logits(r, 0);
    return masked_log_softmax(full, start, hi);
  }

 private:
  const ExtractorModel& model_;
  Matrix h_;
  Matrix token_part_;
};

ExtractorModel::ExtractorModel(const ExtractorConfig& config) : config_(config) {
  if (config_.max_answer_tokens < 1) fail(ErrorCode::kConfigError, "max_answer_tokens must be >= 1");
  encoder_ = Encoder(params_, config_.encoder, "enc.");
  const Eigen::Index d = config_.encoder.d_model;
  start_head_ = Affine::create(params_, "ext.start", d, 1);
  end_hidden_ = Affine::create(params_, "ext.end.hidden", 2 * d, d);
  end_out_ = Affine::create(params_, "ext.end.out", d, 1);
  classic_hidden_ = Affine::create(params_, "ext.classic_end.hidden", d, d);
  classic_out_ = Affine::create(params_, "ext.classic_end.out", d, 1);
}

void ExtractorModel::init(Rng& rng) {
  encoder_.init(params_, rng);
  for (const Affine* a : {&start_head_, &end_hidden_, &end_out_, &classic_hidden_, &classic_out_}) a->init(params_, rng);
}

std::size_t ExtractorModel::window_end(std::size_t start, std::size_t m) const {
  return std::min(m, start + static_cast<std::size_t>(config_.max_answer_tokens));
}

Matrix ExtractorModel::context_embeddings(const TokenizedContext& ctx) const {
  if (ctx.m() == 0) fail(ErrorCode::kEmptyContext, "context has no tokens");
  const Matrix full = encoder_.encode(params_, pack_single(ctx.tokens, config_.encoder.max_positions));
  return full.middleRows(1, static_cast<Eigen::Index>(ctx.m()));
}

std::vector<double> ExtractorModel::score_starts(const Matrix& h) const {
  require_shape(h.cols() == config_.encoder.d_model, "score_starts: embedding width");
  return log_softmax(column(start_head_.forward(params_, h)));
}

std::vector<double> ExtractorModel::score_ends_conditional(const Matrix& h, std::size_t start) const {
  require_shape(h.cols() == config_.encoder.d_model, "score_ends_conditional: embedding width");
  if (start >= static_cast<std::size_t>(h.rows()))
    fail(ErrorCode::kIndexOutOfRange, "start " + std::to_string(start) + " beyond context of " +
                                          std::to_string(h.rows()) + " tokens");
  return ConditionalEndScorer(*this, h).end_log_probs(start);
}

std::vector<double> ExtractorModel::score_ends_classic(const Matrix& h) const {
  require_shape(h.cols() == config_.encoder.d_model, "score_ends_classic: embedding width");
  return log_softmax(column(classic_out_.forward(params_, tanh_forward(classic_hidden_.forward(params_, h)))));
}

std::vector<SpanCandidate> ExtractorModel::extract_beam(const TokenizedContext& ctx, const BeamConfig& config,
                                                        std::size_t k) const {
  config.validate(k);
  BeamConfig effective = config;
  effective.max_answer_tokens = std::min(config.max_answer_tokens, config_.max_answer_tokens);
  return beam_decode(ConditionalEndScorer(*this, context_embeddings(ctx)), effective, k);
}

std::vector<SpanCandidate> ExtractorModel::extract_classic(const TokenizedContext& ctx, const BeamConfig& config,
                                                           std::size_t k, ClassicMode mode) const {
  const Matrix h = context_embeddings(ctx);
  BeamConfig effective = config;
  effective.max_answer_tokens = std::min(config.max_answer_tokens, config_.max_answer_tokens);
  return classic_decode(score_starts(h), score_ends_classic(h), effective, k, mode);
}

void ExtractorModel::check_gold(const TokenizedContext& ctx, const GoldSpan& gold) const {
  if (ctx.m() == 0) fail(ErrorCode::kEmptyContext, "context has no tokens");
  if (gold.start > gold.end || gold.end >= ctx.m())
    fail(ErrorCode::kIndexOutOfRange, "gold span [" + std::to_string(gold.start) + ", " + std::to_string(gold.end) +
                                          "] outside context of " + std::to_string(ctx.m()) + " tokens");
  if (gold.end - gold.start + 1 > static_cast<std::size_t>(config_.max_answer_tokens))
    fail(ErrorCode::kGoldOutOfWindow, "gold span longer than max_answer_tokens");
}

double ExtractorModel::loss(const TokenizedContext& ctx, const GoldSpan& gold) const {
  check_gold(ctx, gold);
  const Matrix h = context_embeddings(ctx);
  return -score_starts(h)[gold.start] - score_ends_conditional(h, gold.start)[gold.end];
}

ExtractorLoss ExtractorModel::loss_and_grad(const TokenizedContext& ctx, const GoldSpan& gold, GradSet& grads,
                                            Rng* dropout_rng, bool with_classic_head) const {
  check_gold(ctx, gold);
  const auto m = static_cast<Eigen::Index>(ctx.m());
  const Eigen::Index d = config_.encoder.d_model;
  EncoderTrace trace;
  const Matrix full = encoder_.forward(params_, pack_single(ctx.tokens, config_.encoder.max_positions), dropout_rng, trace);
  const Matrix h = full.middleRows(1, m);
  Matrix dh = Matrix::Zero(m, d);
  ExtractorLoss out;

  {
    const auto ce = softmax_cross_entropy(column(start_head_.forward(params_, h)), gold.start);
    out.start = ce.loss;
    const Matrix dlogits = Eigen::Map<const Matrix>(ce.grad.data(), m, 1);
    dh += start_head_.backward(params_, grads, h, dlogits);
  }

  {
    const std::size_t lo = gold.start;
    const std::size_t hi = window_end(lo, ctx.m());
    const auto rows = static_cast<Eigen::Index>(hi - lo);
    Matrix features(rows, 2 * d);
    features.leftCols(d) = h.middleRows(static_cast<Eigen::Index>(lo), rows);
    features.rightCols(d).rowwise() = h.row(static_cast<Eigen::Index>(lo));
    const Matrix hidden = tanh_forward(end_hidden_.forward(params_, features));
    const auto ce = softmax_cross_entropy(column(end_out_.forward(params_, hidden)), gold.end - lo);
    out.end = ce.loss;
    const Matrix dlogits = Eigen::Map<const Matrix>(ce.grad.data(), rows, 1);
    const Matrix dhidden = end_out_.backward(params_, grads, hidden, dlogits);
    const Matrix dfeatures = end_hidden_.backward(params_, grads, features, tanh_backward(hidden, dhidden));
    dh.middleRows(static_cast<Eigen::Index>(lo), rows) += dfeatures.leftCols(d);
    dh.row(static_cast<Eigen::Index>(lo)) += dfeatures.rightCols(d).colwise().sum();
  }

  if (with_classic_head) {
    const Matrix hidden = tanh_forward(classic_hidden_.forward(params_, h));
    const auto ce = softmax_cross_entropy(column(classic_out_.forward(params_, hidden)), gold.end);
    out.classic_end = ce.loss;
    const Matrix dlogits = Eigen::Map<const Matrix>(ce.grad.data(), m, 1);
    const Matrix dhidden = classic_out_.backward(params_, grads, hidden, dlogits);
    dh += classic_hidden_.backward(params_, grads, h, tanh_backward(hidden, dhidden));
  }

  Matrix dfull = Matrix::Zero(full.rows(), d);
  dfull.middleRows(1, m) = dh;
  encoder_.backward(params_, grads, trace, dfull);
  return out;
}

double accumulate_gradients(ParamSet& params, std::size_t n, int threads,
                            const std::function<double(std::size_t, GradSet&)>& per_example) {
  const std::size_t chunks = std::max<std::size_t>(1, std::min<std::size_t>(n, static_cast<std::size_t>(resolve_threads(threads))));
  std::vector<GradSet> buffers;
  buffers.reserve(chunks);
  for (std::size_t c = 0; c < chunks; ++c) buffers.emplace_back(params);
  std::vector<double> values(n, 0.0);
  parallel_for(chunks, static_cast<int>(chunks), [&](std::size_t c) {
    const std::size_t lo = c * n / chunks;
    const std::size_t hi = (c + 1) * n / chunks;
    for (std::size_t i = lo; i < hi; ++i) values[i] = per_example(i, buffers[c]);
  });
  for (const auto& b : buffers) params.accumulate(b);
  return std::accumulate(values.begin(), values.end(), 0.0);
}

std::vector<std::vector<SpanCandidate>> extract_all(const ExtractorModel& model, const TokenizedDataset& dataset,
                                                    const BeamConfig& config, std::size_t k, int threads) {
  std::vector<std::vector<SpanCandidate>> out(dataset.contexts.size());
  parallel_for(dataset.contexts.size(), threads, [&](std::size_t i) {
    if (dataset.contexts[i].tokens.m() > 0) out[i] = model.extract_beam(dataset.contexts[i].tokens, config, k);
  });
  return out;
}

namespace {

RecallReport dev_recall(const ExtractorModel& model, const TokenizedDataset& dev, const ExtractorTrainConfig& config) {
  BeamConfig beam = config.beam;
  const auto per_ctx = extract_all(model, dev, beam, config.dev_k, config.threads);
  std::vector<std::vector<std::string>> cands, golds;
  for (const auto& q : dev.questions) {
    const auto& ctx = dev.context_of(q);
    std::vector<std::string> texts;
    for (const auto& c : per_ctx[q.ctx_index]) texts.push_back(ctx.tokens.span_text(ctx.text, c.start, c.end));
    cands.push_back(std::move(texts));
    golds.push_back(q.answers);
  }
  return candidate_recall(cands, golds);
}

}  // namespace

ExtractorTrainReport train_extractor(ExtractorModel& model, const TokenizedDataset& train, const TokenizedDataset* dev,
                                     const ExtractorTrainConfig& config) {
  ExtractorTrainReport report;
  if (config.epochs <= 0) return report;
  if (train.questions.empty()) fail(ErrorCode::kEmptyCorpus, "extractor training set is empty");
  if (config.batch_size == 0) fail(ErrorCode::kConfigError, "extractor.batch_size must be >= 1");
  config.optimizer.validate();
  if (dev) config.beam.validate(config.dev_k);

  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < train.questions.size(); ++i) {
    const auto& g = train.questions[i].gold;
    if (g.end - g.start + 1 <= static_cast<std::size_t>(model.config().max_answer_tokens)) usable.push_back(i);
  }
  if (usable.size() < train.questions.size())
    spdlog::warn("skipping {} training questions whose gold span exceeds max_answer_tokens",
                 train.questions.size() - usable.size());
  if (usable.empty()) fail(ErrorCode::kEmptyCorpus, "no training question fits max_answer_tokens");

  ParamSet& params = model.params();
  const std::size_t steps_per_epoch = (usable.size() + config.batch_size - 1) / config.batch_size;
  const LinearSchedule schedule(config.optimizer.learning_rate,
                                static_cast<std::int64_t>(steps_per_epoch) * config.epochs, config.warmup_fraction);
  params.zero_grad();
  ParamSet best = params;
  double best_key = -1.0;
  std::int64_t step = 0;
  std::uint64_t example_counter = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order = usable;
    Rng shuffle_rng(derive_seed(config.seed, "extractor.shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - b0);
      const std::uint64_t base = example_counter;
      loss_sum += accumulate_gradients(params, n, config.threads, [&](std::size_t i, GradSet& grads) {
        const auto& q = train.questions[order[b0 + i]];
        Rng dropout_rng(derive_seed(config.seed, "extractor.dropout", base + i));
        const auto l = model.loss_and_grad(train.context_of(q).tokens, q.gold, grads, &dropout_rng,
                                           config.train_classic_head);
        return l.conditional() + l.classic_end;
      });
      example_counter += n;
      // Mean over the batch.
      for (auto& g : params) g.grad /= static_cast<double>(n);
      AdamWConfig opt = config.optimizer;
      opt.learning_rate = schedule.rate(step++);
      if (opt.learning_rate > 0.0) {
        adamw_step(params, opt);
      } else {
        params.zero_grad();
      }
    }

    ExtractorEpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    double key = static_cast<double>(epoch);
    if (dev && !dev->questions.empty()) {
      const auto r = dev_recall(model, *dev, config);
      stats.dev_em_recall = r.em_recall;
      stats.dev_f1_recall = r.f1_max_mean;
      key = r.em_recall + 1e-3 * r.f1_max_mean;
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
