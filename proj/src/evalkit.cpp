// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "phraseqa/evalkit.hpp"

#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "phraseqa/errors.hpp"

namespace phraseqa {

std::string EvalReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& r : per_question)
    per.push_back({{"qid", r.qid}, {"prediction", r.prediction}, {"golds", r.golds}, {"em", r.em}, {"f1", r.f1}});
  nlohmann::json j = {{"exact_match", exact_match}, {"f1", f1}, {"n", n}, {"per_question", std::move(per)}};
  return j.dump(2);
}

std::string EvalReport::summary_table() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "+-------------+-----------+\n"
                "| metric      |     value |\n"
                "+-------------+-----------+\n"
                "| exact-match | %9.2f |\n"
                "| f1-score    | %9.2f |\n"
                "| questions   | %9zu |\n"
                "+-------------+-----------+\n",
                exact_match, f1, n);
  return buf;
}

EvalReport aggregate(std::vector<QuestionResult> results) {
  EvalReport r;
  r.n = results.size();
  double em = 0.0;
  double f1 = 0.0;
  for (const auto& q : results) {
    em += q.em;
    f1 += q.f1;
  }
  if (r.n > 0) {
    r.exact_match = 100.0 * em / static_cast<double>(r.n);
    r.f1 = 100.0 * f1 / static_cast<double>(r.n);
  }
  r.per_question = std::move(results);
  return r;
}

namespace {

QuestionResult score(const QuestionRecord& q, std::string prediction) {
  QuestionResult r;
  r.qid = q.qid;
  r.golds = q.answers;
  r.em = exact_match(prediction, q.answers);
  r.f1 = f1_score(prediction, q.answers);
  r.prediction = std::move(prediction);
  return r;
}

void check_lists(const TokenizedDataset& data, const std::vector<std::vector<SpanCandidate>>& context_candidates) {
  if (context_candidates.size() != data.contexts.size())
    fail(ErrorCode::kLengthMismatch, std::to_string(context_candidates.size()) + " candidate lists for " +
                                         std::to_string(data.contexts.size()) + " contexts");
}

}  // namespace

EvalReport evaluate_with_chooser(const TokenizedDataset& data,
                                 const std::vector<std::vector<SpanCandidate>>& context_candidates,
                                 const CandidateChooser& choose) {
  check_lists(data, context_candidates);
  std::vector<QuestionResult> results;
  results.reserve(data.questions.size());
  for (const auto& q : data.questions) {
    const auto& ctx = data.context_of(q);
    const auto& cands = context_candidates[q.ctx_index];
    std::string prediction;
    if (!cands.empty()) {
      const std::size_t pick = choose(q, ctx, cands);
      if (pick >= cands.size()) fail(ErrorCode::kIndexOutOfRange, "chooser picked candidate " + std::to_string(pick));
      prediction = ctx.tokens.span_text(ctx.text, cands[pick].start, cands[pick].end);
    }
    results.push_back(score(q, std::move(prediction)));
  }
  return aggregate(std::move(results));
}

RecallReport dataset_recall(const TokenizedDataset& data,
                            const std::vector<std::vector<SpanCandidate>>& context_candidates) {
  check_lists(data, context_candidates);
  std::vector<std::vector<std::string>> texts, golds;
  texts.reserve(data.questions.size());
  for (const auto& q : data.questions) {
    const auto& ctx = data.context_of(q);
    std::vector<std::string> t;
    for (const auto& c : context_candidates[q.ctx_index]) t.push_back(ctx.tokens.span_text(ctx.text, c.start, c.end));
    texts.push_back(std::move(t));
    golds.push_back(q.answers);
  }
  return candidate_recall(texts, golds);
}

PhraseIndex build_candidate_index(const TokenizedDataset& data,
                                  const std::vector<std::vector<SpanCandidate>>& context_candidates,
                                  const DualEncoderModel& model, int threads) {
  check_lists(data, context_candidates);
  std::vector<std::vector<PhraseVector>> per_ctx(data.contexts.size());
  parallel_for(data.contexts.size(), threads, [&](std::size_t i) {
    for (const auto& c : context_candidates[i]) per_ctx[i].push_back(model.encode_candidate(data.contexts[i], c));
  });
  std::vector<PhraseVector> all;
  for (auto& v : per_ctx)
    for (auto& p : v) all.push_back(std::move(p));
  return PhraseIndex::build(std::move(all), static_cast<std::size_t>(model.config().dim));
}

EvalReport evaluate_with_index(const TokenizedDataset& data, const PhraseIndex& index, const DualEncoderModel& model,
                               int threads) {
  std::vector<QuestionResult> results(data.questions.size());
  parallel_for(data.questions.size(), threads, [&](std::size_t i) {
    const auto& q = data.questions[i];
    const auto& ctx = data.context_of(q);
    std::string prediction;
    if (index.find_context(ctx.ctx_id)) {
      const auto hits = index.search(model.encode_question(q.tokens, q.qid), 1, ctx.ctx_id);
      if (!hits.empty()) prediction = index.entry(hits.front().entry).text;
    }
    results[i] = score(q, std::move(prediction));
  });
  return aggregate(std::move(results));
}

EvalReport evaluate_with_candidates(const TokenizedDataset& data,
                                    const std::vector<std::vector<SpanCandidate>>& context_candidates,
                                    const DualEncoderModel& model, int threads) {
  return evaluate_with_index(data, build_candidate_index(data, context_candidates, model, threads), model, threads);
}

EvalReport evaluate_piqa(const TokenizedDataset& data, const ExtractorModel& extractor, const DualEncoderModel& dual,
                         const BeamConfig& beam, std::size_t k_eval, int threads) {
  return evaluate_with_candidates(data, extract_all(extractor, data, beam, k_eval, threads), dual, threads);
}

}  // namespace phraseqa
