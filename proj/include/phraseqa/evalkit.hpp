// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end phrase-indexed evaluation: extract candidates per context,
// index their vectors, answer each question with the top inner-product hit
// inside its own context, then score EM/F1.

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "phraseqa/corpus.hpp"
#include "phraseqa/dual_encoder.hpp"
#include "phraseqa/extractor.hpp"
#include "phraseqa/metrics.hpp"
#include "phraseqa/phrase_index.hpp"

namespace phraseqa {

struct QuestionResult {
  std::string qid;
  std::string prediction;
  std::vector<std::string> golds;
  int em = 0;
  double f1 = 0.0;
};

struct EvalReport {
  double exact_match = 0.0;  // percent
  double f1 = 0.0;           // percent
  std::size_t n = 0;
  std::vector<QuestionResult> per_question;

  // {"exact_match":..,"f1":..,"n":..,"per_question":[...]}
  std::string to_json() const;
  std::string summary_table() const;
};

EvalReport aggregate(std::vector<QuestionResult> results);

// Chooses one candidate (by position in the list) for a question.
using CandidateChooser = std::function<std::size_t(const QuestionRecord& question, const ContextRecord& context,
                                                   const std::vector<SpanCandidate>& candidates)>;

EvalReport evaluate_with_chooser(const TokenizedDataset& data,
                                 const std::vector<std::vector<SpanCandidate>>& context_candidates,
                                 const CandidateChooser& choose);

// Candidate recall of per-context candidate lists against every question's golds.
RecallReport dataset_recall(const TokenizedDataset& data,
                            const std::vector<std::vector<SpanCandidate>>& context_candidates);

// Encodes every candidate into a PhraseIndex over all contexts.
PhraseIndex build_candidate_index(const TokenizedDataset& data,
                                  const std::vector<std::vector<SpanCandidate>>& context_candidates,
                                  const DualEncoderModel& model, int threads);

EvalReport evaluate_with_index(const TokenizedDataset& data, const PhraseIndex& index, const DualEncoderModel& model,
                               int threads);

EvalReport evaluate_with_candidates(const TokenizedDataset& data,
                                    const std::vector<std::vector<SpanCandidate>>& context_candidates,
                                    const DualEncoderModel& model, int threads);

EvalReport evaluate_piqa(const TokenizedDataset& data, const ExtractorModel& extractor, const DualEncoderModel& dual,
                         const BeamConfig& beam, std::size_t k_eval, int threads);

}  // namespace phraseqa
