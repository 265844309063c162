// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

// SQuAD v1.1 answer normalization, exact match, token F1 and candidate-set
// recall.

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace phraseqa {

// Lowercase, strip ASCII punctuation, drop the whole words "a", "an", "the",
// collapse whitespace. Same order as the official v1.1 script.
std::string normalize_answer(std::string_view text);

int exact_match(std::string_view prediction, const std::vector<std::string>& golds);

// Multiset token overlap F1 on normalized text, max over golds.
// Both empty -> 1, exactly one empty -> 0.
double f1_score(std::string_view prediction, const std::vector<std::string>& golds);

struct RecallReport {
  double em_recall = 0.0;
  double f1_max_mean = 0.0;
  std::size_t k = 0;  // largest candidate list size seen
  std::size_t n_questions = 0;
};

// Per question: max EM and max F1 over its candidates; both averaged.
RecallReport candidate_recall(const std::vector<std::vector<std::string>>& candidates,
                              const std::vector<std::vector<std::string>>& golds);

}  // namespace phraseqa
