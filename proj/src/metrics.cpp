// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "phraseqa/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

#include "phraseqa/errors.hpp"

namespace phraseqa {
namespace {

std::vector<std::string> split_ws(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double f1_single(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : gold) ++counts[t];
  int common = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  // 2PR / (P + R) in one division, so the result is the correctly rounded ratio.
  return static_cast<double>(2 * common) / static_cast<double>(pred.size() + gold.size());
}

}  // namespace

std::string normalize_answer(std::string_view text) {
  std::string s;
  s.reserve(text.size());
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::ispunct(c)) continue;
    s.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
  }
  std::string out;
  for (const auto& w : split_ws(s)) {
    if (w == "a" || w == "an" || w == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

int exact_match(std::string_view prediction, const std::vector<std::string>& golds) {
  if (golds.empty()) fail(ErrorCode::kEmptyGolds, "exact_match needs at least one gold answer");
  const std::string p = normalize_answer(prediction);
  return std::any_of(golds.begin(), golds.end(), [&](const std::string& g) { return normalize_answer(g) == p; }) ? 1 : 0;
}

double f1_score(std::string_view prediction, const std::vector<std::string>& golds) {
  if (golds.empty()) fail(ErrorCode::kEmptyGolds, "f1 needs at least one gold answer");
  const auto pred = split_ws(normalize_answer(prediction));
  double best = 0.0;
  for (const auto& g : golds) best = std::max(best, f1_single(pred, split_ws(normalize_answer(g))));
  return best;
}

RecallReport candidate_recall(const std::vector<std::vector<std::string>>& candidates,
                              const std::vector<std::vector<std::string>>& golds) {
  if (candidates.size() != golds.size())
    fail(ErrorCode::kLengthMismatch, std::to_string(candidates.size()) + " candidate lists for " +
                                         std::to_string(golds.size()) + " questions");
  RecallReport r;
  r.n_questions = candidates.size();
  if (candidates.empty()) return r;
  double em_sum = 0.0;
  double f1_sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    r.k = std::max(r.k, candidates[i].size());
    int em = 0;
    double f1 = 0.0;
    for (const auto& c : candidates[i]) {
      em = std::max(em, exact_match(c, golds[i]));
      f1 = std::max(f1, f1_score(c, golds[i]));
    }
    em_sum += em;
    f1_sum += f1;
  }
  r.em_recall = em_sum / static_cast<double>(candidates.size());
  r.f1_max_mean = f1_sum / static_cast<double>(candidates.size());
  return r;
}

}  // namespace phraseqa
