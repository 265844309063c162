// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "phraseqa/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <tuple>

#include "phraseqa/dual_encoder.hpp"
#include "phraseqa/errors.hpp"
#include "phraseqa/extractor.hpp"
#include "phraseqa/metrics.hpp"
#include "phraseqa/nn.hpp"
#include "phraseqa/phrase_index.hpp"
#include "phraseqa/rng.hpp"
#include "phraseqa/toy_corpus.hpp"

namespace phraseqa {
namespace {

using Check = std::function<std::string()>;  // empty string = pass

bool same_spans(const std::vector<SpanCandidate>& a, const std::vector<SpanCandidate>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].start != b[i].start || a[i].end != b[i].end || a[i].score != b[i].score) return false;
  return true;
}

// Sorts every feasible span by (score desc, start, end) without any beam.
std::vector<SpanCandidate> enumerate(std::size_t m, int window,
                                     const std::function<double(std::size_t, std::size_t)>& score, std::size_t k) {
  std::vector<SpanCandidate> all;
  for (std::size_t s = 0; s < m; ++s)
    for (std::size_t e = s; e < m && e - s < static_cast<std::size_t>(window); ++e) all.push_back({s, e, score(s, e), 0});
  std::sort(all.begin(), all.end(), [](const SpanCandidate& a, const SpanCandidate& b) {
    return std::tie(b.score, a.start, a.end) < std::tie(a.score, b.start, b.end);
  });
  if (all.size() > k) all.resize(k);
  return all;
}

std::string beam_oracle(std::uint64_t seed) {
  for (std::uint64_t t = 0; t < 20; ++t) {
    Rng rng(derive_seed(seed, "selftest.beam", t));
    const std::size_t m = 1 + rng.index(8);
    const int window = 1 + static_cast<int>(rng.index(m));
    std::vector<double> starts(m);
    Matrix ends(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    for (auto& v : starts) v = rng.normal(0, 2);
    for (Eigen::Index i = 0; i < ends.size(); ++i) ends.data()[i] = rng.normal(0, 2);
    const LogitTableScorer scorer(starts, ends, window);
    const auto slp = scorer.start_log_probs();
    std::vector<std::vector<double>> elp;
    for (std::size_t s = 0; s < m; ++s) elp.push_back(scorer.end_log_probs(s));
    const std::size_t k = count_naive_spans(m);
    const BeamConfig cfg{static_cast<int>(m), static_cast<int>(m), window};
    const auto got = beam_decode(scorer, cfg, k);
    const auto want = enumerate(m, window, [&](std::size_t s, std::size_t e) { return slp[s] + elp[s][e]; }, k);
    if (!same_spans(got, want)) return "mismatch at trial " + std::to_string(t);
  }
  return {};
}

std::string classic_oracle(std::uint64_t seed) {
  for (std::uint64_t t = 0; t < 20; ++t) {
    Rng rng(derive_seed(seed, "selftest.classic", t));
    const std::size_t m = 1 + rng.index(20);
    const int window = 1 + static_cast<int>(rng.index(m));
    std::vector<double> a(m), b(m);
    for (auto& v : a) v = rng.normal(0, 2);
    for (auto& v : b) v = rng.normal(0, 2);
    const auto slp = log_softmax(a);
    const auto elp = log_softmax(b);
    const std::size_t k = 1 + rng.index(2 * m);
    const BeamConfig cfg{1, static_cast<int>(k), window};
    const auto got = classic_decode(slp, elp, cfg, k, ClassicMode::kOptimal);
    const auto want = enumerate(m, window, [&](std::size_t s, std::size_t e) { return slp[s] + elp[e]; }, k);
    if (!same_spans(got, want)) return "mismatch at trial " + std::to_string(t);
  }
  return {};
}

std::string metric_cases() {
  struct Case {
    const char* pred;
    std::vector<std::string> golds;
    int em;
    double f1;
  };
  const std::vector<Case> cases = {
      {"The cat", {"cat"}, 1, 1.0},        {"cats", {"cat"}, 0, 0.0},        {"cat", {"dog", "cat"}, 1, 1.0},
      {"cat sat", {"cat"}, 0, 2.0 / 3.0},  {"", {""}, 1, 1.0},              {"a", {"cat"}, 0, 0.0},
      {"Cat, sat!", {"cat sat"}, 1, 1.0},
  };
  for (const auto& c : cases) {
    if (exact_match(c.pred, c.golds) != c.em) return std::string("exact match of '") + c.pred + "'";
    if (std::abs(f1_score(c.pred, c.golds) - c.f1) > 1e-15) return std::string("f1 of '") + c.pred + "'";
  }
  if (normalize_answer("  The  Quick, brown fox. ") != "quick brown fox") return "normalization";
  return {};
}

std::string loss_identities() {
  const std::vector<double> one = {3.25};
  if (piqa_loss(one, 0).loss != 0.0) return "singleton loss is not 0";
  const std::vector<double> two = {0.7, 0.7};
  if (std::abs(piqa_loss(two, 1).loss - std::log(2.0)) > 1e-12) return "equal pair loss is not log 2";
  return {};
}

std::string index_oracle(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "selftest.index"));
  const std::size_t n = 1000, dim = 16;
  std::vector<PhraseVector> vectors;
  for (std::size_t i = 0; i < n; ++i) {
    PhraseVector v;
    v.ctx_id = "c" + std::to_string(i % 7);
    v.start = i;
    v.end = i + 1;
    v.text = "p" + std::to_string(i);
    for (std::size_t d = 0; d < dim; ++d) v.values.push_back(static_cast<float>(rng.normal(0, 1)));
    vectors.push_back(std::move(v));
  }
  const auto index = PhraseIndex::build(vectors);
  std::vector<float> q(dim);
  for (auto& x : q) x = static_cast<float>(rng.normal(0, 1));
  const auto hits = index.search(q, 10);
  std::vector<std::pair<double, std::size_t>> brute;
  for (std::size_t i = 0; i < index.size(); ++i) {
    double s = 0;
    const auto v = index.vector(i);
    for (std::size_t d = 0; d < dim; ++d) s += static_cast<double>(q[d]) * v[d];
    brute.emplace_back(-s, i);
  }
  std::sort(brute.begin(), brute.end());
  for (std::size_t r = 0; r < hits.size(); ++r)
    if (hits[r].entry != brute[r].second) return "search differs from brute force at rank " + std::to_string(r);
  if (!(PhraseIndex::deserialize(index.serialize()) == index)) return "round trip changed the index";
  return {};
}

std::string gradient_check(std::uint64_t seed) {
  const auto raw = make_fact_corpus({2, 2, 3, seed});
  const Vocab vocab = build_vocab(raw, 1);
  const auto data = tokenize_dataset(raw, vocab);
  EncoderConfig enc;
  enc.vocab_size = static_cast<int>(vocab.size());
  enc.d_model = 8;
  enc.n_layers = 1;
  enc.n_heads = 2;
  enc.d_ff = 16;
  enc.dropout_rate = 0.0;
  GradCheckOptions opts;
  opts.samples_per_group = 4;
  opts.seed = seed;

  ExtractorModel ext({enc, 5});
  Rng rng(derive_seed(seed, "selftest.grad"));
  ext.init(rng);
  const auto& q = data.questions.front();
  const auto& ctx = data.context_of(q).tokens;
  GradSet g(ext.params());
  ext.loss_and_grad(ctx, q.gold, g, nullptr, true);
  ext.params().zero_grad();
  ext.params().accumulate(g);
  const auto r1 = grad_check(
      [&] {
        GradSet scratch(ext.params());
        const auto l = ext.loss_and_grad(ctx, q.gold, scratch, nullptr, true);
        return l.conditional() + l.classic_end;
      },
      ext.params(), opts);
  if (r1.max_rel_error >= 1e-4) return "extractor " + r1.worst_group + " rel err " + std::to_string(r1.max_rel_error);

  DualEncoderModel dual({enc, 6, Pooling::kPairAll, true});
  dual.init(rng);
  PiqaTrainExample ex{0, {{q.gold.start, q.gold.end, 0, 0}, {0, 0, 0, 1}, {1, 2, 0, 2}}, 0};
  GradSet dg(dual.params());
  dual.example_loss_and_grad(data, ex, dg, 0);
  dual.params().zero_grad();
  dual.params().accumulate(dg);
  const auto r2 = grad_check([&] { return dual.example_loss(data, ex); }, dual.params(), opts);
  if (r2.max_rel_error >= 1e-4) return "dual encoder " + r2.worst_group + " rel err " + std::to_string(r2.max_rel_error);
  return {};
}

std::string checkpoint_round_trip(std::uint64_t seed) {
  EncoderConfig enc;
  enc.vocab_size = 12;
  enc.d_model = 8;
  enc.n_layers = 1;
  enc.n_heads = 2;
  enc.d_ff = 16;
  ExtractorModel a({enc, 5});
  Rng rng(derive_seed(seed, "selftest.ckpt"));
  a.init(rng);
  ExtractorModel b({enc, 5});
  const auto bytes = serialize_checkpoint(a.params());
  deserialize_checkpoint(b.params(), bytes);
  if (!a.params().values_equal(b.params())) return "values changed";
  if (serialize_checkpoint(b.params()) != bytes) return "bytes changed";
  return {};
}

}  // namespace

std::vector<SelfTestResult> run_selftests(std::uint64_t seed) {
  const std::vector<std::pair<std::string, Check>> checks = {
      {"beam decoding matches exhaustive enumeration", [&] { return beam_oracle(seed); }},
      {"classic optimal decoding matches global top-k", [&] { return classic_oracle(seed); }},
      {"exact match and f1 cases", [] { return metric_cases(); }},
      {"candidate loss identities", [] { return loss_identities(); }},
      {"index search and persistence", [&] { return index_oracle(seed); }},
      {"model gradients match finite differences", [&] { return gradient_check(seed); }},
      {"checkpoint round trip", [&] { return checkpoint_round_trip(seed); }},
  };
  std::vector<SelfTestResult> results;
  for (const auto& [name, check] : checks) {
    SelfTestResult r{name, false, {}};
    try {
      r.detail = check();
      r.passed = r.detail.empty();
    } catch (const std::exception& e) {
      r.detail = e.what();
    }
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace phraseqa
