// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "phraseqa/errors.hpp"
#include "phraseqa/evalkit.hpp"
#include "phraseqa/extractor.hpp"
#include "phraseqa/rng.hpp"
#include "phraseqa/toy_corpus.hpp"
#include "test_util.hpp"

using namespace phraseqa;
using phraseqa::testing::enumerate_spans;
using phraseqa::testing::ScoredSpan;
using phraseqa::testing::spans_equal;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

EncoderConfig small_encoder(std::size_t vocab_size) {
  EncoderConfig c;
  c.vocab_size = static_cast<int>(vocab_size);
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.dropout_rate = 0.0;
  return c;
}

TokenizedContext context_of_ids(std::vector<TokenId> ids) {
  TokenizedContext ctx;
  ctx.tokens = std::move(ids);
  for (std::size_t i = 0; i < ctx.tokens.size(); ++i) ctx.surface.push_back({"t", i, i + 1});
  return ctx;
}

struct RandomTable {
  std::size_t m;
  int window;
  std::vector<double> starts;
  Matrix ends;
};

RandomTable random_table(Rng& rng, std::size_t max_m) {
  RandomTable t;
  t.m = 1 + rng.index(max_m);
  t.window = 1 + static_cast<int>(rng.index(t.m));
  t.starts.resize(t.m);
  for (auto& v : t.starts) v = rng.normal(0, 2);
  t.ends.resize(static_cast<Eigen::Index>(t.m), static_cast<Eigen::Index>(t.m));
  for (Eigen::Index i = 0; i < t.ends.size(); ++i) t.ends.data()[i] = rng.normal(0, 2);
  return t;
}

// Indices of the n largest finite values, ties to the smaller index.
std::vector<std::size_t> top_n(const std::vector<double>& v, std::size_t n) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (std::isfinite(v[i])) idx.push_back(i);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b] || (v[a] == v[b] && a < b); });
  if (idx.size() > n) idx.resize(n);
  return idx;
}

void check_span_invariants(const std::vector<SpanCandidate>& spans, std::size_t m, int window) {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto& c = spans[i];
    CHECK(c.start <= c.end);
    CHECK(c.end < m);
    CHECK(c.end - c.start + 1 <= static_cast<std::size_t>(window));
    CHECK(c.rank == i);
    if (i > 0) CHECK(spans[i - 1].score >= c.score);
    CHECK(seen.insert({c.start, c.end}).second);
  }
}

}  // namespace

TEST_CASE("count_naive_spans") {
  CHECK(count_naive_spans(500) == 125250);
  CHECK(count_naive_spans(0) == 0);
  CHECK(count_naive_spans(3) == 6);
  CHECK(count_naive_spans(1) == 1);
}

TEST_CASE("beam config validation") {
  CHECK_NOTHROW(BeamConfig{50, 2, 30}.validate(100));
  CHECK(code_of([] { BeamConfig{50, 2, 30}.validate(101); }) == ErrorCode::kConfigError);
  CHECK(code_of([] { BeamConfig{0, 2, 30}.validate(0); }) == ErrorCode::kConfigError);
}

TEST_CASE("rank_spans dedups and orders") {
  const std::vector<SpanCandidate> raw = {{1, 2, -1.0, 9}, {0, 0, -0.5, 9}, {1, 2, -0.2, 9}, {3, 3, -1.0, 9}, {0, 4, -1.0, 9}};
  const auto out = rank_spans(raw, 10);
  REQUIRE(out.size() == 4);
  CHECK((out[0].start == 1 && out[0].end == 2 && out[0].score == -0.2));
  CHECK((out[1].start == 0 && out[1].end == 0));
  CHECK((out[2].start == 0 && out[2].end == 4));
  CHECK((out[3].start == 3 && out[3].end == 3));
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i].rank == i);
  CHECK(rank_spans(raw, 2).size() == 2);
}

TEST_CASE("beam decode, hand-set logits, m = 3") {
  // Start probs favor 1 then 0; from start 0 the end head prefers 2.
  const std::vector<double> starts = {1.0, 2.0, -1.0};
  Matrix ends(3, 3);
  ends << 0.0, 0.5, 3.0,  //
      9.0, 1.0, 0.0,      //
      0.0, 0.0, 0.0;
  const LogitTableScorer scorer(starts, ends, 30);
  const auto got = beam_decode(scorer, {3, 2, 30}, 6);
  const auto slp = phraseqa::testing::reference_log_softmax(starts);
  auto end_lp = [&](std::size_t s, std::size_t e) {
    std::vector<double> row;
    for (std::size_t j = s; j < 3; ++j) row.push_back(ends(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j)));
    return phraseqa::testing::reference_log_softmax(row)[e - s];
  };
  // e = 2 keeps (0,2),(0,1) / (1,1),(1,2) / (2,2).
  std::vector<ScoredSpan> want = {{0, 2, slp[0] + end_lp(0, 2)}, {0, 1, slp[0] + end_lp(0, 1)},
                                  {1, 1, slp[1] + end_lp(1, 1)}, {1, 2, slp[1] + end_lp(1, 2)},
                                  {2, 2, slp[2] + end_lp(2, 2)}};
  std::sort(want.begin(), want.end(), [](const ScoredSpan& a, const ScoredSpan& b) { return a.score > b.score; });
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].start == want[i].start);
    CHECK(got[i].end == want[i].end);
    CHECK(got[i].score == doctest::Approx(want[i].score).epsilon(1e-12));
  }
  CHECK(code_of([] { beam_decode(LogitTableScorer({}, Matrix(0, 0), 3), {1, 1, 3}, 1); }) == ErrorCode::kEmptyContext);
}

TEST_CASE("beam decode with exhaustive beams equals enumeration, m <= 8, 100 seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const auto t = random_table(rng, 8);
    const LogitTableScorer scorer(t.starts, t.ends, t.window);
    const auto slp = scorer.start_log_probs();
    std::vector<std::vector<double>> elp;
    for (std::size_t s = 0; s < t.m; ++s) elp.push_back(scorer.end_log_probs(s));
    const std::size_t k = t.m * static_cast<std::size_t>(t.window);
    const auto got = beam_decode(scorer, {static_cast<int>(t.m), t.window, t.window}, k);
    const auto want = enumerate_spans(t.m, static_cast<std::size_t>(t.window),
                                      [&](std::size_t s, std::size_t e) { return slp[s] + elp[s][e]; }, k);
    CHECK(spans_equal(got, want));
  }
}

TEST_CASE("beam decode with narrow beams equals restricted enumeration") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(1000 + seed);
    const auto t = random_table(rng, 12);
    const LogitTableScorer scorer(t.starts, t.ends, t.window);
    const int s_beam = 1 + static_cast<int>(rng.index(t.m));
    const int e_beam = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(t.window)));
    const std::size_t k = 1 + rng.index(static_cast<std::size_t>(s_beam * e_beam));
    const auto slp = scorer.start_log_probs();
    std::set<std::pair<std::size_t, std::size_t>> allowed;
    for (std::size_t s : top_n(slp, static_cast<std::size_t>(s_beam)))
      for (std::size_t e : top_n(scorer.end_log_probs(s), static_cast<std::size_t>(e_beam))) allowed.insert({s, e});
    const auto want = enumerate_spans(
        t.m, static_cast<std::size_t>(t.window),
        [&](std::size_t s, std::size_t e) {
          return allowed.count({s, e}) ? slp[s] + scorer.end_log_probs(s)[e] : -std::numeric_limits<double>::infinity();
        },
        std::min(k, allowed.size()));
    const auto got = beam_decode(scorer, {s_beam, e_beam, t.window}, k);
    CHECK(spans_equal(got, want));
    CHECK(got.size() <= static_cast<std::size_t>(s_beam * e_beam));
    check_span_invariants(got, t.m, t.window);
  }
}

TEST_CASE("classic decode matches the enumeration oracle") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(2000 + seed);
    const std::size_t m = 1 + rng.index(25);
    const int window = 1 + static_cast<int>(rng.index(m));
    std::vector<double> a(m), b(m);
    for (auto& v : a) v = rng.normal(0, 2);
    for (auto& v : b) v = rng.normal(0, 2);
    const auto slp = phraseqa::testing::reference_log_softmax(a);
    const auto elp = phraseqa::testing::reference_log_softmax(b);
    const std::size_t k = 1 + rng.index(2 * m);
    const auto got = classic_decode(slp, elp, {1, 1, window}, k, ClassicMode::kOptimal);
    const auto want = enumerate_spans(m, static_cast<std::size_t>(window),
                                      [&](std::size_t s, std::size_t e) { return slp[s] + elp[e]; }, k);
    CHECK(spans_equal(got, want));

    // Exhaustive beams reduce to optimal mode.
    const std::size_t kb = std::min(k, m * m);
    const auto beam = classic_decode(slp, elp, {static_cast<int>(m), static_cast<int>(m), window}, kb, ClassicMode::kBeam);
    CHECK(spans_equal(beam, std::vector<ScoredSpan>(want.begin(), want.begin() + static_cast<std::ptrdiff_t>(std::min(kb, want.size())))));
  }
}

TEST_CASE("classic top-1 factorizes when the best end follows the best start") {
  Rng rng(7);
  int checked = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t m = 2 + rng.index(15);
    std::vector<double> a(m), b(m);
    for (auto& v : a) v = rng.normal(0, 1);
    for (auto& v : b) v = rng.normal(0, 1);
    const std::size_t s = top_n(a, 1).front(), e = top_n(b, 1).front();
    if (e < s) continue;
    const auto top = classic_decode(a, b, {1, 1, static_cast<int>(m)}, 1, ClassicMode::kOptimal).front();
    CHECK(top.start == s);
    CHECK(top.end == e);
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("model scoring heads") {
  ExtractorModel model({small_encoder(20), 4});
  Rng rng(1);
  model.init(rng);
  const auto ctx = context_of_ids({5, 6, 7, 8, 9, 10});
  const Matrix h = model.context_embeddings(ctx);
  REQUIRE(h.rows() == 6);

  const auto starts = model.score_starts(h);
  double total = 0.0;
  for (double v : starts) total += std::exp(v);
  CHECK(std::abs(total - 1.0) < 1e-9);

  CHECK(model.score_starts(h.topRows(1)) == std::vector<double>{0.0});
  const Matrix same = h.row(0).replicate(6, 1);
  for (double v : model.score_starts(same)) CHECK(v == doctest::Approx(-std::log(6.0)).epsilon(1e-12));

  const auto last = model.score_ends_conditional(h, 5);
  CHECK(last[5] == 0.0);
  for (std::size_t j = 0; j < 5; ++j) CHECK(std::isinf(last[j]));

  for (std::size_t s = 0; s < 6; ++s) {
    const auto uniform = model.score_ends_conditional(same, s);
    const std::size_t width = std::min<std::size_t>(4, 6 - s);
    for (std::size_t j = 0; j < 6; ++j) {
      if (j >= s && j < s + width)
        CHECK(uniform[j] == doctest::Approx(-std::log(static_cast<double>(width))).epsilon(1e-12));
      else
        CHECK(std::isinf(uniform[j]));
    }
    const auto ends = model.score_ends_conditional(h, s);
    const auto arg = top_n(ends, 1).front();
    CHECK(arg >= s);
    CHECK(arg < s + 4);
  }
  CHECK(code_of([&] { model.score_ends_conditional(h, 6); }) == ErrorCode::kIndexOutOfRange);
  CHECK(code_of([&] { model.score_starts(Matrix::Zero(3, 5)); }) == ErrorCode::kShapeMismatch);
  CHECK(code_of([&] { model.extract_beam(context_of_ids({}), {2, 2, 4}, 2); }) == ErrorCode::kEmptyContext);
}

TEST_CASE("extractor loss identities") {
  ExtractorModel model({small_encoder(20), 30});
  Rng rng(2);
  model.init(rng);
  for (auto& g : model.params())
    if (g.name.rfind("ext.start", 0) == 0 || g.name.rfind("ext.end.out", 0) == 0) g.value.setZero();
  const auto ctx = context_of_ids({5, 6, 7, 8, 9, 10, 11, 12, 13, 14});
  GoldSpan gold;
  gold.start = 0;
  gold.end = 3;
  CHECK(model.loss(ctx, gold) == doctest::Approx(std::log(10.0) + std::log(10.0)).epsilon(1e-12));
  gold.start = 6;
  gold.end = 7;
  CHECK(std::abs(model.loss(ctx, gold) - (std::log(10.0) + std::log(4.0))) < 1e-9);

  GoldSpan far;
  far.start = 0;
  far.end = 10;
  CHECK(code_of([&] { model.loss(ctx, far); }) == ErrorCode::kIndexOutOfRange);

  ExtractorModel narrow({small_encoder(20), 2});
  narrow.init(rng);
  GoldSpan wide;
  wide.start = 0;
  wide.end = 2;
  CHECK(code_of([&] { narrow.loss(ctx, wide); }) == ErrorCode::kGoldOutOfWindow);

  for (int t = 0; t < 20; ++t) {
    GoldSpan g;
    g.start = rng.index(10);
    g.end = g.start + rng.index(std::min<std::size_t>(2, 10 - g.start));
    CHECK(narrow.loss(ctx, g) >= 0.0);
  }
}

TEST_CASE("peaked logits give near-zero loss") {
  // Only the loss functional is under test; feed it a scorer directly.
  std::vector<double> starts(10, -40.0);
  starts[2] = 40.0;
  Matrix ends = Matrix::Constant(10, 10, -40.0);
  ends(2, 4) = 40.0;
  const LogitTableScorer scorer(starts, ends, 30);
  const double loss = -scorer.start_log_probs()[2] - scorer.end_log_probs(2)[4];
  CHECK(loss >= 0.0);
  CHECK(loss < 1e-30);
}

TEST_CASE("extractor gradient check, 5 seeds") {
  const auto raw = make_fact_corpus({3, 2, 3, 11});
  const Vocab vocab = build_vocab(raw, 1);
  const auto data = tokenize_dataset(raw, vocab);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ExtractorModel model({small_encoder(vocab.size()), 5});
    Rng rng(seed);
    model.init(rng);
    const auto& q = data.questions[seed % data.questions.size()];
    const auto& ctx = data.context_of(q).tokens;
    GradSet g(model.params());
    model.loss_and_grad(ctx, q.gold, g, nullptr, true);
    model.params().zero_grad();
    model.params().accumulate(g);
    GradCheckOptions opt;
    opt.samples_per_group = 12;
    opt.seed = seed;
    const auto r = grad_check(
        [&] {
          GradSet scratch(model.params());
          const auto l = model.loss_and_grad(ctx, q.gold, scratch, nullptr, true);
          return l.conditional() + l.classic_end;
        },
        model.params(), opt);
    INFO("worst group " << r.worst_group);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(std::abs(model.loss(ctx, q.gold) - model.loss_and_grad(ctx, q.gold, g, nullptr, false).conditional()) < 1e-12);
  }
}

TEST_CASE("zero epochs leave parameters unchanged") {
  const auto raw = make_number_corpus({5, 15, 20, 10, 3});
  const Vocab vocab = build_vocab(raw, 1);
  const auto data = tokenize_dataset(raw, vocab);
  ExtractorModel model({small_encoder(vocab.size()), 5});
  Rng rng(3);
  model.init(rng);
  const auto before = serialize_checkpoint(model.params());
  ExtractorTrainConfig cfg;
  cfg.epochs = 0;
  const auto report = train_extractor(model, data, &data, cfg);
  CHECK(report.epochs.empty());
  CHECK(report.best_epoch == 0);
  CHECK(serialize_checkpoint(model.params()) == before);
}

TEST_CASE("training on the number corpus") {
  const auto train_raw = make_number_corpus({120, 15, 40, 60, 21});
  const auto dev_raw = make_number_corpus({30, 15, 40, 60, 22});
  // Numbers are rarely repeated, so min_freq 2 maps them to UNK and the
  // model has to learn the position of the odd token out.
  const Vocab vocab = build_vocab(train_raw, 2);
  const auto train = tokenize_dataset(train_raw, vocab);
  const auto dev = tokenize_dataset(dev_raw, vocab);

  EncoderConfig enc = small_encoder(vocab.size());
  enc.d_model = 16;
  enc.d_ff = 32;
  ExtractorModel model({enc, 10});
  Rng rng(4);
  model.init(rng);
  ExtractorTrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.optimizer.learning_rate = 3e-3;
  cfg.beam = {10, 2, 10};
  cfg.dev_k = 10;
  cfg.seed = 5;
  std::vector<double> losses;
  cfg.on_epoch = [&](const ExtractorEpochStats& s) { losses.push_back(s.train_loss); };
  const auto report = train_extractor(model, train, &dev, cfg);
  REQUIRE(losses.size() == 5);
  CHECK(losses[4] < losses[0]);

  const auto candidates = extract_all(model, dev, {10, 2, 10}, 10, 1);
  const auto recall = dataset_recall(dev, candidates);
  CHECK(recall.em_recall >= 0.95);
  CHECK(recall.em_recall == doctest::Approx(report.epochs[static_cast<std::size_t>(report.best_epoch - 1)].dev_em_recall));
  for (std::size_t c = 0; c < dev.contexts.size(); ++c) {
    CHECK(candidates[c].size() <= 10);
    check_span_invariants(candidates[c], dev.contexts[c].tokens.m(), 10);
  }
}

TEST_CASE("accumulate_gradients is independent of thread count") {
  ParamSet ps;
  const auto w = ps.add("w", 3, 3);
  auto run = [&](int threads) {
    ps.zero_grad();
    const double total = accumulate_gradients(ps, 37, threads, [&](std::size_t i, GradSet& g) {
      g[w].array() += 0.1 * static_cast<double>(i) + 1e-17 * static_cast<double>(i * i);
      return static_cast<double>(i);
    });
    CHECK(total == 666.0);
    return ps[w].grad;
  };
  const Matrix one = run(1);
  CHECK(run(1) == one);
  CHECK(one(0, 0) == doctest::Approx(66.6));
}
