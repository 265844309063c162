// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "phraseqa/corpus.hpp"
#include "phraseqa/errors.hpp"
#include "phraseqa/metrics.hpp"
#include "phraseqa/toy_corpus.hpp"
#include "test_util.hpp"

using namespace phraseqa;

namespace {

const char* kTwoQuestions = R"({"version": "1.1", "data": [{"title": "t", "paragraphs": [{
  "context": "The cat sat on the mat.",
  "qas": [
    {"id": "q1", "question": "Who sat?", "answers": [{"text": "cat", "answer_start": 4}]},
    {"id": "q2", "question": "Where?", "answers": [{"text": "the mat", "answer_start": 15},
                                                  {"text": "mat", "answer_start": 19}]}
  ]}]}]})";

TokenizedContext the_cat_sat() {
  Vocab v;
  return tokenize_context("the cat sat", v, 512);
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST_CASE("loader preserves counts") {
  const auto ds = parse_squad_json(kTwoQuestions);
  CHECK(ds.articles.size() == 1);
  CHECK(ds.num_paragraphs() == 1);
  CHECK(ds.num_questions() == 2);
  CHECK(ds.articles[0].paragraphs[0].qas[1].answers.size() == 2);
}

TEST_CASE("loader errors") {
  CHECK(code_of([] { parse_squad_json("{\"data\": [}"); }) == ErrorCode::kMalformedJson);
  CHECK(code_of([] { parse_squad_json("{}"); }) == ErrorCode::kSchemaViolation);
  try {
    parse_squad_json(R"({"data": [{"title": "t", "paragraphs": [{"qas": []}]}]})");
    FAIL("expected SchemaViolation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kSchemaViolation);
    CHECK(std::string(e.what()).find("$.data[0].paragraphs[0]") != std::string::npos);
  }
  const char* dup = R"({"data": [{"title": "t", "paragraphs": [{"context": "a b", "qas": [
    {"id": "x", "question": "q", "answers": [{"text": "a", "answer_start": 0}]},
    {"id": "x", "question": "q", "answers": [{"text": "b", "answer_start": 2}]}]}]}]})";
  CHECK(code_of([&] { parse_squad_json(dup); }) == ErrorCode::kSchemaViolation);

  const char* bad = R"({"data": [{"title": "t", "paragraphs": [{"context": "a b", "qas": [
    {"id": "x", "question": "q", "answers": [{"text": "a", "answer_start": 1}]},
    {"id": "y", "question": "q", "answers": [{"text": "b", "answer_start": 2}]}]}]}]})";
  CHECK(code_of([&] { parse_squad_json(bad); }) == ErrorCode::kMisalignedAnswer);
  LoadOptions skip;
  skip.skip_bad_answers = true;
  CHECK(parse_squad_json(bad, skip).num_questions() == 1);
}

TEST_CASE("answer_start counts code points") {
  const char* text = R"({"data": [{"title": "t", "paragraphs": [{"context": "café noir", "qas": [
    {"id": "x", "question": "q", "answers": [{"text": "noir", "answer_start": 5}]}]}]}]})";
  const auto ds = parse_squad_json(text);
  REQUIRE(ds.num_questions() == 1);
  const Vocab vocab = build_vocab(ds, 1);
  const auto tok = tokenize_dataset(ds, vocab);
  REQUIRE(tok.questions.size() == 1);
  CHECK(tok.questions[0].gold.start == 1);
  CHECK(utf8_byte_offset("caf\xc3\xa9 noir", 5) == 6);
  CHECK(utf8_byte_offset("ab", 2) == 2);
  CHECK(utf8_byte_offset("ab", 3) == std::string::npos);
}

TEST_CASE("save and load round trip") {
  TempDir dir;
  const auto ds = parse_squad_json(kTwoQuestions);
  save_squad_json(ds, dir.path / "d.json");
  const auto back = load_squad_json(dir.path / "d.json");
  CHECK(back.num_questions() == 2);
  CHECK(back.articles[0].paragraphs[0].context == ds.articles[0].paragraphs[0].context);
  CHECK(code_of([&] { load_squad_json(dir.path / "missing.json"); }) == ErrorCode::kIoError);
}

TEST_CASE("tokenize") {
  const auto t = tokenize("Hello, world");
  REQUIRE(t.size() == 3);
  CHECK(t[0].text == "hello");
  CHECK(t[0].char_start == 0);
  CHECK(t[0].char_end == 5);
  CHECK(t[1].text == ",");
  CHECK(t[1].char_start == 5);
  CHECK(t[1].char_end == 6);
  CHECK(t[2].text == "world");
  CHECK(t[2].char_start == 7);
  CHECK(t[2].char_end == 12);

  CHECK(tokenize("").empty());
  const auto d = tokenize("a-b");
  REQUIRE(d.size() == 3);
  CHECK(d[1].text == "-");
  CHECK(d[1].char_start == 1);
  CHECK(d[2].char_start == 2);
}

TEST_CASE("tokenize properties") {
  const std::vector<std::string> texts = {"The  quick (brown) fox's 3.5 jumps!", "  x\ty\nz  ", "caf\xc3\xa9 au lait.",
                                          "a--b,,c"};
  for (const auto& text : texts) {
    const auto toks = tokenize(text);
    std::string visible, joined;
    for (char c : text)
      if (!std::isspace(static_cast<unsigned char>(c))) visible += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (std::size_t i = 0; i < toks.size(); ++i) {
      joined += toks[i].text;
      CHECK(toks[i].char_start < toks[i].char_end);
      if (i > 0) CHECK(toks[i - 1].char_end <= toks[i].char_start);
    }
    CHECK(joined == visible);
    // Idempotent on detokenized output.
    const auto again = tokenize(detokenize(toks));
    REQUIRE(again.size() == toks.size());
    for (std::size_t i = 0; i < toks.size(); ++i) CHECK(again[i].text == toks[i].text);
  }
}

TEST_CASE("align_answer") {
  const auto ctx = the_cat_sat();
  auto g = align_answer(ctx, "cat", 4);
  CHECK(g.start == 1);
  CHECK(g.end == 1);
  CHECK(g.answer_text == "cat");
  CHECK_FALSE(g.partial_cover);

  g = align_answer(ctx, "cat sat", 4);
  CHECK(g.start == 1);
  CHECK(g.end == 2);

  g = align_answer(ctx, "at", 5);
  CHECK(g.start == 1);
  CHECK(g.end == 1);
  CHECK(g.partial_cover);

  CHECK(code_of([&] { align_answer(ctx, "xx", 20); }) == ErrorCode::kAlignmentFailure);
}

TEST_CASE("align_answer is the minimal cover found by brute force") {
  Vocab v;
  const std::string text = "alpha beta, gamma-delta  epsilon";
  const auto ctx = tokenize_context(text, v, 512);
  for (std::size_t a = 0; a < text.size(); ++a) {
    for (std::size_t b = a + 1; b <= text.size(); ++b) {
      const std::string answer = text.substr(a, b - a);
      if (answer.find_first_not_of(' ') == std::string::npos) continue;
      const auto got = align_answer(ctx, answer, a);
      // Brute force: shortest token span whose characters cover the trimmed range.
      std::size_t lo = a + answer.find_first_not_of(' ');
      std::size_t hi = a + answer.find_last_not_of(' ') + 1;
      std::size_t best_s = 0, best_e = 0, best_len = SIZE_MAX;
      for (std::size_t s = 0; s < ctx.m(); ++s)
        for (std::size_t e = s; e < ctx.m(); ++e) {
          if (ctx.surface[s].char_start > lo || ctx.surface[e].char_end < hi) continue;
          const std::size_t len = ctx.surface[e].char_end - ctx.surface[s].char_start;
          if (len < best_len) {
            best_len = len;
            best_s = s;
            best_e = e;
          }
        }
      // A range falling entirely in whitespace between tokens is covered by no token.
      if (best_len == SIZE_MAX) continue;
      CHECK(got.start == best_s);
      CHECK(got.end == best_e);
    }
  }
}

TEST_CASE("build_vocab") {
  RawDataset ds;
  ds.articles.push_back({"t", {{"a a b", {}}}});
  const Vocab two = build_vocab(ds, 2);
  CHECK(two.size() == 5);
  CHECK(two.id("a") == 4);
  CHECK_FALSE(two.contains("b"));
  CHECK(two.id("b") == Vocab::kUnk);
  const Vocab one = build_vocab(ds, 1);
  CHECK(one.size() == 6);
  CHECK(one.id("[PAD]") == 0);
  CHECK(one.id("[UNK]") == 1);
  CHECK(one.id("[CLS]") == 2);
  CHECK(one.id("[SEP]") == 3);
  CHECK(code_of([&] { build_vocab(ds, 3); }) == ErrorCode::kEmptyCorpus);
  CHECK(code_of([&] { one.token(99); }) == ErrorCode::kUnknownTokenId);

  // Ties broken lexicographically; deterministic across runs.
  RawDataset tie;
  tie.articles.push_back({"t", {{"z y x y z x", {}}}});
  const Vocab t1 = build_vocab(tie, 1);
  CHECK(t1.token(4) == "x");
  CHECK(t1.token(5) == "y");
  CHECK(t1.token(6) == "z");
  CHECK(build_vocab(tie, 1) == t1);
}

TEST_CASE("vocab file round trip") {
  TempDir dir;
  const Vocab v = build_vocab(parse_squad_json(kTwoQuestions), 1);
  v.save(dir.path / "v.txt");
  CHECK(Vocab::load(dir.path / "v.txt") == v);
}

TEST_CASE("tokenize_dataset aligns golds that round-trip through normalization") {
  const auto raw = make_fact_corpus({20, 4, 5, 3});
  const Vocab vocab = build_vocab(raw, 1);
  const auto ds = tokenize_dataset(raw, vocab);
  CHECK(ds.questions.size() == raw.num_questions());
  for (const auto& q : ds.questions) {
    const auto& ctx = ds.context_of(q);
    CHECK(normalize_answer(ctx.tokens.span_text(ctx.text, q.gold.start, q.gold.end)) ==
          normalize_answer(q.gold.answer_text));
  }
}

TEST_CASE("truncation drops golds beyond the cut") {
  const auto raw = parse_squad_json(kTwoQuestions);
  const Vocab vocab = build_vocab(raw, 1);
  TokenizeStats stats;
  const auto ds = tokenize_dataset(raw, vocab, {3, 64}, &stats);
  CHECK(ds.contexts[0].tokens.m() == 3);
  CHECK(ds.questions.size() == 1);
  CHECK(stats.dropped_truncated == 1);
  CHECK(ds.questions[0].answers == std::vector<std::string>{"cat"});
  const auto full = tokenize_dataset(raw, vocab);
  CHECK(full.questions[1].answers.size() == 2);
  CHECK(full.questions[1].gold.answer_text == "the mat");
}

TEST_CASE("token cache round trip") {
  TempDir dir;
  const auto raw = make_number_corpus({10, 5, 9, 20, 4});
  const Vocab vocab = build_vocab(raw, 1);
  const auto ds = tokenize_dataset(raw, vocab);
  save_token_cache(ds, vocab, dir.path / "c.jsonl");
  const auto back = load_token_cache(dir.path / "c.jsonl", vocab);
  REQUIRE(back.questions.size() == ds.questions.size());
  REQUIRE(back.contexts.size() == ds.contexts.size());
  for (std::size_t i = 0; i < ds.questions.size(); ++i) {
    CHECK(back.questions[i].qid == ds.questions[i].qid);
    CHECK(back.questions[i].tokens.tokens == ds.questions[i].tokens.tokens);
    CHECK(back.questions[i].gold.start == ds.questions[i].gold.start);
    CHECK(back.questions[i].gold.end == ds.questions[i].gold.end);
    CHECK(back.context_of(back.questions[i]).tokens.tokens == ds.context_of(ds.questions[i]).tokens.tokens);
  }
}

TEST_CASE("token cache round trip with out-of-vocabulary words") {
  TempDir dir;
  const auto raw = make_number_corpus({10, 5, 9, 20, 4});
  const Vocab vocab = build_vocab(raw, 2);  // most numbers become UNK
  const auto ds = tokenize_dataset(raw, vocab);
  save_token_cache(ds, vocab, dir.path / "c.jsonl");
  const auto back = load_token_cache(dir.path / "c.jsonl", vocab);
  REQUIRE(back.contexts.size() == ds.contexts.size());
  for (std::size_t c = 0; c < ds.contexts.size(); ++c) {
    CHECK(back.contexts[c].tokens.tokens == ds.contexts[c].tokens.tokens);
    CHECK(back.contexts[c].tokens.surface == ds.contexts[c].tokens.surface);
  }
}
