// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

// SQuAD v1.1 ingestion, offset-tracking tokenization, answer alignment and
// vocabulary construction.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace phraseqa {

using TokenId = std::int32_t;

struct Answer {
  std::string text;
  std::int64_t answer_start = 0;  // in code points, as in SQuAD files
};

// Byte offset of the code point with the given index in UTF-8 text;
// text.size() for one past the end, npos beyond that.
std::size_t utf8_byte_offset(std::string_view text, std::size_t code_points);

struct QuestionAnswer {
  std::string id;
  std::string question;
  std::vector<Answer> answers;
};

struct Paragraph {
  std::string context;
  std::vector<QuestionAnswer> qas;
};

struct Article {
  std::string title;
  std::vector<Paragraph> paragraphs;
};

struct RawDataset {
  std::vector<Article> articles;

  std::size_t num_paragraphs() const;
  std::size_t num_questions() const;
};

struct LoadOptions {
  // Drop QA records whose answer_start does not point at the answer text
  // instead of raising MisalignedAnswer.
  bool skip_bad_answers = false;
};

RawDataset parse_squad_json(std::string_view json_text, const LoadOptions& options = {});
RawDataset load_squad_json(const std::filesystem::path& path, const LoadOptions& options = {});
void save_squad_json(const RawDataset& dataset, const std::filesystem::path& path);

struct Token {
  std::string text;
  std::size_t char_start = 0;
  std::size_t char_end = 0;  // exclusive

  bool operator==(const Token&) const = default;
};

// Lowercases ASCII, splits on whitespace and isolates every ASCII punctuation
// character as its own token. Offsets index the original byte string.
std::vector<Token> tokenize(std::string_view text);

// Joins token texts with single spaces.
std::string detokenize(std::span<const Token> tokens);

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;

  Vocab();

  // Appends a token if absent and returns its id.
  TokenId add(const std::string& token);
  TokenId id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

// Specials first, then tokens with frequency >= min_freq by descending
// frequency, ties in lexicographic order. Counts contexts and questions.
Vocab build_vocab(const RawDataset& dataset, int min_freq);

struct TokenizedContext {
  std::vector<TokenId> tokens;
  std::vector<Token> surface;

  std::size_t m() const { return tokens.size(); }

  // Original-text slice covering tokens [start, end].
  std::string span_text(std::string_view original, std::size_t start, std::size_t end) const;
};

struct TokenizedQuestion {
  std::vector<TokenId> tokens;

  std::size_t n() const { return tokens.size(); }
};

struct GoldSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string answer_text;
  // The answer's character range began or ended inside a token.
  bool partial_cover = false;
};

// Minimal token span [start, end] whose character range covers
// [answer_start, answer_start + answer_text.size()), in bytes.
GoldSpan align_answer(const TokenizedContext& ctx, std::string_view answer_text,
                      std::size_t answer_start);

TokenizedContext tokenize_context(std::string_view text, const Vocab& vocab,
                                  std::size_t max_tokens);

struct ContextRecord {
  std::string ctx_id;
  std::string text;
  TokenizedContext tokens;
};

struct QuestionRecord {
  std::string qid;
  std::size_t ctx_index = 0;
  std::string question;
  TokenizedQuestion tokens;
  // Aligned from the first answer.
  GoldSpan gold;
  std::vector<std::string> answers;
};

struct TokenizedDataset {
  std::vector<ContextRecord> contexts;
  std::vector<QuestionRecord> questions;

  const ContextRecord& context_of(const QuestionRecord& q) const { return contexts.at(q.ctx_index); }
  std::optional<std::size_t> find_context(std::string_view ctx_id) const;
};

struct TokenizeOptions {
  std::size_t max_context_tokens = 512;
  std::size_t max_question_tokens = 64;
};

struct TokenizeStats {
  std::size_t dropped_truncated = 0;
  std::size_t dropped_unalignable = 0;
  std::size_t dropped_empty_question = 0;
};

// Context ids are "c<paragraph index>" in dataset order.
TokenizedDataset tokenize_dataset(const RawDataset& dataset, const Vocab& vocab,
                                  const TokenizeOptions& options = {},
                                  TokenizeStats* stats = nullptr);

// JSON-lines cache, one record per question.
void save_token_cache(const TokenizedDataset& dataset, const Vocab& vocab,
                      const std::filesystem::path& path);
TokenizedDataset load_token_cache(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace phraseqa
