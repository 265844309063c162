// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "phraseqa/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "phraseqa/errors.hpp"

namespace phraseqa {
namespace {

using nlohmann::json;

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

const json& require(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) fail(ErrorCode::kSchemaViolation, path + " is not an object");
  auto it = obj.find(key);
  if (it == obj.end()) fail(ErrorCode::kSchemaViolation, "missing field " + path + "." + key);
  return *it;
}

const json& require_array(const json& obj, const char* key, const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_array()) fail(ErrorCode::kSchemaViolation, path + "." + key + " is not an array");
  return v;
}

std::string require_string(const json& obj, const char* key, const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_string()) fail(ErrorCode::kSchemaViolation, path + "." + key + " is not a string");
  return v.get<std::string>();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::size_t utf8_byte_offset(std::string_view text, std::size_t code_points) {
  std::size_t seen = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    // Continuation bytes (10xxxxxx) do not start a code point.
    if ((static_cast<unsigned char>(text[i]) & 0xC0) == 0x80) continue;
    if (seen == code_points) return i;
    ++seen;
  }
  return seen == code_points ? text.size() : std::string::npos;
}

std::size_t RawDataset::num_paragraphs() const {
  std::size_t n = 0;
  for (const auto& a : articles) n += a.paragraphs.size();
  return n;
}

std::size_t RawDataset::num_questions() const {
  std::size_t n = 0;
  for (const auto& a : articles)
    for (const auto& p : a.paragraphs) n += p.qas.size();
  return n;
}

RawDataset parse_squad_json(std::string_view json_text, const LoadOptions& options) {
  json root;
  try {
    root = json::parse(json_text.begin(), json_text.end());
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kMalformedJson, e.what());
  }

  RawDataset ds;
  std::unordered_set<std::string> seen_ids;
  const json& data = require_array(root, "data", "$");
  for (std::size_t ai = 0; ai < data.size(); ++ai) {
    const std::string apath = "$.data[" + std::to_string(ai) + "]";
    Article article;
    article.title = require_string(data[ai], "title", apath);
    const json& paragraphs = require_array(data[ai], "paragraphs", apath);
    for (std::size_t pi = 0; pi < paragraphs.size(); ++pi) {
      const std::string ppath = apath + ".paragraphs[" + std::to_string(pi) + "]";
      Paragraph para;
      para.context = require_string(paragraphs[pi], "context", ppath);
      const json& qas = require_array(paragraphs[pi], "qas", ppath);
      for (std::size_t qi = 0; qi < qas.size(); ++qi) {
        const std::string qpath = ppath + ".qas[" + std::to_string(qi) + "]";
        QuestionAnswer qa;
        qa.id = require_string(qas[qi], "id", qpath);
        qa.question = require_string(qas[qi], "question", qpath);
        if (!seen_ids.insert(qa.id).second)
          fail(ErrorCode::kSchemaViolation, "duplicate question id '" + qa.id + "' at " + qpath);
        const json& answers = require_array(qas[qi], "answers", qpath);
        bool misaligned = false;
        for (std::size_t ki = 0; ki < answers.size(); ++ki) {
          const std::string kpath = qpath + ".answers[" + std::to_string(ki) + "]";
          Answer ans;
          ans.text = require_string(answers[ki], "text", kpath);
          const json& start = require(answers[ki], "answer_start", kpath);
          if (!start.is_number_integer())
            fail(ErrorCode::kSchemaViolation, kpath + ".answer_start is not an integer");
          ans.answer_start = start.get<std::int64_t>();
          const std::size_t at =
              ans.answer_start < 0 ? std::string::npos
                                   : utf8_byte_offset(para.context, static_cast<std::size_t>(ans.answer_start));
          const bool ok = at != std::string::npos && at + ans.text.size() <= para.context.size() &&
                          para.context.compare(at, ans.text.size(), ans.text) == 0;
          if (!ok) {
            if (!options.skip_bad_answers)
              fail(ErrorCode::kMisalignedAnswer, "answer_start does not match text at " + kpath);
            spdlog::warn("skipping {}: answer_start does not match answer text", qa.id);
            misaligned = true;
            break;
          }
          qa.answers.push_back(std::move(ans));
        }
        if (!misaligned) para.qas.push_back(std::move(qa));
      }
      article.paragraphs.push_back(std::move(para));
    }
    ds.articles.push_back(std::move(article));
  }
  return ds;
}

RawDataset load_squad_json(const std::filesystem::path& path, const LoadOptions& options) {
  return parse_squad_json(read_file(path), options);
}

void save_squad_json(const RawDataset& dataset, const std::filesystem::path& path) {
  json data = json::array();
  for (const auto& a : dataset.articles) {
    json paragraphs = json::array();
    for (const auto& p : a.paragraphs) {
      json qas = json::array();
      for (const auto& qa : p.qas) {
        json answers = json::array();
        for (const auto& ans : qa.answers)
          answers.push_back({{"text", ans.text}, {"answer_start", ans.answer_start}});
        qas.push_back({{"id", qa.id}, {"question", qa.question}, {"answers", std::move(answers)}});
      }
      paragraphs.push_back({{"context", p.context}, {"qas", std::move(qas)}});
    }
    data.push_back({{"title", a.title}, {"paragraphs", std::move(paragraphs)}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  out << json{{"version", "1.1"}, {"data", std::move(data)}}.dump() << '\n';
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
    } else if (is_punct(c)) {
      out.push_back({std::string(1, text[i]), i, i + 1});
      ++i;
    } else {
      const std::size_t start = i;
      std::string word;
      while (i < text.size()) {
        const auto d = static_cast<unsigned char>(text[i]);
        if (is_space(d) || is_punct(d)) break;
        word.push_back(d < 0x80 ? static_cast<char>(std::tolower(d)) : static_cast<char>(d));
        ++i;
      }
      out.push_back({std::move(word), start, i});
    }
  }
  return out;
}

std::string detokenize(std::span<const Token> tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t.text;
  }
  return out;
}

Vocab::Vocab() {
  for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) add(s);
}

TokenId Vocab::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

TokenId Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    fail(ErrorCode::kUnknownTokenId, "token id " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  Vocab v;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (row < 4) {
      if (line != v.tokens_[row]) fail(ErrorCode::kFormatError, "vocab special token mismatch at line " + std::to_string(row + 1));
    } else {
      v.add(line);
    }
    ++row;
  }
  if (row < 4) fail(ErrorCode::kFormatError, "vocab file is missing special tokens");
  return v;
}

Vocab build_vocab(const RawDataset& dataset, int min_freq) {
  if (min_freq < 1) fail(ErrorCode::kInvalidArgument, "min_freq must be >= 1");
  std::map<std::string, std::size_t> freq;
  auto count = [&](std::string_view text) {
    for (auto& t : tokenize(text)) ++freq[t.text];
  };
  for (const auto& a : dataset.articles)
    for (const auto& p : a.paragraphs) {
      count(p.context);
      for (const auto& qa : p.qas) count(qa.question);
    }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : freq)
    if (n >= static_cast<std::size_t>(min_freq)) kept.emplace_back(tok, n);
  if (kept.empty()) fail(ErrorCode::kEmptyCorpus, "no token reaches min_freq=" + std::to_string(min_freq));
  // std::map iteration is already lexicographic; stable sort keeps it for ties.
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (auto& [tok, n] : kept) v.add(tok);
  return v;
}

std::string TokenizedContext::span_text(std::string_view original, std::size_t start, std::size_t end) const {
  if (start > end || end >= surface.size())
    fail(ErrorCode::kIndexOutOfRange, "span [" + std::to_string(start) + "," + std::to_string(end) + "]");
  const std::size_t a = surface[start].char_start;
  const std::size_t b = surface[end].char_end;
  return std::string(original.substr(a, b - a));
}

GoldSpan align_answer(const TokenizedContext& ctx, std::string_view answer_text, std::size_t answer_start) {
  std::size_t lo = answer_start;
  std::size_t hi = answer_start + answer_text.size();
  // Whitespace padding around the answer never needs covering.
  std::size_t lead = 0;
  while (lead < answer_text.size() && is_space(static_cast<unsigned char>(answer_text[lead]))) ++lead;
  std::size_t trail = 0;
  while (trail + lead < answer_text.size() &&
         is_space(static_cast<unsigned char>(answer_text[answer_text.size() - 1 - trail])))
    ++trail;
  lo += lead;
  hi -= trail;
  if (lo >= hi) fail(ErrorCode::kAlignmentFailure, "answer has no visible characters");

  const auto& s = ctx.surface;
  if (s.empty() || hi > s.back().char_end)
    fail(ErrorCode::kAlignmentFailure, "answer extends beyond the tokenized context");
  auto first = std::find_if(s.begin(), s.end(), [&](const Token& t) { return t.char_end > lo; });
  if (first == s.end() || first->char_start >= hi)
    fail(ErrorCode::kAlignmentFailure, "answer covers no token");
  std::size_t start = static_cast<std::size_t>(first - s.begin());
  std::size_t end = start;
  while (end + 1 < s.size() && s[end + 1].char_start < hi) ++end;

  GoldSpan gold{start, end, std::string(answer_text), false};
  gold.partial_cover = s[start].char_start < lo || s[end].char_end > hi;
  if (gold.partial_cover)
    spdlog::warn("answer '{}' at {} only partially covers tokens [{}, {}]", answer_text, answer_start, start, end);
  return gold;
}

TokenizedContext tokenize_context(std::string_view text, const Vocab& vocab, std::size_t max_tokens) {
  TokenizedContext ctx;
  ctx.surface = tokenize(text);
  if (ctx.surface.size() > max_tokens) ctx.surface.resize(max_tokens);
  ctx.tokens.reserve(ctx.surface.size());
  for (const auto& t : ctx.surface) ctx.tokens.push_back(vocab.id(t.text));
  return ctx;
}

std::optional<std::size_t> TokenizedDataset::find_context(std::string_view ctx_id) const {
  for (std::size_t i = 0; i < contexts.size(); ++i)
    if (contexts[i].ctx_id == ctx_id) return i;
  return std::nullopt;
}

TokenizedDataset tokenize_dataset(const RawDataset& dataset, const Vocab& vocab, const TokenizeOptions& options,
                                  TokenizeStats* stats) {
  TokenizedDataset out;
  TokenizeStats local;
  std::size_t paragraph_index = 0;
  for (const auto& a : dataset.articles) {
    for (const auto& p : a.paragraphs) {
      ContextRecord ctx;
      ctx.ctx_id = "c" + std::to_string(paragraph_index++);
      ctx.text = p.context;
      ctx.tokens = tokenize_context(p.context, vocab, options.max_context_tokens);
      const std::size_t ctx_index = out.contexts.size();
      out.contexts.push_back(std::move(ctx));
      const auto& tc = out.contexts.back().tokens;
      const bool truncated = tokenize(p.context).size() > tc.m();

      for (const auto& qa : p.qas) {
        if (qa.answers.empty()) continue;
        QuestionRecord q;
        q.qid = qa.id;
        q.ctx_index = ctx_index;
        q.question = qa.question;
        for (const auto& t : tokenize(qa.question)) q.tokens.tokens.push_back(vocab.id(t.text));
        if (q.tokens.tokens.empty()) {
          spdlog::warn("dropping {}: empty question", qa.id);
          ++local.dropped_empty_question;
          continue;
        }
        if (q.tokens.tokens.size() > options.max_question_tokens)
          q.tokens.tokens.resize(options.max_question_tokens);
        for (const auto& ans : qa.answers) q.answers.push_back(ans.text);
        try {
          const auto& first = qa.answers.front();
          q.gold = align_answer(tc, first.text,
                                utf8_byte_offset(p.context, static_cast<std::size_t>(first.answer_start)));
        } catch (const Error& e) {
          if (truncated) {
            spdlog::warn("dropping {}: gold span falls beyond context truncation", qa.id);
            ++local.dropped_truncated;
          } else {
            spdlog::warn("dropping {}: {}", qa.id, e.what());
            ++local.dropped_unalignable;
          }
          continue;
        }
        out.questions.push_back(std::move(q));
      }
    }
  }
  if (stats) *stats = local;
  return out;
}

void save_token_cache(const TokenizedDataset& dataset, const Vocab& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  for (const auto& q : dataset.questions) {
    const auto& ctx = dataset.context_of(q);
    json ctx_tokens = json::array();
    for (TokenId id : ctx.tokens.tokens) ctx_tokens.push_back(vocab.token(id));
    json q_tokens = json::array();
    for (TokenId id : q.tokens.tokens) q_tokens.push_back(vocab.token(id));
    json rec = {
        {"qid", q.qid},
        {"ctx_id", ctx.ctx_id},
        {"ctx_tokens", std::move(ctx_tokens)},
        {"q_tokens", std::move(q_tokens)},
        {"gold", {{"start", q.gold.start}, {"end", q.gold.end}, {"text", q.gold.answer_text}}},
        {"context", ctx.text},
        {"question", q.question},
        {"answers", q.answers},
    };
    out << rec.dump() << '\n';
  }
}

TokenizedDataset load_token_cache(const std::filesystem::path& path, const Vocab& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  TokenizedDataset ds;
  std::unordered_map<std::string, std::size_t> ctx_index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::kMalformedJson, where + ": " + e.what());
    }
    try {
      const std::string ctx_id = rec.at("ctx_id").get<std::string>();
      auto it = ctx_index.find(ctx_id);
      if (it == ctx_index.end()) {
        ContextRecord ctx;
        ctx.ctx_id = ctx_id;
        ctx.text = rec.at("context").get<std::string>();
        const auto& toks = rec.at("ctx_tokens");
        ctx.tokens = tokenize_context(ctx.text, vocab, toks.size());
        if (ctx.tokens.m() != toks.size())
          fail(ErrorCode::kFormatError, where + ": context does not re-tokenize to ctx_tokens");
        for (std::size_t i = 0; i < toks.size(); ++i)
          if (ctx.tokens.tokens[i] != vocab.id(toks[i].get<std::string>()))
            fail(ErrorCode::kFormatError, where + ": context does not re-tokenize to ctx_tokens");
        it = ctx_index.emplace(ctx_id, ds.contexts.size()).first;
        ds.contexts.push_back(std::move(ctx));
      }
      QuestionRecord q;
      q.qid = rec.at("qid").get<std::string>();
      q.ctx_index = it->second;
      q.question = rec.value("question", std::string());
      for (const auto& t : rec.at("q_tokens")) q.tokens.tokens.push_back(vocab.id(t.get<std::string>()));
      const auto& gold = rec.at("gold");
      q.gold.start = gold.at("start").get<std::size_t>();
      q.gold.end = gold.at("end").get<std::size_t>();
      q.gold.answer_text = gold.at("text").get<std::string>();
      if (q.gold.start > q.gold.end || q.gold.end >= ds.contexts[q.ctx_index].tokens.m())
        fail(ErrorCode::kFormatError, where + ": gold span out of range");
      q.answers = rec.value("answers", std::vector<std::string>{q.gold.answer_text});
      ds.questions.push_back(std::move(q));
    } catch (const json::exception& e) {
      fail(ErrorCode::kSchemaViolation, where + ": " + e.what());
    }
  }
  return ds;
}

}  // namespace phraseqa
