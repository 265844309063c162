// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "phraseqa/toy_corpus.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <vector>

#include "phraseqa/errors.hpp"
#include "phraseqa/rng.hpp"

namespace phraseqa {
namespace {

// Accumulates space-separated words and remembers character offsets.
class TextBuilder {
 public:
  std::size_t add(std::string_view word) {
    if (!text_.empty()) text_ += ' ';
    const std::size_t at = text_.size();
    text_ += word;
    return at;
  }
  std::size_t size() const { return text_.size(); }
  const std::string& text() const { return text_; }

 private:
  std::string text_;
};

std::string filler(Rng& rng, std::size_t vocab) { return "w" + std::to_string(rng.index(vocab)); }

std::string qid(std::string_view prefix, std::size_t p, std::size_t q) {
  return std::string(prefix) + std::to_string(p) + "_" + std::to_string(q);
}

}  // namespace

RawDataset make_number_corpus(const NumberCorpusOptions& o) {
  if (o.min_words == 0 || o.max_words < o.min_words || o.filler_vocab == 0)
    fail(ErrorCode::kInvalidArgument, "bad number corpus options");
  Rng rng(derive_seed(o.seed, "toy.number"));
  RawDataset data;
  data.articles.push_back({"numbers", {}});
  for (std::size_t p = 0; p < o.paragraphs; ++p) {
    const std::size_t words = o.min_words + rng.index(o.max_words - o.min_words + 1);
    const std::size_t at = rng.index(words);
    const std::string number = std::to_string(100 + rng.index(900));
    TextBuilder text;
    std::size_t answer_start = 0;
    for (std::size_t w = 0; w < words; ++w) {
      if (w == at)
        answer_start = text.add(number);
      else
        text.add(filler(rng, o.filler_vocab));
    }
    Paragraph para{text.text(), {}};
    para.qas.push_back({qid("n", p, 0), "which number appears ?", {{number, static_cast<std::int64_t>(answer_start)}}});
    data.articles.back().paragraphs.push_back(std::move(para));
  }
  return data;
}

RawDataset make_bracket_corpus(const BracketCorpusOptions& o) {
  if (o.types == 0 || o.min_inner == 0 || o.max_inner < o.min_inner || o.filler_vocab == 0)
    fail(ErrorCode::kInvalidArgument, "bad bracket corpus options");
  Rng rng(derive_seed(o.seed, "toy.bracket"));
  RawDataset data;
  data.articles.push_back({"brackets", {}});
  for (std::size_t p = 0; p < o.paragraphs; ++p) {
    TextBuilder text;
    Paragraph para;
    for (std::size_t i = 0; i < o.pairs; ++i) {
      const std::size_t gap = 1 + rng.index(std::max<std::size_t>(o.max_gap, 1));
      for (std::size_t g = 0; g < gap; ++g) text.add(filler(rng, o.filler_vocab));
      const std::string type = std::to_string(i % o.types);
      const std::size_t begin = text.add("bo" + type);
      const std::size_t inner = o.min_inner + rng.index(o.max_inner - o.min_inner + 1);
      for (std::size_t w = 0; w < inner; ++w) text.add(filler(rng, o.filler_vocab));
      text.add("bc" + type);
      const std::string answer = text.text().substr(begin);
      para.qas.push_back({qid("b", p, i), "which span is bracket " + std::to_string(i) + " ?",
                          {{answer, static_cast<std::int64_t>(begin)}}});
    }
    text.add(filler(rng, o.filler_vocab));
    para.context = text.text();
    data.articles.back().paragraphs.push_back(std::move(para));
  }
  return data;
}

namespace {

struct Attribute {
  const char* question;  // "{}" is replaced by the person
  const char* before;    // words preceding the value in the fact sentence
  std::array<const char*, 8> values;
};

const std::array<Attribute, 7> kAttributes = {{
    {"what color does {} like ?", "likes the color",
     {"red", "blue", "green", "yellow", "purple", "orange", "black", "white"}},
    {"where does {} live ?", "lives in",
     {"paris", "lyon", "berlin", "madrid", "rome", "vienna", "oslo", "lisbon"}},
    {"what pet does {} own ?", "owns a", {"dog", "cat", "parrot", "hamster", "rabbit", "turtle", "snake", "goldfish"}},
    {"what food does {} eat ?", "eats", {"pasta", "rice", "bread", "soup", "salad", "cheese", "fish", "beans"}},
    {"what sport does {} play ?", "plays",
     {"tennis", "soccer", "rugby", "golf", "hockey", "cricket", "volleyball", "handball"}},
    {"what instrument does {} practice ?", "practices",
     {"piano", "violin", "guitar", "flute", "drums", "cello", "trumpet", "harp"}},
    {"how old is {} ?", "is aged", {"19", "23", "31", "38", "44", "52", "67", "75"}},
}};

std::string fill(std::string_view pattern, std::string_view person) {
  std::string out(pattern);
  out.replace(out.find("{}"), 2, person);
  return out;
}

}  // namespace

RawDataset make_fact_corpus(const FactCorpusOptions& o) {
  if (o.facts == 0 || o.facts > kAttributes.size() || o.people == 0)
    fail(ErrorCode::kInvalidArgument, "bad fact corpus options");
  Rng rng(derive_seed(o.seed, "toy.fact"));
  RawDataset data;
  data.articles.push_back({"facts", {}});
  for (std::size_t p = 0; p < o.paragraphs; ++p) {
    const std::string person = "person" + std::to_string(rng.index(o.people));
    std::vector<std::size_t> attrs(kAttributes.size());
    std::iota(attrs.begin(), attrs.end(), 0);
    std::shuffle(attrs.begin(), attrs.end(), rng.engine());
    attrs.resize(o.facts);
    TextBuilder text;
    Paragraph para;
    for (std::size_t f = 0; f < attrs.size(); ++f) {
      const Attribute& a = kAttributes[attrs[f]];
      const std::string value = a.values[rng.index(a.values.size())];
      text.add(person);
      text.add(a.before);
      const std::size_t at = text.add(value);
      text.add(".");
      para.qas.push_back({qid("f", p, f), fill(a.question, person), {{value, static_cast<std::int64_t>(at)}}});
    }
    para.context = text.text();
    data.articles.back().paragraphs.push_back(std::move(para));
  }
  return data;
}

RawDataset make_toy_corpus(std::string_view kind, std::size_t paragraphs, std::uint64_t seed) {
  if (kind == "number") {
    NumberCorpusOptions o;
    o.paragraphs = paragraphs;
    o.seed = seed;
    return make_number_corpus(o);
  }
  if (kind == "bracket") {
    BracketCorpusOptions o;
    o.paragraphs = paragraphs;
    o.seed = seed;
    return make_bracket_corpus(o);
  }
  if (kind == "fact") {
    FactCorpusOptions o;
    o.paragraphs = paragraphs;
    o.seed = seed;
    return make_fact_corpus(o);
  }
  fail(ErrorCode::kInvalidArgument, "unknown toy corpus kind '" + std::string(kind) + "'");
}

}  // namespace phraseqa
