// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic SQuAD-format corpora for offline tests and demos.
//
//   number:  filler words with one number token; the answer is the number.
//   bracket: typed pairs "bo<t> ... bc<t>" laid out left to right; one
//            question per pair whose answer is the whole bracketed span.
//            Types cycle so that the only same-type closer within reach of
//            an opener is its own.
//   fact:    one person per paragraph with a few attribute facts; questions
//            ask for one attribute and the answer is a single value word.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "phraseqa/corpus.hpp"

namespace phraseqa {

struct NumberCorpusOptions {
  std::size_t paragraphs = 200;
  std::size_t min_words = 15;
  std::size_t max_words = 40;
  std::size_t filler_vocab = 60;
  std::uint64_t seed = 1;
};

struct BracketCorpusOptions {
  std::size_t paragraphs = 40;
  std::size_t pairs = 32;
  std::size_t types = 8;
  std::size_t min_inner = 1;
  std::size_t max_inner = 4;
  std::size_t max_gap = 2;
  std::size_t filler_vocab = 20;
  std::uint64_t seed = 1;
};

struct FactCorpusOptions {
  std::size_t paragraphs = 120;
  std::size_t facts = 4;
  std::size_t people = 40;
  std::uint64_t seed = 1;
};

RawDataset make_number_corpus(const NumberCorpusOptions& options);
RawDataset make_bracket_corpus(const BracketCorpusOptions& options);
RawDataset make_fact_corpus(const FactCorpusOptions& options);

// kind: number | bracket | fact. Paragraph count and seed override the
// kind's defaults. Throws InvalidArgument for an unknown kind.
RawDataset make_toy_corpus(std::string_view kind, std::size_t paragraphs, std::uint64_t seed);

}  // namespace phraseqa
