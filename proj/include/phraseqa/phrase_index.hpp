// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

// Offline store of phrase vectors with exact maximum-inner-product search.
//
// On-disk layout (all integers little-endian):
//   "PQIX" | version u32 | dimension u32 | entry count u64
//   context table: count u64, then per context
//       id length u16 | UTF-8 id | start offset u64 | length u64
//   vector block: count x dimension f32
//   metadata block: per entry start u32 | end u32 | text length u32 | UTF-8 text
//   CRC32 (zlib polynomial) of every preceding byte, u32

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "phraseqa/dual_encoder.hpp"

namespace phraseqa {

struct IndexEntry {
  std::uint32_t start = 0;
  std::uint32_t end = 0;
  std::string text;

  bool operator==(const IndexEntry&) const = default;
};

struct ContextRange {
  std::string ctx_id;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;

  bool operator==(const ContextRange&) const = default;
};

struct SearchHit {
  std::size_t entry = 0;
  double score = 0.0;
  std::size_t rank = 0;
};

class PhraseIndex {
 public:
  PhraseIndex() = default;

  // Orders entries by (ctx_id, start, end). `dimension` is required only for
  // an empty input; otherwise it is taken from the vectors.
  static PhraseIndex build(std::vector<PhraseVector> vectors, std::size_t dimension = 0);

  std::size_t dimension() const { return dimension_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::span<const float> vector(std::size_t entry) const;
  const IndexEntry& entry(std::size_t i) const { return entries_.at(i); }
  const std::string& ctx_id_of(std::size_t entry) const;
  const std::vector<ContextRange>& contexts() const { return contexts_; }
  std::optional<ContextRange> find_context(std::string_view ctx_id) const;

  // Exact scan; top_k by score descending, ties by (ctx_id, start, end).
  // With a filter only that context's range is scanned.
  std::vector<SearchHit> search(std::span<const float> query, std::size_t top_k,
                                std::optional<std::string_view> ctx_filter = std::nullopt) const;
  std::vector<SearchHit> search(const QuestionVector& query, std::size_t top_k,
                                std::optional<std::string_view> ctx_filter = std::nullopt) const;

  std::vector<char> serialize() const;
  static PhraseIndex deserialize(std::span<const char> bytes);
  void save(const std::filesystem::path& path) const;
  static PhraseIndex load(const std::filesystem::path& path);

  bool operator==(const PhraseIndex& other) const;

 private:
  std::size_t dimension_ = 0;
  std::vector<float> vectors_;
  std::vector<IndexEntry> entries_;
  std::vector<ContextRange> contexts_;
  std::vector<std::uint32_t> entry_context_;
};

}  // namespace phraseqa
