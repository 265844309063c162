// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <tuple>

#include "phraseqa/errors.hpp"
#include "phraseqa/phrase_index.hpp"
#include "phraseqa/rng.hpp"
#include "test_util.hpp"

using namespace phraseqa;
using phraseqa::testing::reference_crc32;

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

PhraseVector pv(std::string ctx, std::size_t start, std::size_t end, std::vector<float> values) {
  PhraseVector v;
  v.ctx_id = std::move(ctx);
  v.start = start;
  v.end = end;
  v.text = "t" + std::to_string(start) + "_" + std::to_string(end);
  v.values = std::move(values);
  return v;
}

std::vector<PhraseVector> random_vectors(Rng& rng, std::size_t n, std::size_t dim, std::size_t contexts) {
  std::vector<PhraseVector> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> v(dim);
    for (auto& x : v) x = static_cast<float>(rng.normal(0, 1));
    out.push_back(pv("ctx" + std::to_string(rng.index(contexts)), i, i + rng.index(3), std::move(v)));
  }
  return out;
}

std::vector<float> random_query(Rng& rng, std::size_t dim) {
  std::vector<float> q(dim);
  for (auto& x : q) x = static_cast<float>(rng.normal(0, 1));
  return q;
}

// Full sort of every (optionally filtered) entry, written independently of
// the index: scores in double, ties by (ctx_id, start, end).
std::vector<std::size_t> brute_force(const PhraseIndex& index, const std::vector<float>& q, std::size_t k,
                                     const std::string* ctx = nullptr) {
  struct Row {
    double score;
    std::string ctx;
    std::uint32_t start, end;
    std::size_t entry;
  };
  std::vector<Row> rows;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (ctx && index.ctx_id_of(i) != *ctx) continue;
    double s = 0.0;
    const auto v = index.vector(i);
    for (std::size_t d = 0; d < q.size(); ++d) s += static_cast<double>(q[d]) * static_cast<double>(v[d]);
    rows.push_back({s, index.ctx_id_of(i), index.entry(i).start, index.entry(i).end, i});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.ctx, a.start, a.end) < std::tie(b.ctx, b.start, b.end);
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(k, rows.size()); ++i) out.push_back(rows[i].entry);
  return out;
}

std::vector<std::size_t> entries_of(const std::vector<SearchHit>& hits) {
  std::vector<std::size_t> out;
  for (const auto& h : hits) out.push_back(h.entry);
  return out;
}

template <typename T>
T read_le(const std::vector<char>& bytes, std::size_t at) {
  T v{};
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<T>(static_cast<std::uint8_t>(bytes[at + i])) << (8 * i);
  return v;
}

}  // namespace

TEST_CASE("build: empty, grouping, errors") {
  const auto empty = PhraseIndex::build({}, 4);
  CHECK(empty.empty());
  CHECK(empty.dimension() == 4);
  CHECK(empty.contexts().empty());
  CHECK(empty.search(std::vector<float>(4, 1.0f), 5).empty());

  Rng rng(1);
  std::vector<PhraseVector> vectors;
  for (const char* ctx : {"b", "a", "c"})
    for (std::size_t i = 0; i < 100; ++i) vectors.push_back(pv(ctx, 99 - i, 99 - i, random_query(rng, 3)));
  std::shuffle(vectors.begin(), vectors.end(), rng.engine());
  const auto index = PhraseIndex::build(vectors);
  CHECK(index.size() == 300);
  REQUIRE(index.contexts().size() == 3);
  std::uint64_t offset = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    const auto& r = index.contexts()[c];
    CHECK(r.ctx_id == std::string(1, static_cast<char>('a' + c)));
    CHECK(r.offset == offset);
    CHECK(r.length == 100);
    offset += r.length;
    for (std::uint64_t i = r.offset; i < r.offset + r.length; ++i) {
      CHECK(index.ctx_id_of(i) == r.ctx_id);
      CHECK(index.entry(i).start == i - r.offset);
    }
  }
  CHECK(index.find_context("b")->offset == 100);
  CHECK(!index.find_context("zz"));

  auto dup = vectors;
  dup.push_back(vectors.front());
  CHECK(code_of([&] { PhraseIndex::build(dup); }) == ErrorCode::kDuplicateEntry);
  auto mixed = vectors;
  mixed.push_back(pv("d", 0, 0, {1.0f, 2.0f}));
  CHECK(code_of([&] { PhraseIndex::build(mixed); }) == ErrorCode::kDimensionMismatch);
}

TEST_CASE("search: hand example, top_k, errors") {
  const auto index = PhraseIndex::build({pv("c", 0, 0, {1, 0}), pv("c", 1, 1, {0, 1})});
  const std::vector<float> q = {2, 1};
  const auto hits = index.search(q, 1);
  REQUIRE(hits.size() == 1);
  CHECK(hits[0].entry == 0);
  CHECK(hits[0].score == 2.0);
  CHECK(hits[0].rank == 0);
  const auto all = index.search(q, 10);
  REQUIRE(all.size() == 2);
  CHECK(all[1].score == 1.0);
  CHECK(all[1].rank == 1);
  CHECK(index.search(q, 0).empty());

  const std::vector<float> three = {1, 2, 3};
  CHECK(code_of([&] { index.search(three, 1); }) == ErrorCode::kDimensionMismatch);
  CHECK(code_of([&] { index.search(q, 1, "nope"); }) == ErrorCode::kUnknownContext);

  QuestionVector qv{q, "q1"};
  CHECK(index.search(qv, 1)[0].entry == 0);
}

TEST_CASE("ties break by (ctx_id, start, end)") {
  const auto index = PhraseIndex::build({pv("b", 0, 0, {1, 0}), pv("a", 5, 6, {1, 0}), pv("a", 5, 5, {1, 0}),
                                         pv("a", 2, 9, {0.5f, 0})});
  const std::vector<float> q = {1, 0};
  const auto hits = index.search(q, 4);
  REQUIRE(hits.size() == 4);
  CHECK((index.ctx_id_of(hits[0].entry) == "a" && index.entry(hits[0].entry).end == 5));
  CHECK((index.ctx_id_of(hits[1].entry) == "a" && index.entry(hits[1].entry).end == 6));
  CHECK(index.ctx_id_of(hits[2].entry) == "b");
  CHECK(hits[3].score == 0.5);
}

TEST_CASE("search matches the brute-force oracle") {
  Rng rng(2);
  for (const std::size_t n : {1u, 17u, 1000u, 5000u}) {
    const auto index = PhraseIndex::build(random_vectors(rng, n, 16, 7));
    for (int trial = 0; trial < 10; ++trial) {
      const auto q = random_query(rng, 16);
      const std::size_t k = 1 + rng.index(20);
      CHECK(entries_of(index.search(q, k)) == brute_force(index, q, k));
      const std::string ctx = index.contexts()[rng.index(index.contexts().size())].ctx_id;
      CHECK(entries_of(index.search(q, k, ctx)) == brute_force(index, q, k, &ctx));
      for (const auto& h : index.search(q, k, ctx)) CHECK(index.ctx_id_of(h.entry) == ctx);
    }
  }
}

TEST_CASE("search is monotone in top_k and scores never increase") {
  Rng rng(3);
  const auto index = PhraseIndex::build(random_vectors(rng, 300, 8, 3));
  const auto q = random_query(rng, 8);
  auto prev = index.search(q, 0);
  for (std::size_t k = 1; k <= 40; ++k) {
    const auto cur = index.search(q, k);
    REQUIRE(cur.size() == k);
    for (std::size_t i = 0; i < prev.size(); ++i) CHECK(cur[i].entry == prev[i].entry);
    for (std::size_t i = 1; i < cur.size(); ++i) CHECK(cur[i - 1].score >= cur[i].score);
    prev = cur;
  }
}

TEST_CASE("persistence is bit-exact") {
  Rng rng(4);
  const auto index = PhraseIndex::build(random_vectors(rng, 300, 12, 5));
  TempDir dir;
  const auto path = dir.path / "phrases.pqix";
  index.save(path);
  const auto loaded = PhraseIndex::load(path);
  CHECK(loaded == index);
  for (int t = 0; t < 50; ++t) {
    const auto q = random_query(rng, 12);
    const auto a = index.search(q, 10), b = loaded.search(q, 10);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].entry == b[i].entry);
      CHECK(std::memcmp(&a[i].score, &b[i].score, sizeof(double)) == 0);
    }
  }
  CHECK(loaded.serialize() == index.serialize());

  const auto empty = PhraseIndex::build({}, 3);
  empty.save(dir.path / "empty.pqix");
  const auto e2 = PhraseIndex::load(dir.path / "empty.pqix");
  CHECK(e2.empty());
  CHECK(e2.dimension() == 3);

  CHECK(code_of([&] { PhraseIndex::load(dir.path / "missing.pqix"); }) == ErrorCode::kIoError);
}

TEST_CASE("on-disk header and checksum") {
  Rng rng(5);
  const auto index = PhraseIndex::build(random_vectors(rng, 20, 4, 2));
  const auto bytes = index.serialize();
  CHECK(std::string(bytes.data(), 4) == "PQIX");
  CHECK(read_le<std::uint32_t>(bytes, 8) == 4);
  CHECK(read_le<std::uint64_t>(bytes, 12) == 20);
  CHECK(read_le<std::uint64_t>(bytes, 20) == index.contexts().size());
  CHECK(read_le<std::uint32_t>(bytes, bytes.size() - 4) == reference_crc32(bytes.data(), bytes.size() - 4));
}

TEST_CASE("corrupt files are rejected whole") {
  Rng rng(6);
  const auto index = PhraseIndex::build(random_vectors(rng, 50, 4, 3));
  const auto bytes = index.serialize();
  for (const std::size_t cut : {std::size_t{1}, std::size_t{4}, std::size_t{7}, bytes.size() / 2, bytes.size() - 10}) {
    const std::vector<char> truncated(bytes.begin(), bytes.end() - static_cast<std::ptrdiff_t>(cut));
    CHECK(code_of([&] { PhraseIndex::deserialize(truncated); }) == ErrorCode::kFormatError);
  }
  auto magic = bytes;
  magic[1] = 'X';
  CHECK(code_of([&] { PhraseIndex::deserialize(magic); }) == ErrorCode::kFormatError);
  auto version = bytes;
  version[4] = 9;
  CHECK(code_of([&] { PhraseIndex::deserialize(version); }) == ErrorCode::kFormatError);
  auto flipped = bytes;
  flipped[bytes.size() - 40] ^= 0x10;  // inside the metadata block
  CHECK(code_of([&] { PhraseIndex::deserialize(flipped); }) == ErrorCode::kChecksumMismatch);
  auto crc = bytes;
  crc.back() ^= 0x01;
  CHECK(code_of([&] { PhraseIndex::deserialize(crc); }) == ErrorCode::kChecksumMismatch);

  TempDir dir;
  {
    std::ofstream out(dir.path / "bad.pqix", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 3));
  }
  CHECK(code_of([&] { PhraseIndex::load(dir.path / "bad.pqix"); }) == ErrorCode::kFormatError);
}
