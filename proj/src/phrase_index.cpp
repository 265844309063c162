// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "phraseqa/phrase_index.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <tuple>

#include <zlib.h>

#include "phraseqa/errors.hpp"

namespace phraseqa {
namespace {

static_assert(std::endian::native == std::endian::little, "index I/O assumes a little-endian host");

constexpr char kMagic[4] = {'P', 'Q', 'I', 'X'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::vector<char>& out, T value) {
  const auto* p = reinterpret_cast<const char*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

void put_bytes(std::vector<char>& out, std::string_view s) { out.insert(out.end(), s.begin(), s.end()); }

class Reader {
 public:
  explicit Reader(std::span<const char> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void get_floats(float* dst, std::size_t n) {
    if (n > (bytes_.size() - pos_) / sizeof(float)) fail(ErrorCode::kFormatError, "index file is truncated");
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail(ErrorCode::kFormatError, "index file is truncated");
  }
  std::span<const char> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const char> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

PhraseIndex PhraseIndex::build(std::vector<PhraseVector> vectors, std::size_t dimension) {
  if (!vectors.empty()) dimension = vectors.front().values.size();
  for (const auto& v : vectors)
    if (v.values.size() != dimension)
      fail(ErrorCode::kDimensionMismatch, "vector of dimension " + std::to_string(v.values.size()) +
                                              " in an index of dimension " + std::to_string(dimension));
  std::sort(vectors.begin(), vectors.end(), [](const PhraseVector& a, const PhraseVector& b) {
    return std::tie(a.ctx_id, a.start, a.end) < std::tie(b.ctx_id, b.start, b.end);
  });
  PhraseIndex index;
  index.dimension_ = dimension;
  index.vectors_.reserve(vectors.size() * dimension);
  index.entries_.reserve(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const auto& v = vectors[i];
    if (i > 0 && v.ctx_id == vectors[i - 1].ctx_id && v.start == vectors[i - 1].start && v.end == vectors[i - 1].end)
      fail(ErrorCode::kDuplicateEntry, "duplicate entry (" + v.ctx_id + ", " + std::to_string(v.start) + ", " +
                                           std::to_string(v.end) + ")");
    if (v.ctx_id.size() > 0xffff) fail(ErrorCode::kInvalidArgument, "context id longer than 65535 bytes");
    if (index.contexts_.empty() || index.contexts_.back().ctx_id != v.ctx_id)
      index.contexts_.push_back({v.ctx_id, i, 0});
    ++index.contexts_.back().length;
    index.entry_context_.push_back(static_cast<std::uint32_t>(index.contexts_.size() - 1));
    index.vectors_.insert(index.vectors_.end(), v.values.begin(), v.values.end());
    index.entries_.push_back({static_cast<std::uint32_t>(v.start), static_cast<std::uint32_t>(v.end), v.text});
  }
  return index;
}

std::span<const float> PhraseIndex::vector(std::size_t entry) const {
  if (entry >= entries_.size()) fail(ErrorCode::kIndexOutOfRange, "entry " + std::to_string(entry));
  return {vectors_.data() + entry * dimension_, dimension_};
}

const std::string& PhraseIndex::ctx_id_of(std::size_t entry) const {
  return contexts_.at(entry_context_.at(entry)).ctx_id;
}

std::optional<ContextRange> PhraseIndex::find_context(std::string_view ctx_id) const {
  auto it = std::lower_bound(contexts_.begin(), contexts_.end(), ctx_id,
                             [](const ContextRange& r, std::string_view id) { return r.ctx_id < id; });
  if (it == contexts_.end() || it->ctx_id != ctx_id) return std::nullopt;
  return *it;
}

std::vector<SearchHit> PhraseIndex::search(std::span<const float> query, std::size_t top_k,
                                           std::optional<std::string_view> ctx_filter) const {
  if (query.size() != dimension_)
    fail(ErrorCode::kDimensionMismatch, "query of dimension " + std::to_string(query.size()) +
                                            " against index of dimension " + std::to_string(dimension_));
  std::size_t lo = 0;
  std::size_t hi = entries_.size();
  if (ctx_filter) {
    const auto range = find_context(*ctx_filter);
    if (!range) fail(ErrorCode::kUnknownContext, "context '" + std::string(*ctx_filter) + "' is not indexed");
    lo = range->offset;
    hi = range->offset + range->length;
  }
  std::vector<SearchHit> hits;
  hits.reserve(hi - lo);
  for (std::size_t i = lo; i < hi; ++i) {
    const float* v = vectors_.data() + i * dimension_;
    double s = 0.0;
    for (std::size_t d = 0; d < dimension_; ++d) s += static_cast<double>(query[d]) * static_cast<double>(v[d]);
    hits.push_back({i, s, 0});
  }
  // Entry order already is (ctx_id, start, end) order.
  const auto better = [](const SearchHit& a, const SearchHit& b) {
    return a.score > b.score || (a.score == b.score && a.entry < b.entry);
  };
  const std::size_t take = std::min(top_k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(take), hits.end(), better);
  hits.resize(take);
  for (std::size_t r = 0; r < hits.size(); ++r) hits[r].rank = r;
  return hits;
}

std::vector<SearchHit> PhraseIndex::search(const QuestionVector& query, std::size_t top_k,
                                           std::optional<std::string_view> ctx_filter) const {
  return search(std::span<const float>(query.values), top_k, ctx_filter);
}

std::vector<char> PhraseIndex::serialize() const {
  std::vector<char> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(dimension_));
  put<std::uint64_t>(out, entries_.size());
  put<std::uint64_t>(out, contexts_.size());
  for (const auto& c : contexts_) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(c.ctx_id.size()));
    put_bytes(out, c.ctx_id);
    put<std::uint64_t>(out, c.offset);
    put<std::uint64_t>(out, c.length);
  }
  const auto* vbytes = reinterpret_cast<const char*>(vectors_.data());
  out.insert(out.end(), vbytes, vbytes + vectors_.size() * sizeof(float));
  for (const auto& e : entries_) {
    put<std::uint32_t>(out, e.start);
    put<std::uint32_t>(out, e.end);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.text.size()));
    put_bytes(out, e.text);
  }
  put<std::uint32_t>(out, crc32_of(out));
  return out;
}

PhraseIndex PhraseIndex::deserialize(std::span<const char> bytes) {
  if (bytes.size() < 4 + 4 + 4 + 8 + 8 + 4) fail(ErrorCode::kFormatError, "index file is truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorCode::kFormatError, "bad index magic");
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body.size(), 4);

  Reader r(body);
  r.get_string(4);
  if (r.get<std::uint32_t>() != kVersion) fail(ErrorCode::kFormatError, "unsupported index version");
  // Structural errors are reported before the checksum.
  PhraseIndex index;
  index.dimension_ = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  const auto n_ctx = r.get<std::uint64_t>();
  if (n_ctx > count || n_ctx > r.remaining()) fail(ErrorCode::kFormatError, "context table larger than the file");
  std::uint64_t expected_offset = 0;
  for (std::uint64_t c = 0; c < n_ctx; ++c) {
    ContextRange range;
    range.ctx_id = r.get_string(r.get<std::uint16_t>());
    range.offset = r.get<std::uint64_t>();
    range.length = r.get<std::uint64_t>();
    if (range.offset != expected_offset || range.length == 0)
      fail(ErrorCode::kFormatError, "context table is not a contiguous cover of the entries");
    if (!index.contexts_.empty() && !(index.contexts_.back().ctx_id < range.ctx_id))
      fail(ErrorCode::kFormatError, "context table is not sorted");
    expected_offset += range.length;
    index.contexts_.push_back(std::move(range));
  }
  if (expected_offset != count) fail(ErrorCode::kFormatError, "context table does not cover every entry");
  if (index.dimension_ != 0 && count > r.remaining() / (index.dimension_ * sizeof(float)))
    fail(ErrorCode::kFormatError, "index file is truncated");
  index.vectors_.resize(count * index.dimension_);
  r.get_floats(index.vectors_.data(), index.vectors_.size());
  index.entries_.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    IndexEntry e;
    e.start = r.get<std::uint32_t>();
    e.end = r.get<std::uint32_t>();
    e.text = r.get_string(r.get<std::uint32_t>());
    index.entries_.push_back(std::move(e));
  }
  if (r.remaining() != 0) fail(ErrorCode::kFormatError, "trailing bytes before the checksum");
  if (crc32_of(body) != stored_crc) fail(ErrorCode::kChecksumMismatch, "index checksum does not match its contents");
  for (std::size_t c = 0; c < index.contexts_.size(); ++c)
    for (std::uint64_t i = 0; i < index.contexts_[c].length; ++i) index.entry_context_.push_back(static_cast<std::uint32_t>(c));
  return index;
}

void PhraseIndex::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIoError, "short write to " + path.string());
}

PhraseIndex PhraseIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

bool PhraseIndex::operator==(const PhraseIndex& other) const {
  return dimension_ == other.dimension_ && entries_ == other.entries_ && contexts_ == other.contexts_ &&
         vectors_.size() == other.vectors_.size() &&
         (vectors_.empty() || std::memcmp(vectors_.data(), other.vectors_.data(), vectors_.size() * sizeof(float)) == 0);
}

}  // namespace phraseqa
