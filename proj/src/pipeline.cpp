// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "phraseqa/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <optional>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "phraseqa/errors.hpp"
#include "phraseqa/metrics.hpp"
#include "phraseqa/phrase_index.hpp"
#include "phraseqa/rng.hpp"
#include "phraseqa/selftest.hpp"
#include "phraseqa/toy_corpus.hpp"

namespace phraseqa {
namespace {

void parse_value(std::string_view key, std::string_view text, std::string& out) {
  (void)key;
  out = std::string(text);
}

template <typename Int>
  requires std::is_integral_v<Int>
void parse_value(std::string_view key, std::string_view text, Int& out) {
  Int v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    fail(ErrorCode::kConfigError, std::string(key) + ": expected an integer, got '" + std::string(text) + "'");
  out = v;
}

void parse_value(std::string_view key, std::string_view text, double& out) {
  std::size_t used = 0;
  try {
    out = std::stod(std::string(text), &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size())
    fail(ErrorCode::kConfigError, std::string(key) + ": expected a number, got '" + std::string(text) + "'");
}

void parse_value(std::string_view key, std::string_view text, bool& out) {
  if (text == "true" || text == "1") {
    out = true;
  } else if (text == "false" || text == "0") {
    out = false;
  } else {
    fail(ErrorCode::kConfigError, std::string(key) + ": expected true or false, got '" + std::string(text) + "'");
  }
}

std::string show(const std::string& v) { return v; }
std::string show(bool v) { return v ? "true" : "false"; }
std::string show(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}
template <typename Int>
  requires std::is_integral_v<Int>
std::string show(Int v) {
  return std::to_string(v);
}

struct Binding {
  std::function<void(PipelineConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <typename Access>
Binding bind(Access access) {
  return {[access](PipelineConfig& c, std::string_view key, std::string_view value) {
            parse_value(key, value, access(c));
          },
          [access](const PipelineConfig& c) { return show(access(const_cast<PipelineConfig&>(c))); }};
}

#define PQ_FIELD(expr) bind([](PipelineConfig& c) -> auto& { return c.expr; })

const std::map<std::string, Binding, std::less<>>& bindings() {
  static const std::map<std::string, Binding, std::less<>> table = {
      {"paths.train", PQ_FIELD(paths.train)},
      {"paths.dev", PQ_FIELD(paths.dev)},
      {"paths.work", PQ_FIELD(paths.work)},
      {"paths.vocab", PQ_FIELD(paths.vocab)},
      {"paths.train_cache", PQ_FIELD(paths.train_cache)},
      {"paths.dev_cache", PQ_FIELD(paths.dev_cache)},
      {"paths.extractor", PQ_FIELD(paths.extractor)},
      {"paths.train_candidates", PQ_FIELD(paths.train_candidates)},
      {"paths.dev_candidates", PQ_FIELD(paths.dev_candidates)},
      {"paths.dual", PQ_FIELD(paths.dual)},
      {"paths.index", PQ_FIELD(paths.index)},
      {"paths.report", PQ_FIELD(paths.report)},
      {"paths.vectors", PQ_FIELD(paths.vectors)},
      {"data.min_freq", PQ_FIELD(data.min_freq)},
      {"data.max_context_tokens", PQ_FIELD(data.max_context_tokens)},
      {"data.max_question_tokens", PQ_FIELD(data.max_question_tokens)},
      {"encoder.d_model", PQ_FIELD(encoder.d_model)},
      {"encoder.n_layers", PQ_FIELD(encoder.n_layers)},
      {"encoder.n_heads", PQ_FIELD(encoder.n_heads)},
      {"encoder.d_ff", PQ_FIELD(encoder.d_ff)},
      {"encoder.max_positions", PQ_FIELD(encoder.max_positions)},
      {"encoder.dropout", PQ_FIELD(encoder.dropout_rate)},
      {"encoder.layer_norm_eps", PQ_FIELD(encoder.layer_norm_eps)},
      {"beam.start", PQ_FIELD(beam.start)},
      {"beam.end", PQ_FIELD(beam.end)},
      {"beam.max_answer_tokens", PQ_FIELD(beam.max_answer_tokens)},
      {"beam.k_train", PQ_FIELD(beam.k_train)},
      {"beam.k_eval", PQ_FIELD(beam.k_eval)},
      {"extractor.epochs", PQ_FIELD(extractor.epochs)},
      {"extractor.batch_size", PQ_FIELD(extractor.batch_size)},
      {"extractor.lr", PQ_FIELD(extractor.lr)},
      {"extractor.weight_decay", PQ_FIELD(extractor.weight_decay)},
      {"extractor.warmup", PQ_FIELD(extractor.warmup)},
      {"extractor.train_classic_head", PQ_FIELD(extractor.train_classic_head)},
      {"extractor.dev_k", PQ_FIELD(extractor.dev_k)},
      {"dual.dim", PQ_FIELD(dual.dim)},
      {"dual.pool", PQ_FIELD(dual.pool)},
      {"dual.epochs", PQ_FIELD(dual.epochs)},
      {"dual.micro_batch", PQ_FIELD(dual.micro_batch)},
      {"dual.accumulation", PQ_FIELD(dual.accumulation)},
      {"dual.lr", PQ_FIELD(dual.lr)},
      {"dual.weight_decay", PQ_FIELD(dual.weight_decay)},
      {"dual.warmup", PQ_FIELD(dual.warmup)},
      {"query.question", PQ_FIELD(query.question)},
      {"query.context_id", PQ_FIELD(query.context_id)},
      {"query.top_k", PQ_FIELD(query.top_k)},
      {"toy.kind", PQ_FIELD(toy.kind)},
      {"toy.train_paragraphs", PQ_FIELD(toy.train_paragraphs)},
      {"toy.dev_paragraphs", PQ_FIELD(toy.dev_paragraphs)},
      {"run.seed", PQ_FIELD(seed)},
      {"run.threads", PQ_FIELD(threads)},
  };
  return table;
}

#undef PQ_FIELD

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void require_positive(int value, std::string_view key) {
  if (value <= 0) fail(ErrorCode::kConfigError, std::string(key) + " must be positive");
}

void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

void require_file(const std::filesystem::path& path, std::string_view what) {
  if (!std::filesystem::exists(path))
    fail(ErrorCode::kIoError, "missing " + std::string(what) + " at " + path.string());
}

Vocab load_vocab(const PipelineConfig& c) {
  require_file(c.vocab_path(), "vocabulary");
  return Vocab::load(c.vocab_path());
}

TokenizedDataset load_cache(const std::filesystem::path& path, const Vocab& vocab, std::string_view what) {
  require_file(path, what);
  return load_token_cache(path, vocab);
}

bool has_dev(const PipelineConfig& c) { return !c.paths.dev.empty(); }

ExtractorModel load_extractor(const PipelineConfig& c, const Vocab& vocab) {
  require_file(c.extractor_path(), "extractor checkpoint");
  ExtractorModel model(c.extractor_config(vocab.size()));
  load_checkpoint(model.params(), c.extractor_path());
  return model;
}

DualEncoderModel load_dual(const PipelineConfig& c, const Vocab& vocab) {
  require_file(c.dual_path(), "dual encoder checkpoint");
  DualEncoderModel model(c.dual_config(vocab.size()));
  load_checkpoint(model.params(), c.dual_path());
  return model;
}

PhraseIndex load_index(const PipelineConfig& c) {
  require_file(c.index_path(), "phrase index");
  return PhraseIndex::load(c.index_path());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::kIoError, "short write to " + path.string());
}

}  // namespace

void PipelineConfig::set(std::string_view key, std::string_view value) {
  const auto& table = bindings();
  const auto it = table.find(key);
  if (it == table.end()) fail(ErrorCode::kConfigError, "unknown config key '" + std::string(key) + "'");
  it->second.set(*this, key, value);
  if (key == "dual.pool" && dual.pool != "pair_all" && dual.pool != "second_segment")
    fail(ErrorCode::kConfigError, "dual.pool: expected pair_all or second_segment, got '" + dual.pool + "'");
}

void PipelineConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kConfigError, "cannot open config file " + path.string());
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos)
      fail(ErrorCode::kConfigError, path.string() + ":" + std::to_string(number) + ": expected 'key = value'");
    try {
      set(trim(view.substr(0, eq)), trim(view.substr(eq + 1)));
    } catch (const Error& e) {
      const std::string what = e.what();
      fail(e.code(), path.string() + ":" + std::to_string(number) + ": " + what.substr(what.find(": ") + 2));
    }
  }
}

void PipelineConfig::validate() const {
  require_positive(data.max_context_tokens, "data.max_context_tokens");
  require_positive(data.max_question_tokens, "data.max_question_tokens");
  require_positive(beam.start, "beam.start");
  require_positive(beam.end, "beam.end");
  require_positive(beam.max_answer_tokens, "beam.max_answer_tokens");
  require_positive(beam.k_eval, "beam.k_eval");
  if (beam.k_train < 0) fail(ErrorCode::kConfigError, "beam.k_train must not be negative");
  const long long capacity = static_cast<long long>(beam.start) * beam.end;
  if (beam.k_train > capacity) fail(ErrorCode::kConfigError, "beam.k_train exceeds beam.start * beam.end");
  if (beam.k_eval > capacity) fail(ErrorCode::kConfigError, "beam.k_eval exceeds beam.start * beam.end");
  require_positive(extractor.batch_size, "extractor.batch_size");
  require_positive(extractor.dev_k, "extractor.dev_k");
  require_positive(dual.dim, "dual.dim");
  require_positive(dual.micro_batch, "dual.micro_batch");
  require_positive(dual.accumulation, "dual.accumulation");
  require_positive(query.top_k, "query.top_k");
  if (extractor.epochs < 0 || dual.epochs < 0) fail(ErrorCode::kConfigError, "epochs must not be negative");
  if (data.max_context_tokens + 2 > encoder.max_positions)
    fail(ErrorCode::kConfigError, "data.max_context_tokens does not fit encoder.max_positions");
  EncoderConfig probe = encoder;
  probe.vocab_size = 4;
  try {
    probe.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kConfigError, std::string("encoder: ") + e.what());
  }
}

std::string PipelineConfig::dump() const {
  std::string out;
  for (const auto& [key, binding] : bindings()) out += key + " = " + binding.get(*this) + "\n";
  return out;
}

std::filesystem::path PipelineConfig::artifact(const std::string& explicit_path,
                                               std::string_view default_name) const {
  if (!explicit_path.empty()) return explicit_path;
  return std::filesystem::path(paths.work) / default_name;
}

BeamConfig PipelineConfig::beam_config() const { return {beam.start, beam.end, beam.max_answer_tokens}; }

ExtractorConfig PipelineConfig::extractor_config(std::size_t vocab_size) const {
  ExtractorConfig c;
  c.encoder = encoder;
  c.encoder.vocab_size = static_cast<int>(vocab_size);
  c.max_answer_tokens = beam.max_answer_tokens;
  return c;
}

DualEncoderConfig PipelineConfig::dual_config(std::size_t vocab_size) const {
  DualEncoderConfig c;
  c.encoder = encoder;
  c.encoder.vocab_size = static_cast<int>(vocab_size);
  c.dim = dual.dim;
  c.pool = dual.pool == "second_segment" ? Pooling::kSecondSegment : Pooling::kPairAll;
  return c;
}

std::string canonical_key(std::string_view flag) {
  if (flag == "question") return "query.question";
  if (flag == "context-id") return "query.context_id";
  if (flag == "top-k") return "query.top_k";
  if (flag == "seed") return "run.seed";
  if (flag == "threads") return "run.threads";
  return std::string(flag);
}

void save_candidates(const TokenizedDataset& data, const std::vector<std::vector<SpanCandidate>>& candidates,
                     const std::filesystem::path& path) {
  if (candidates.size() != data.contexts.size())
    fail(ErrorCode::kLengthMismatch, "candidate lists do not match the contexts");
  std::string text;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    nlohmann::json spans = nlohmann::json::array();
    const auto& ctx = data.contexts[i];
    for (const auto& c : candidates[i])
      spans.push_back({{"start", c.start},
                       {"end", c.end},
                       {"text", ctx.tokens.span_text(ctx.text, c.start, c.end)},
                       {"score", c.score}});
    text += nlohmann::json{{"ctx_id", data.contexts[i].ctx_id}, {"candidates", std::move(spans)}}.dump() + "\n";
  }
  write_text(path, text);
}

std::vector<std::vector<SpanCandidate>> load_candidates(const TokenizedDataset& data,
                                                        const std::filesystem::path& path) {
  require_file(path, "candidate file");
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<std::vector<SpanCandidate>> out(data.contexts.size());
  std::vector<bool> seen(data.contexts.size(), false);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(number);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kMalformedJson, where + ": " + e.what());
    }
    try {
      const auto idx = data.find_context(j.at("ctx_id").get<std::string>());
      if (!idx) fail(ErrorCode::kFormatError, where + ": unknown context id");
      if (seen[*idx]) fail(ErrorCode::kFormatError, where + ": context listed twice");
      seen[*idx] = true;
      const std::size_t m = data.contexts[*idx].tokens.m();
      for (const auto& c : j.at("candidates")) {
        SpanCandidate s{c.at("start").get<std::size_t>(), c.at("end").get<std::size_t>(), c.at("score").get<double>(),
                        out[*idx].size()};
        if (s.start > s.end || s.end >= m) fail(ErrorCode::kFormatError, where + ": span outside its context");
        out[*idx].push_back(s);
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kSchemaViolation, where + ": " + e.what());
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) fail(ErrorCode::kFormatError, path.string() + ": no candidates for " + data.contexts[i].ctx_id);
  return out;
}

void run_make_toy(const PipelineConfig& c, std::ostream& out) {
  if (c.paths.train.empty()) fail(ErrorCode::kConfigError, "paths.train is required");
  const auto train = make_toy_corpus(c.toy.kind, static_cast<std::size_t>(c.toy.train_paragraphs),
                                     derive_seed(c.seed, "toy.train"));
  ensure_parent(c.paths.train);
  save_squad_json(train, c.paths.train);
  out << "wrote " << train.num_questions() << " questions to " << c.paths.train << "\n";
  if (has_dev(c)) {
    const auto dev = make_toy_corpus(c.toy.kind, static_cast<std::size_t>(c.toy.dev_paragraphs),
                                     derive_seed(c.seed, "toy.dev"));
    ensure_parent(c.paths.dev);
    save_squad_json(dev, c.paths.dev);
    out << "wrote " << dev.num_questions() << " questions to " << c.paths.dev << "\n";
  }
}

void run_ingest(const PipelineConfig& c, std::ostream& out) {
  if (c.paths.train.empty()) fail(ErrorCode::kConfigError, "paths.train is required");
  const auto raw = load_squad_json(c.paths.train);
  const Vocab vocab = build_vocab(raw, c.data.min_freq);
  ensure_parent(c.vocab_path());
  vocab.save(c.vocab_path());
  const TokenizeOptions opts{static_cast<std::size_t>(c.data.max_context_tokens),
                             static_cast<std::size_t>(c.data.max_question_tokens)};
  const auto ingest_one = [&](const RawDataset& data, const std::filesystem::path& cache, std::string_view name) {
    TokenizeStats stats;
    const auto tokenized = tokenize_dataset(data, vocab, opts, &stats);
    ensure_parent(cache);
    save_token_cache(tokenized, vocab, cache);
    out << name << ": " << tokenized.contexts.size() << " contexts, " << tokenized.questions.size()
        << " questions (dropped " << stats.dropped_truncated << " truncated, " << stats.dropped_unalignable
        << " unalignable, " << stats.dropped_empty_question << " empty)\n";
  };
  ingest_one(raw, c.train_cache_path(), "train");
  if (has_dev(c)) ingest_one(load_squad_json(c.paths.dev), c.dev_cache_path(), "dev");
  out << "vocabulary: " << vocab.size() << " tokens\n";
}

void run_train_extractor(const PipelineConfig& c, std::ostream& out) {
  seed_everything(c.seed);
  const Vocab vocab = load_vocab(c);
  const auto train = load_cache(c.train_cache_path(), vocab, "train token cache");
  std::optional<TokenizedDataset> dev;
  if (has_dev(c)) dev = load_cache(c.dev_cache_path(), vocab, "dev token cache");

  ExtractorModel model(c.extractor_config(vocab.size()));
  Rng init_rng(derive_seed(root_seed(), "extractor.init"));
  model.init(init_rng);

  ExtractorTrainConfig tc;
  tc.epochs = c.extractor.epochs;
  tc.batch_size = static_cast<std::size_t>(c.extractor.batch_size);
  tc.optimizer.learning_rate = c.extractor.lr;
  tc.optimizer.weight_decay = c.extractor.weight_decay;
  tc.warmup_fraction = c.extractor.warmup;
  tc.train_classic_head = c.extractor.train_classic_head;
  tc.seed = derive_seed(root_seed(), "extractor.train");
  tc.threads = c.threads;
  tc.beam = c.beam_config();
  tc.dev_k = static_cast<std::size_t>(c.extractor.dev_k);
  tc.on_epoch = [&](const ExtractorEpochStats& s) {
    out << "epoch " << s.epoch << ": loss " << s.train_loss;
    if (dev) out << ", dev em-recall@" << c.extractor.dev_k << " " << s.dev_em_recall;
    out << "\n";
  };
  const auto report = train_extractor(model, train, dev ? &*dev : nullptr, tc);
  ensure_parent(c.extractor_path());
  save_checkpoint(model.params(), c.extractor_path());
  out << "kept epoch " << report.best_epoch << ", wrote " << c.extractor_path().string() << "\n";
}

void run_extract_candidates(const PipelineConfig& c, std::ostream& out) {
  const Vocab vocab = load_vocab(c);
  const ExtractorModel model = load_extractor(c, vocab);
  const BeamConfig beam = c.beam_config();
  const auto train = load_cache(c.train_cache_path(), vocab, "train token cache");
  save_candidates(train, extract_all(model, train, beam, static_cast<std::size_t>(c.beam.k_train), c.threads),
                  c.train_candidates_path());
  out << "train: " << train.contexts.size() << " contexts x " << c.beam.k_train << " candidates\n";
  if (has_dev(c)) {
    const auto dev = load_cache(c.dev_cache_path(), vocab, "dev token cache");
    const auto cands = extract_all(model, dev, beam, static_cast<std::size_t>(c.beam.k_eval), c.threads);
    save_candidates(dev, cands, c.dev_candidates_path());
    const auto recall = dataset_recall(dev, cands);
    out << "dev: " << dev.contexts.size() << " contexts x " << c.beam.k_eval << " candidates, em-recall "
        << recall.em_recall << ", f1-recall " << recall.f1_max_mean << "\n";
  }
}

void run_train_encoder(const PipelineConfig& c, std::ostream& out) {
  seed_everything(c.seed);
  const Vocab vocab = load_vocab(c);
  const auto train = load_cache(c.train_cache_path(), vocab, "train token cache");
  const auto set =
      build_training_set(train, load_candidates(train, c.train_candidates_path()), static_cast<std::size_t>(c.beam.k_train));
  out << "training examples: " << set.examples.size() << " of " << set.considered << " (retention "
      << set.retention() << ")\n";
  std::optional<TokenizedDataset> dev;
  DevSlice slice;
  if (has_dev(c)) {
    dev = load_cache(c.dev_cache_path(), vocab, "dev token cache");
    slice.data = &*dev;
    slice.context_candidates = load_candidates(*dev, c.dev_candidates_path());
  }

  DualEncoderModel model(c.dual_config(vocab.size()));
  Rng init_rng(derive_seed(root_seed(), "dual.init"));
  model.init(init_rng);

  DualTrainConfig tc;
  tc.epochs = c.dual.epochs;
  tc.micro_batch = static_cast<std::size_t>(c.dual.micro_batch);
  tc.accumulation_steps = static_cast<std::size_t>(c.dual.accumulation);
  tc.optimizer.learning_rate = c.dual.lr;
  tc.optimizer.weight_decay = c.dual.weight_decay;
  tc.warmup_fraction = c.dual.warmup;
  tc.seed = derive_seed(root_seed(), "dual.train");
  tc.threads = c.threads;
  tc.on_epoch = [&](const DualEpochStats& s) {
    out << "epoch " << s.epoch << ": loss " << s.train_loss;
    if (dev) out << ", dev exact-match " << s.dev_exact_match << ", f1 " << s.dev_f1;
    out << "\n";
  };
  const auto report = train_dual_encoder(model, train, set, dev ? &slice : nullptr, tc);
  ensure_parent(c.dual_path());
  save_checkpoint(model.params(), c.dual_path());
  out << "kept epoch " << report.best_epoch << ", wrote " << c.dual_path().string() << "\n";
}

void run_build_index(const PipelineConfig& c, std::ostream& out) {
  if (!has_dev(c)) fail(ErrorCode::kConfigError, "paths.dev is required to build an index");
  const Vocab vocab = load_vocab(c);
  const DualEncoderModel model = load_dual(c, vocab);
  const auto dev = load_cache(c.dev_cache_path(), vocab, "dev token cache");
  const auto index = build_candidate_index(dev, load_candidates(dev, c.dev_candidates_path()), model, c.threads);
  if (!c.paths.vectors.empty()) {
    std::string text;
    for (std::size_t i = 0; i < index.size(); ++i) {
      const auto v = index.vector(i);
      const auto& e = index.entry(i);
      text += nlohmann::json{{"ctx_id", index.ctx_id_of(i)},
                             {"start", e.start},
                             {"end", e.end},
                             {"text", e.text},
                             {"vec", std::vector<float>(v.begin(), v.end())}}
                  .dump() +
              "\n";
    }
    write_text(c.paths.vectors, text);
  }
  ensure_parent(c.index_path());
  index.save(c.index_path());
  out << "indexed " << index.size() << " phrases from " << index.contexts().size() << " contexts into "
      << c.index_path().string() << "\n";
}

std::vector<SearchHit> run_query(const PipelineConfig& c, std::ostream& out) {
  if (c.query.question.empty()) fail(ErrorCode::kConfigError, "query.question (--question) is required");
  require_file(c.dual_path(), "dual encoder checkpoint");
  require_file(c.index_path(), "phrase index");
  const Vocab vocab = load_vocab(c);
  const DualEncoderModel model = load_dual(c, vocab);
  const PhraseIndex index = load_index(c);
  TokenizedQuestion q;
  for (const auto& t : tokenize(c.query.question)) q.tokens.push_back(vocab.id(t.text));
  if (q.tokens.size() > static_cast<std::size_t>(c.data.max_question_tokens))
    q.tokens.resize(static_cast<std::size_t>(c.data.max_question_tokens));
  std::optional<std::string_view> filter;
  if (!c.query.context_id.empty()) filter = c.query.context_id;
  const auto hits = index.search(model.encode_question(q), static_cast<std::size_t>(c.query.top_k), filter);
  for (const auto& h : hits) {
    const auto& e = index.entry(h.entry);
    char score[32];
    std::snprintf(score, sizeof(score), "%.6f", h.score);
    out << (h.rank + 1) << "\t" << score << "\t" << index.ctx_id_of(h.entry) << "\t[" << e.start << ", " << e.end
        << "]\t" << e.text << "\n";
  }
  return hits;
}

EvalReport run_evaluate(const PipelineConfig& c, std::ostream& out) {
  if (!has_dev(c)) fail(ErrorCode::kConfigError, "paths.dev is required to evaluate");
  require_file(c.dual_path(), "dual encoder checkpoint");
  require_file(c.index_path(), "phrase index");
  const Vocab vocab = load_vocab(c);
  const DualEncoderModel model = load_dual(c, vocab);
  const PhraseIndex index = load_index(c);
  const auto dev = load_cache(c.dev_cache_path(), vocab, "dev token cache");
  const EvalReport report = evaluate_with_index(dev, index, model, c.threads);

  // The indexed candidate set bounds the achievable exact match.
  std::vector<std::vector<std::string>> texts, golds;
  for (const auto& q : dev.questions) {
    std::vector<std::string> t;
    if (const auto range = index.find_context(dev.context_of(q).ctx_id))
      for (std::uint64_t i = range->offset; i < range->offset + range->length; ++i) t.push_back(index.entry(i).text);
    texts.push_back(std::move(t));
    golds.push_back(q.answers);
  }
  const auto recall = candidate_recall(texts, golds);

  write_text(c.report_path(), report.to_json() + "\n");
  out << report.summary_table();
  char line[128];
  std::snprintf(line, sizeof(line), "candidate em-recall %.2f, f1-recall %.2f\n", 100.0 * recall.em_recall,
                100.0 * recall.f1_max_mean);
  out << line << "wrote " << c.report_path().string() << "\n";
  return report;
}

EvalReport run_all(const PipelineConfig& c, std::ostream& out) {
  run_ingest(c, out);
  run_train_extractor(c, out);
  run_extract_candidates(c, out);
  run_train_encoder(c, out);
  run_build_index(c, out);
  return run_evaluate(c, out);
}

std::vector<std::string> subcommand_names() {
  return {"ingest", "train-extractor", "extract-candidates", "train-encoder", "build-index", "query",
          "evaluate", "selftest", "make-toy", "run-all"};
}

int run_subcommand(std::string_view name, PipelineConfig config,
                   const std::vector<std::pair<std::string, std::string>>& overrides, std::ostream& out,
                   std::ostream& err) {
  try {
    const auto names = subcommand_names();
    if (std::find(names.begin(), names.end(), name) == names.end())
      fail(ErrorCode::kUnknownSubcommand, "unknown subcommand '" + std::string(name) + "'");
    for (const auto& [key, value] : overrides) config.set(canonical_key(key), value);
    config.validate();
    if (name == "selftest") {
      bool ok = true;
      for (const auto& r : run_selftests(config.seed)) {
        out << (r.passed ? "PASS  " : "FAIL  ") << r.name;
        if (!r.passed) out << ": " << r.detail;
        out << "\n";
        ok = ok && r.passed;
      }
      return ok ? 0 : 3;
    }
    if (name == "make-toy") run_make_toy(config, out);
    if (name == "ingest") run_ingest(config, out);
    if (name == "train-extractor") run_train_extractor(config, out);
    if (name == "extract-candidates") run_extract_candidates(config, out);
    if (name == "train-encoder") run_train_encoder(config, out);
    if (name == "build-index") run_build_index(config, out);
    if (name == "query") run_query(config, out);
    if (name == "evaluate") run_evaluate(config, out);
    if (name == "run-all") run_all(config, out);
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    switch (e.code()) {
      case ErrorCode::kConfigError:
      case ErrorCode::kUnknownSubcommand:
      case ErrorCode::kInvalidArgument:
        return 1;
      default:
        return is_data_error(e.code()) ? 2 : 3;
    }
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace phraseqa
