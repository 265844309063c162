// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

// Config-driven pipeline stages behind the command-line tool:
// ingest -> train-extractor -> extract-candidates -> train-encoder ->
// build-index -> query / evaluate.
//
// Config files hold one `section.key = value` per line; `#` starts a comment.
// Artifact paths left empty resolve to <paths.work>/<default file name>.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "phraseqa/corpus.hpp"
#include "phraseqa/dual_encoder.hpp"
#include "phraseqa/encoder.hpp"
#include "phraseqa/evalkit.hpp"
#include "phraseqa/extractor.hpp"

namespace phraseqa {

struct PipelineConfig {
  struct Paths {
    std::string train;  // SQuAD-format JSON
    std::string dev;    // SQuAD-format JSON; indexed and evaluated
    std::string work = "work";
    std::string vocab;
    std::string train_cache;
    std::string dev_cache;
    std::string extractor;
    std::string train_candidates;
    std::string dev_candidates;
    std::string dual;
    std::string index;
    std::string report;
    std::string vectors;  // optional JSON-lines vector dump written by build-index
  } paths;

  struct Data {
    int min_freq = 1;
    int max_context_tokens = 512;
    int max_question_tokens = 64;
  } data;

  EncoderConfig encoder;

  struct Beam {
    int start = 50;
    int end = 2;
    int max_answer_tokens = 30;
    int k_train = 60;
    int k_eval = 100;
  } beam;

  struct Extractor {
    int epochs = 2;
    int batch_size = 32;
    double lr = 1e-4;
    double weight_decay = 0.01;
    double warmup = 0.0;
    bool train_classic_head = true;
    int dev_k = 10;
  } extractor;

  struct Dual {
    int dim = 64;
    std::string pool = "pair_all";
    int epochs = 5;
    int micro_batch = 4;
    int accumulation = 8;
    double lr = 1e-5;
    double weight_decay = 0.01;
    double warmup = 0.0;
  } dual;

  struct Query {
    std::string question;
    std::string context_id;
    int top_k = 5;
  } query;

  struct Toy {
    std::string kind = "fact";
    int train_paragraphs = 120;
    int dev_paragraphs = 30;
  } toy;

  std::uint64_t seed = 1;
  int threads = 0;  // 0 = all cores

  // Throws ConfigError naming the key for unknown keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  void load_file(const std::filesystem::path& path);
  // Cross-field checks (k_train, k_eval <= s * e; positive sizes).
  void validate() const;
  // Every key with its current value, one `key = value` per line.
  std::string dump() const;

  std::filesystem::path artifact(const std::string& explicit_path, std::string_view default_name) const;
  std::filesystem::path vocab_path() const { return artifact(paths.vocab, "vocab.txt"); }
  std::filesystem::path train_cache_path() const { return artifact(paths.train_cache, "train.tokens.jsonl"); }
  std::filesystem::path dev_cache_path() const { return artifact(paths.dev_cache, "dev.tokens.jsonl"); }
  std::filesystem::path extractor_path() const { return artifact(paths.extractor, "extractor.eqnn"); }
  std::filesystem::path train_candidates_path() const {
    return artifact(paths.train_candidates, "train.candidates.jsonl");
  }
  std::filesystem::path dev_candidates_path() const { return artifact(paths.dev_candidates, "dev.candidates.jsonl"); }
  std::filesystem::path dual_path() const { return artifact(paths.dual, "dual.eqnn"); }
  std::filesystem::path index_path() const { return artifact(paths.index, "phrases.pqix"); }
  std::filesystem::path report_path() const { return artifact(paths.report, "report.json"); }

  BeamConfig beam_config() const;
  ExtractorConfig extractor_config(std::size_t vocab_size) const;
  DualEncoderConfig dual_config(std::size_t vocab_size) const;
};

// Maps CLI flag spellings (--question, --context-id, --top-k) onto config
// keys; other names pass through unchanged.
std::string canonical_key(std::string_view flag);

// Per-context candidate lists, one JSON object per line.
void save_candidates(const TokenizedDataset& data, const std::vector<std::vector<SpanCandidate>>& candidates,
                     const std::filesystem::path& path);
std::vector<std::vector<SpanCandidate>> load_candidates(const TokenizedDataset& data,
                                                        const std::filesystem::path& path);

void run_make_toy(const PipelineConfig& config, std::ostream& out);
void run_ingest(const PipelineConfig& config, std::ostream& out);
void run_train_extractor(const PipelineConfig& config, std::ostream& out);
void run_extract_candidates(const PipelineConfig& config, std::ostream& out);
void run_train_encoder(const PipelineConfig& config, std::ostream& out);
void run_build_index(const PipelineConfig& config, std::ostream& out);
std::vector<SearchHit> run_query(const PipelineConfig& config, std::ostream& out);
EvalReport run_evaluate(const PipelineConfig& config, std::ostream& out);
// Every stage from ingest through evaluate.
EvalReport run_all(const PipelineConfig& config, std::ostream& out);

// Applies overrides, validates, dispatches. Returns 0 on success, 1 on a
// usage or config error, 2 on a data error, 3 on anything else. Errors are
// written to `err`.
int run_subcommand(std::string_view name, PipelineConfig config,
                   const std::vector<std::pair<std::string, std::string>>& overrides, std::ostream& out,
                   std::ostream& err);

std::vector<std::string> subcommand_names();

}  // namespace phraseqa
