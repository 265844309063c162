// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

// phraseqa <subcommand> [--config FILE] [--section.key VALUE ...]

#include <cstdlib>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "phraseqa/errors.hpp"
#include "phraseqa/pipeline.hpp"

namespace {

// Turns leftover "--key value" / "--key=value" tokens into override pairs.
std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0)
      phraseqa::fail(phraseqa::ErrorCode::kConfigError, "unexpected argument '" + arg + "'");
    const std::string body = arg.substr(2);
    if (const auto eq = body.find('='); eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) phraseqa::fail(phraseqa::ErrorCode::kConfigError, "missing value for " + arg);
      out.emplace_back(body, extras[++i]);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phrase-indexed question answering pipeline"};
  app.allow_extras();
  std::string subcommand;
  std::string config_path;
  bool verbose = false;
  std::string names;
  for (const auto& n : phraseqa::subcommand_names()) names += (names.empty() ? "" : " | ") + n;
  app.add_option("subcommand", subcommand, names)->required();
  app.add_option("--config", config_path, "config file (falls back to $EFFQA_CONFIG)");
  app.add_flag("-v,--verbose", verbose, "log progress to stderr");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);

  phraseqa::PipelineConfig config;
  std::vector<std::pair<std::string, std::string>> overrides;
  try {
    if (config_path.empty())
      if (const char* env = std::getenv("EFFQA_CONFIG"); env != nullptr) config_path = env;
    if (!config_path.empty()) config.load_file(config_path);
    overrides = parse_overrides(app.remaining());
  } catch (const phraseqa::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return phraseqa::run_subcommand(subcommand, config, overrides, std::cout, std::cerr);
}
