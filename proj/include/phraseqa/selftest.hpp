// Copyright 2026 The phraseqa Authors
// SPDX-License-Identifier: Apache-2.0

// Quick oracle and property checks runnable from an installed binary.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace phraseqa {

struct SelfTestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<SelfTestResult> run_selftests(std::uint64_t seed);

}  // namespace phraseqa
