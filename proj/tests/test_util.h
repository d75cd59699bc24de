// Copyright 2026 The SFP Simulator Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SFP_TESTS_TEST_UTIL_H_
#define SFP_TESTS_TEST_UTIL_H_

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sfp/fault.h"
#include "sfp/instrument.h"
#include "sfp/kernel.h"
#include "sfp/loader.h"
#include "sfp/machine.h"
#include "sfp/program.h"

namespace sfp::testing {

inline std::string source_path(const std::string& rel) { return std::string(SFP_SOURCE_DIR) + "/" + rel; }

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Program fixture(const std::string& name) {
  return parse_program(read_text(source_path("tests/fixtures/" + name + ".sasm")));
}

// (file name, parsed program) for every corpus program, sorted by name.
inline std::vector<std::pair<std::string, Program>> corpus() {
  std::vector<std::pair<std::string, Program>> out;
  for (const auto& e : std::filesystem::directory_iterator(source_path("corpus")))
    if (e.path().extension() == ".sasm")
      out.emplace_back(e.path().filename().string(), parse_program(read_text(e.path().string())));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

inline std::vector<std::string> corpus_paths() {
  std::vector<std::string> out;
  for (const auto& [name, p] : corpus()) out.push_back(source_path("corpus/" + name));
  return out;
}

inline ProcessImage build_image(const Program& p, uint64_t seed, bool linking = true) {
  const auto r = instrument(p, {.syscall_linking = linking});
  return load(r.instrumented, r.metadata, {.seed = seed});
}

inline RunResult run_image(const ProcessImage& img, uint64_t timer = 1000, std::vector<FaultSpec> faults = {},
                           KernelConfig kc = {}, uint64_t budget = 1'000'000) {
  Kernel k(kc);
  FaultInjector inj(std::move(faults));
  RunOptions o;
  o.timer_period = timer;
  o.budget = budget;
  return run(img, k, &inj, o);
}

}  // namespace sfp::testing

#endif  // SFP_TESTS_TEST_UTIL_H_
