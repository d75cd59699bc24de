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

// Experiment harness: fault-space sweeps, Monte-Carlo estimates, overhead
// accounting and report output.

#ifndef SFP_CAMPAIGN_H_
#define SFP_CAMPAIGN_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sfp/fault.h"
#include "sfp/kernel.h"
#include "sfp/program.h"

namespace sfp {

// Two-sided 95 % normal quantile.
inline constexpr double kWilsonZ95 = 1.959963984540054;

struct WilsonInterval {
  double lo = 0;
  double hi = 1;
  bool contains(double p) const { return lo <= p && p <= hi; }
};

WilsonInterval wilson_interval(uint64_t successes, uint64_t trials, double z = kWilsonZ95);

enum class FaultClass {
  kSvcSkip,          // skip the SVC
  kSequenceSkip,     // skip PATCH_SLOT, STATE_XOR, MOVI w8 and SVC
  kSyscallRegFlip,   // single-bit flips of w8 at the SVC
  kSyscallRedirect,  // w8 := other syscall at the SVC, fresh key per trial
  kPcRedirect,       // w8 := other syscall, then jump to an SVC
  kPcBitFlip,
  kRegisterFlip,
  kDataCorruption,
  kOpcodeCorruption,
};

std::string_view fault_class_name(FaultClass c);
std::optional<FaultClass> fault_class_from_name(std::string_view name);

struct FaultSpaceEntry {
  FaultClass cls = FaultClass::kSvcSkip;
  uint32_t keys = 10;      // sweeps: load seeds per fault point
  uint64_t samples = 1000;  // random classes: number of trials
};

struct CampaignConfig {
  std::vector<std::string> corpus;  // .sasm paths
  std::vector<FaultSpaceEntry> fault_space;
  uint64_t seed = 1;
  uint64_t timer_period = 1000;
  uint64_t budget = 100000;
  unsigned parallelism = 1;
  std::string output_path;  // JSON; CSV tables are written next to it
  bool overhead = true;
};

// Throws Error(kConfig).
CampaignConfig parse_campaign_config(std::string_view json_text);

struct ClassCounts {
  uint64_t detected = 0;
  uint64_t benign = 0;
  uint64_t effective_undetected = 0;
  uint64_t budget_exhausted = 0;

  uint64_t trials() const { return detected + benign + effective_undetected + budget_exhausted; }
  // Among completed runs whose behaviour the fault changed.
  uint64_t effective() const { return detected + effective_undetected; }
  void add(const std::optional<DetectionOutcome>& outcome);
  ClassCounts& operator+=(const ClassCounts& o);
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

// Retired instructions (user + kernel) per configuration.
struct OverheadRow {
  std::string program;
  uint64_t plain = 0;
  uint64_t cfi_only = 0;
  uint64_t cfi_sfp = 0;
};

struct CampaignReport {
  uint64_t trials = 0;
  ClassCounts totals;
  std::map<std::string, ClassCounts> by_class;
  std::vector<OverheadRow> overhead;
  std::vector<std::string> undetected_examples;  // first few, in trial order
  bool multi_fault = false;
  std::string generated_at;

  double detection_rate() const;
  WilsonInterval detection_interval() const;
};

CampaignReport run_campaign(const CampaignConfig& config);

nlohmann::json report_to_json(const CampaignReport& report, const CampaignConfig& config);
std::string classes_csv(const CampaignReport& report);
std::string overhead_csv(const std::vector<OverheadRow>& rows);

struct LatencyRow {
  std::string configuration;
  uint64_t user_instructions = 0;
  uint64_t kernel_instructions = 0;
  uint64_t syscalls = 0;

  uint64_t total() const { return user_instructions + kernel_instructions; }
  double per_syscall() const { return syscalls ? static_cast<double>(total()) / syscalls : 0.0; }
};

// Rows plain, +verification, +checks, +both. The program takes its
// iteration count in r0.
std::vector<LatencyRow> bench_syscall_latency(const Program& source, uint64_t iterations,
                                              uint64_t timer_period = 1000);
std::string latency_csv(const std::vector<LatencyRow>& rows);

// Plain, CFI-only and CFI+SFP totals for each program, fault-free.
std::vector<OverheadRow> bench_macro(const std::vector<std::pair<std::string, Program>>& programs,
                                     uint64_t timer_period = 1000, uint64_t budget = 1'000'000);

std::string utc_timestamp();

}  // namespace sfp

#endif  // SFP_CAMPAIGN_H_
