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

// Process loading: key generation, patch computation, slot filling and the
// per-task expected-state map used by the kernel checks.

#ifndef SFP_LOADER_H_
#define SFP_LOADER_H_

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sfp/cfi.h"
#include "sfp/instrument.h"
#include "sfp/metadata.h"
#include "sfp/program.h"

namespace sfp {

// Half-open pc interval [begin, end) sharing one expected state.
struct StateInterval {
  Pc begin = 0;
  Pc end = 0;
  CfiState state;

  friend bool operator==(const StateInterval&, const StateInterval&) = default;
};

// pc -> expected state, stored as coalesced sorted intervals.
class RangeMap {
 public:
  RangeMap() = default;
  // Entries without a value are left uncovered.
  static RangeMap from_states(std::span<const std::optional<CfiState>> per_pc);

  std::optional<CfiState> find(Pc pc) const;
  const std::vector<StateInterval>& intervals() const { return intervals_; }
  size_t size() const { return intervals_.size(); }
  bool empty() const { return intervals_.empty(); }

  friend bool operator==(const RangeMap&, const RangeMap&) = default;

 private:
  std::vector<StateInterval> intervals_;
};

// Kernel-side per-process data.
struct TaskStruct {
  PaKey key;
  Modifier user_modifier;
  Modifier kernel_modifier = kKernelModifier;
  bool instrumented = false;
  bool syscall_linking = false;
  bool seeded = false;
  RangeMap expected;
  std::vector<SyscallSite> syscall_sites;  // sorted by pc

  const SyscallSite* site_at(Pc pc) const;
  friend bool operator==(const TaskStruct&, const TaskStruct&) = default;
};

// Throws Error(kNoExpectedState) when pc is not covered.
CfiState lookup_expected(const TaskStruct& task, Pc pc);

struct ProcessImage {
  std::vector<Instruction> code;  // slots filled
  std::vector<Pc> target;         // resolved label operand per pc
  Pc entry_pc = 0;
  std::vector<uint8_t> data;
  TaskStruct task;
  uint32_t zero_patch_count = 0;

  friend bool operator==(const ProcessImage&, const ProcessImage&) = default;
};

struct LoadOptions {
  // Deterministic key and modifier for replay. Reports say when used.
  std::optional<uint64_t> seed;
  // Misconfiguration used by regression tests: kernel modifier := user
  // modifier.
  bool equal_modifiers = false;
};

struct ExpectedStates {
  // State just after the instruction at each pc retires. For an SVC this
  // is the state the kernel sees on entry.
  std::vector<std::optional<CfiState>> after;
  std::vector<CfiState> block_entry;
  std::vector<CfiState> block_exit;
  std::vector<uint64_t> slot_values;  // indexed by slot id
};

// Needs only the metadata and the key. Throws Error(kBadMetadata) if the
// canonical-predecessor tree is malformed and Error(kUnknownSyscall) for
// syscall numbers outside the table.
ExpectedStates compute_expected_states(const CfMetadata& meta, const PaKey& key,
                                       Modifier user, Modifier kernel);

// Validates once, then loads any number of processes.
class Loader {
 public:
  Loader(InstrumentedProgram instrumented, CfMetadata meta);
  ProcessImage load(const LoadOptions& options = {}) const;
  const CfMetadata& metadata() const { return meta_; }
  const InstrumentedProgram& instrumented() const { return instrumented_; }

 private:
  InstrumentedProgram instrumented_;
  CfMetadata meta_;
  ProcessImage base_;
};

ProcessImage load(const InstrumentedProgram& instrumented, const CfMetadata& meta,
                  const LoadOptions& options = {});
// An uninstrumented program: no expected states, checks cannot apply.
ProcessImage load_plain(const Program& program);

// Stable digest shown instead of raw state values.
std::string redact_state(CfiState state);
nlohmann::json rangemap_to_json(const RangeMap& map, bool unredacted);

}  // namespace sfp

#endif  // SFP_LOADER_H_
