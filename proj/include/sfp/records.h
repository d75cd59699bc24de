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

// Kernel-side observations carried in a RunResult.

#ifndef SFP_RECORDS_H_
#define SFP_RECORDS_H_

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "sfp/program.h"

namespace sfp {

struct SyscallRecord {
  Pc pc = 0;
  uint64_t requested = 0;  // static number recorded for the site
  uint64_t number = 0;     // dispatched (w8 at kernel entry)
  std::array<uint64_t, 3> args{};
  int64_t result = 0;

  friend bool operator==(const SyscallRecord&, const SyscallRecord&) = default;
};

enum class EntryKind { kSyscall, kTimer, kExit };

std::string_view entry_kind_name(EntryKind kind);

// One record per kernel entry. A check that was not performed (checks off,
// or an earlier trap) is empty.
struct KernelEntry {
  EntryKind kind = EntryKind::kSyscall;
  Pc pc = 0;
  std::optional<bool> entry_check;
  std::optional<bool> end_check;
  uint64_t dispatched = 0;
  bool second_stage_applied = false;

  friend bool operator==(const KernelEntry&, const KernelEntry&) = default;
};

struct KernelReport {
  std::vector<KernelEntry> entries;
  uint64_t syscalls = 0;
  uint64_t timer_events = 0;
  uint64_t exit_checks = 0;
  uint64_t checks = 0;
  uint64_t violations = 0;

  friend bool operator==(const KernelReport&, const KernelReport&) = default;
};

}  // namespace sfp

#endif  // SFP_RECORDS_H_
