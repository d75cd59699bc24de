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

// Simulated kernel: syscall dispatch, second-stage linking and the
// expected-state checks at every kernel entry.

#ifndef SFP_KERNEL_H_
#define SFP_KERNEL_H_

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sfp/loader.h"
#include "sfp/machine.h"
#include "sfp/records.h"

namespace sfp {

inline constexpr int64_t kEnosys = -38;
inline constexpr int64_t kEfault = -14;
inline constexpr uint64_t kGetpidValue = 4242;

namespace syscall_no {
inline constexpr SyscallNo kNoop = 0;
inline constexpr SyscallNo kGetpid = 1;
inline constexpr SyscallNo kWrite = 2;
inline constexpr SyscallNo kExit = 3;
}  // namespace syscall_no

// Kernel instruction counts. A check costs a binary search over the
// RangeMap; linking is mov, the PA computation, eor and the clear.
struct CostModel {
  static constexpr uint64_t kSyscallBase = 40;
  static constexpr uint64_t kTimerBase = 60;
  static constexpr uint64_t kLink = 7;
  static uint64_t check(size_t intervals);
};

struct KernelConfig {
  bool linking = true;  // second-stage patch and residue clear
  bool checks = true;   // expected-state comparisons
};

struct KernelOutcome {
  enum class Action { kResume, kExit, kTrap };
  Action action = Action::kResume;
  std::optional<TrapReason> trap;
  uint64_t exit_code = 0;
};

struct SyscallHandler {
  std::string_view name;
  // Returns the value for r0; sets `exit` for process termination.
  int64_t (*fn)(MachineState& m, std::string& output, bool& exit);
  uint64_t (*cost)(const MachineState& m);
};

class SyscallTable {
 public:
  static const SyscallTable& standard();
  const SyscallHandler* find(uint64_t number) const;
  size_t size() const { return handlers_.size(); }

 private:
  std::array<SyscallHandler, kSyscallCount> handlers_;
};

class Kernel {
 public:
  explicit Kernel(KernelConfig config = {});

  KernelOutcome handle_syscall(const TaskStruct& task, MachineState& m, Pc pc_svc);
  KernelOutcome handle_timer(const TaskStruct& task, MachineState& m, Pc pc);
  // Process exit through HALT.
  KernelOutcome handle_exit(const TaskStruct& task, MachineState& m, Pc pc);

  const KernelConfig& config() const { return config_; }
  const KernelReport& report() const { return report_; }
  const std::string& output() const { return output_; }
  const std::vector<SyscallRecord>& syscall_log() const { return log_; }
  // Moves the accumulated observations out; used at the end of a run.
  KernelReport take_report() { return std::move(report_); }
  std::string take_output() { return std::move(output_); }
  std::vector<SyscallRecord> take_syscall_log() { return std::move(log_); }
  uint64_t instructions() const { return instructions_; }

 private:
  // Returns a trap when the live state differs from `expected`.
  std::optional<TrapReason> check(const TaskStruct& task, const MachineState& m, Pc pc, TrapKind kind,
                                  std::string_view what, std::optional<bool>& result, uint64_t adjust = 0);

  KernelConfig config_;
  KernelReport report_;
  std::string output_;
  std::vector<SyscallRecord> log_;
  uint64_t instructions_ = 0;
};

}  // namespace sfp

#endif  // SFP_KERNEL_H_
