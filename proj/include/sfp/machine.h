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

// User-mode machine: fetch, decode and retire one instruction at a time.
// Kernel entries (SVC, timer, HALT) are surfaced to the caller.

#ifndef SFP_MACHINE_H_
#define SFP_MACHINE_H_

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfp/cfi.h"
#include "sfp/loader.h"
#include "sfp/program.h"
#include "sfp/records.h"

namespace sfp {

inline constexpr uint64_t kDataBase = 0x10000;
inline constexpr uint64_t kDataSize = 0x10000;

struct MachineState {
  Pc pc = 0;
  std::array<uint64_t, kNumRegisters> regs{};
  // Data segment at kDataBase. Grows on first touch; unwritten bytes read
  // as zero.
  std::vector<uint8_t> memory;
  uint64_t retired = 0;
  uint64_t since_timer = 0;
  Pc last_retired_pc = 0;
  bool halted = false;

  CfiState state() const { return CfiState{regs[kStateReg]}; }
  bool read64(uint64_t addr, uint64_t& out) const;
  bool write64(uint64_t addr, uint64_t value);
  bool write_bytes(uint64_t addr, std::span<const uint8_t> bytes);
  bool read_bytes(uint64_t addr, uint64_t len, std::string& out) const;
  // Data segment with trailing zero bytes removed.
  std::vector<uint8_t> data_snapshot() const;
};

// Registers zeroed except r0 = argument; x28 starts at the initial state.
MachineState initial_state(const ProcessImage& image, uint64_t argument = 0);

enum class TrapKind {
  kCfiViolationEntry,
  kCfiViolationSyscallEnd,
  kCfiViolationTimer,
  kNoExpectedState,
  kUnknownSyscall,
  kIllegalInstruction,
};

std::string_view trap_name(TrapKind kind);

struct TrapReason {
  TrapKind kind = TrapKind::kIllegalInstruction;
  Pc pc = 0;
  std::string detail;
  std::optional<CfiState> observed;
  std::optional<CfiState> expected;

  bool is_cfi_violation() const {
    return kind == TrapKind::kCfiViolationEntry || kind == TrapKind::kCfiViolationSyscallEnd ||
           kind == TrapKind::kCfiViolationTimer;
  }
  // Detection in the fault-campaign sense.
  bool is_detection() const { return is_cfi_violation() || kind == TrapKind::kNoExpectedState; }
};

// Fault injection point, consulted before every fetch. May change the
// machine (including pc); the returned mask is XORed into the opcode of
// the instruction about to be decoded.
class FaultHook {
 public:
  virtual ~FaultHook() = default;
  virtual uint8_t before_fetch(MachineState& machine, const ProcessImage& image) = 0;
};

struct TraceEntry {
  uint64_t index = 0;
  Pc pc = 0;
  Opcode op = Opcode::kNop;
  Pc next_pc = 0;
  CfiState state;  // after retirement
};
using TraceSink = std::function<void(const TraceEntry&)>;

enum class StepEvent { kRetired, kSyscall, kTimer, kHalt, kTrap };

struct StepResult {
  StepEvent event = StepEvent::kRetired;
  Pc pc = 0;  // pc of the instruction that retired or trapped
  std::optional<TrapReason> trap;
};

struct StepConfig {
  uint64_t timer_period = 0;  // 0 disables the timer
  const TraceSink* trace = nullptr;
};

StepResult step(MachineState& m, const ProcessImage& image, FaultHook* hook, const StepConfig& config);

class Kernel;

struct RunOptions {
  uint64_t budget = 1'000'000;  // retired user instructions
  uint64_t timer_period = 1000;
  uint64_t argument = 0;
  TraceSink trace;
};

enum class RunStatus { kExited, kTrapped, kBudgetExhausted };

std::string_view run_status_name(RunStatus status);

struct RunResult {
  RunStatus status = RunStatus::kExited;
  std::optional<TrapReason> trap;
  uint64_t exit_code = 0;
  uint64_t user_retired = 0;
  uint64_t kernel_instructions = 0;
  MachineState final_state;
  std::vector<SyscallRecord> syscalls;
  std::string output;
  KernelReport kernel;
};

// Runs until exit, trap or budget. `kernel` should be fresh; its
// observations are moved into the result.
RunResult run(const ProcessImage& image, Kernel& kernel, FaultHook* faults, const RunOptions& options);

// Checks that every control transfer in a fault-free trace follows an edge
// of `cfg` (or stays inside a block). Returns one message per violation.
std::vector<std::string> validate_trace(const Program& program, std::span<const TraceEntry> trace);

}  // namespace sfp

#endif  // SFP_MACHINE_H_
