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

// Fault specifications, their injection at the machine's fetch hook, and
// the classification of faulted runs against a fault-free baseline. The
// JSON schema is in docs/faults_format.md.

#ifndef SFP_FAULT_H_
#define SFP_FAULT_H_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sfp/machine.h"

namespace sfp {

inline constexpr int kFaultFormatVersion = 1;

enum class TriggerKind { kRetired, kPc, kOpcode };

struct Trigger {
  TriggerKind kind = TriggerKind::kRetired;
  uint64_t value = 0;  // retired index or pc
  Opcode opcode = Opcode::kSvc;
  uint32_t occurrence = 1;  // 1-based, for kOpcode
  bool repeating = false;

  friend bool operator==(const Trigger&, const Trigger&) = default;
};

enum class ActionKind {
  kFlipBits,
  kFlipPcBits,
  kSkipInstr,
  kRedirectPc,
  kWriteMem,
  kWriteReg,
  // Decode corruption: XOR into the 4-bit opcode of the fetched
  // instruction. Undefined results raise IllegalInstruction.
  kCorruptOpcode,
};

struct FaultAction {
  ActionKind kind = ActionKind::kSkipInstr;
  uint32_t reg = 0;
  uint64_t mask = 0;   // FlipBits, FlipPcBits, CorruptOpcode
  uint64_t value = 0;  // WriteReg, RedirectPc target
  uint32_t count = 1;  // SkipInstr
  uint64_t addr = 0;   // WriteMem
  std::vector<uint8_t> bytes;

  friend bool operator==(const FaultAction&, const FaultAction&) = default;
};

struct FaultSpec {
  Trigger trigger;
  FaultAction action;

  friend bool operator==(const FaultSpec&, const FaultSpec&) = default;
};

// Convenience constructors.
FaultSpec skip_at_pc(Pc pc, uint32_t count = 1);
FaultSpec flip_reg_at_pc(Pc pc, uint32_t reg, uint64_t mask);
FaultSpec write_reg_at_pc(Pc pc, uint32_t reg, uint64_t value);

std::string describe(const FaultSpec& spec);

// Throws Error(kConfig) for out-of-range registers, addresses or counts.
void validate_fault(const FaultSpec& spec);

// Applies the mutation. Returns an opcode mask for kCorruptOpcode, else 0.
// Throws Error(kConfig) if the mutation cannot be applied.
uint8_t apply_fault(const FaultSpec& spec, MachineState& machine);

nlohmann::json fault_to_json(const FaultSpec& spec);
FaultSpec fault_from_json(const nlohmann::json& j);
// Accepts {"version": 1, "faults": [...]} or a bare array.
std::vector<FaultSpec> parse_fault_file(std::string_view text);
std::string write_fault_file(std::span<const FaultSpec> faults);

// Evaluates every trigger before each fetch; re-evaluates when a fault
// moves the pc.
class FaultInjector : public FaultHook {
 public:
  explicit FaultInjector(std::vector<FaultSpec> faults);

  uint8_t before_fetch(MachineState& machine, const ProcessImage& image) override;
  const std::vector<std::string>& log() const { return log_; }
  uint64_t fired() const { return fired_count_; }
  // More than one fault per run departs from the single-fault model.
  bool multi_fault() const { return faults_.size() > 1; }

 private:
  bool matches(size_t i, const MachineState& m, const ProcessImage& image) const;

  std::vector<FaultSpec> faults_;
  std::vector<bool> fired_;
  std::map<Opcode, uint32_t> seen_;
  uint64_t last_counted_retired_ = ~0ull;
  Pc last_counted_pc_ = 0;
  std::vector<std::string> log_;
  uint64_t fired_count_ = 0;
};

enum class DetectionClass { kDetected, kBenign, kEffectiveUndetected };

std::string_view detection_class_name(DetectionClass c);

struct DetectionOutcome {
  DetectionClass cls = DetectionClass::kBenign;
  std::string evidence;
};

// Detected on any CFI trap (including a missing expected state). Otherwise
// Benign when the syscall log, output, exit status and data segment match
// the baseline. Registers are not compared. Returns nullopt for runs that
// exhausted their budget.
std::optional<DetectionOutcome> classify(const RunResult& run, const RunResult& baseline);

}  // namespace sfp

#endif  // SFP_FAULT_H_
