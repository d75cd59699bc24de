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

// The SFP compiler pass: per-block UPDATE, merge-justification slots, and
// the first-stage syscall sequence.

#ifndef SFP_INSTRUMENT_H_
#define SFP_INSTRUMENT_H_

#include <string>
#include <vector>

#include "sfp/metadata.h"
#include "sfp/program.h"

namespace sfp {

struct InstrumentOptions {
  // When false only control-flow protection is emitted (the CFI-only
  // baseline); SVC sites are still recorded.
  bool syscall_linking = true;
};

struct InstrumentedProgram {
  Program program;
  std::vector<PatchSlot> slots;
  // Original flattened pc -> instrumented pc of the same instruction. A
  // syscall-number MOVI moved next to its SVC maps to the moved copy.
  std::vector<Pc> pc_map;
  std::vector<std::string> warnings;
};

struct InstrumentResult {
  InstrumentedProgram instrumented;
  CfMetadata metadata;
};

// Throws Error with kReservedRegister, kDynamicSyscallNumber,
// kUnjustifiableMerge, kUndefinedLabel or kMissingIndirectTargets.
InstrumentResult instrument(const Program& program, const InstrumentOptions& options = {});

struct Diagnostic {
  std::string kind;  // e.g. "SlotMismatch", "SyscallSiteMismatch"
  std::string message;
};

// Cross-checks metadata against the instrumented code. Empty when they
// agree.
std::vector<Diagnostic> validate_metadata(const InstrumentedProgram& instrumented,
                                          const CfMetadata& meta);

}  // namespace sfp

#endif  // SFP_INSTRUMENT_H_
