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

#include "sfp/machine.h"

#include <algorithm>

#include "sfp/cfg.h"
#include "sfp/error.h"
#include "sfp/kernel.h"

namespace sfp {

namespace {

bool in_data(uint64_t addr, uint64_t len) {
  return addr >= kDataBase && len <= kDataSize && addr - kDataBase <= kDataSize - len;
}

StepResult trap(Pc pc, std::string detail) {
  return {StepEvent::kTrap, pc, TrapReason{TrapKind::kIllegalInstruction, pc, std::move(detail), {}, {}}};
}

uint64_t alu(AluOp op, uint64_t a, uint64_t b) {
  switch (op) {
    case AluOp::kXor:
      return a ^ b;
    case AluOp::kAdd:
      return a + b;
    case AluOp::kAnd:
      return a & b;
  }
  return 0;
}

}  // namespace

bool MachineState::read64(uint64_t addr, uint64_t& out) const {
  if (!in_data(addr, 8)) return false;
  const uint64_t off = addr - kDataBase;
  out = 0;
  for (uint64_t i = 0; i < 8; ++i)
    if (off + i < memory.size()) out |= static_cast<uint64_t>(memory[off + i]) << (8 * i);
  return true;
}

bool MachineState::write_bytes(uint64_t addr, std::span<const uint8_t> bytes) {
  if (!in_data(addr, bytes.size())) return false;
  const uint64_t off = addr - kDataBase;
  if (memory.size() < off + bytes.size()) memory.resize(off + bytes.size(), 0);
  std::copy(bytes.begin(), bytes.end(), memory.begin() + static_cast<std::ptrdiff_t>(off));
  return true;
}

bool MachineState::write64(uint64_t addr, uint64_t value) {
  uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(value >> (8 * i));
  return write_bytes(addr, b);
}

bool MachineState::read_bytes(uint64_t addr, uint64_t len, std::string& out) const {
  if (!in_data(addr, len)) return false;
  const uint64_t off = addr - kDataBase;
  out.clear();
  for (uint64_t i = 0; i < len; ++i)
    out.push_back(off + i < memory.size() ? static_cast<char>(memory[off + i]) : '\0');
  return true;
}

std::vector<uint8_t> MachineState::data_snapshot() const {
  std::vector<uint8_t> out = memory;
  while (!out.empty() && out.back() == 0) out.pop_back();
  return out;
}

MachineState initial_state(const ProcessImage& image, uint64_t argument) {
  MachineState m;
  m.pc = image.entry_pc;
  m.memory = image.data;
  m.regs[0] = argument;
  return m;
}

std::string_view trap_name(TrapKind kind) {
  switch (kind) {
    case TrapKind::kCfiViolationEntry:
      return "CfiViolationEntry";
    case TrapKind::kCfiViolationSyscallEnd:
      return "CfiViolationSyscallEnd";
    case TrapKind::kCfiViolationTimer:
      return "CfiViolationTimer";
    case TrapKind::kNoExpectedState:
      return "NoExpectedState";
    case TrapKind::kUnknownSyscall:
      return "UnknownSyscall";
    case TrapKind::kIllegalInstruction:
      return "IllegalInstruction";
  }
  return "?";
}

std::string_view run_status_name(RunStatus status) {
  switch (status) {
    case RunStatus::kExited:
      return "exited";
    case RunStatus::kTrapped:
      return "trapped";
    case RunStatus::kBudgetExhausted:
      return "budget-exhausted";
  }
  return "?";
}

StepResult step(MachineState& m, const ProcessImage& image, FaultHook* hook, const StepConfig& config) {
  const uint8_t opcode_mask = hook ? hook->before_fetch(m, image) : 0;
  const Pc pc = m.pc;
  if (pc >= image.code.size()) return trap(pc, "pc outside the code segment");

  const Instruction& insn = image.code[pc];
  const uint8_t raw = static_cast<uint8_t>((static_cast<uint8_t>(insn.op) ^ opcode_mask) & 0xF);
  if (raw >= kOpcodeCount) return trap(pc, "undefined opcode " + std::to_string(raw));
  const Opcode op = static_cast<Opcode>(raw);
  auto& r = m.regs;
  const Pc target = image.target[pc];
  Pc next = pc + 1;
  StepEvent event = StepEvent::kRetired;

  switch (op) {
    case Opcode::kMovi:
      r[insn.rd] = insn.label.empty() ? insn.imm : target;
      break;
    case Opcode::kAlu:
      r[insn.rd] = alu(insn.alu, r[insn.rs1], r[insn.rs2]);
      break;
    case Opcode::kLoad: {
      uint64_t v;
      if (!m.read64(r[insn.rs1] + insn.imm, v)) return trap(pc, "load from unmapped address");
      r[insn.rd] = v;
      break;
    }
    case Opcode::kStore:
      // The code segment is not writable.
      if (!m.write64(r[insn.rs1] + insn.imm, r[insn.rs2])) return trap(pc, "store to unmapped or code address");
      break;
    case Opcode::kBr:
      next = target;
      break;
    case Opcode::kBrCond:
      if (r[insn.rs1] != 0) next = target;
      break;
    case Opcode::kBrInd:
      next = static_cast<Pc>(r[insn.rs1]);
      if (r[insn.rs1] >= image.code.size()) return trap(pc, "indirect branch outside the code segment");
      break;
    case Opcode::kCall:
      r[kLinkReg] = pc + 1;
      next = target;
      break;
    case Opcode::kRet:
      if (r[kLinkReg] >= image.code.size()) return trap(pc, "return outside the code segment");
      next = static_cast<Pc>(r[kLinkReg]);
      break;
    case Opcode::kSvc:
      event = StepEvent::kSyscall;
      break;
    case Opcode::kPatchSlot:
      r[kPatchReg] = insn.imm;
      break;
    case Opcode::kStateXor:
      r[kStateReg] ^= r[kPatchReg];
      break;
    case Opcode::kUpdate:
      r[kStateReg] = block_update(CfiState{r[kStateReg]}, insn.imm, image.task.key).value;
      break;
    case Opcode::kNop:
      break;
    case Opcode::kHalt:
      event = StepEvent::kHalt;
      m.halted = true;
      break;
  }

  m.pc = next;
  ++m.retired;
  ++m.since_timer;
  m.last_retired_pc = pc;
  if (config.trace && *config.trace) (*config.trace)({m.retired - 1, pc, op, next, m.state()});
  // A timer that falls due on an SVC is taken after the next instruction.
  if (event == StepEvent::kRetired && config.timer_period && m.since_timer >= config.timer_period) {
    m.since_timer = 0;
    event = StepEvent::kTimer;
  }
  return {event, pc, std::nullopt};
}

RunResult run(const ProcessImage& image, Kernel& kernel, FaultHook* faults, const RunOptions& options) {
  RunResult result;
  MachineState m = initial_state(image, options.argument);
  StepConfig config{options.timer_period, options.trace ? &options.trace : nullptr};
  const uint64_t kernel_before = kernel.instructions();
  auto finish = [&](RunStatus status) {
    result.status = status;
    result.user_retired = m.retired;
    result.kernel_instructions = kernel.instructions() - kernel_before;
    result.final_state = std::move(m);
    result.syscalls = kernel.take_syscall_log();
    result.output = kernel.take_output();
    result.kernel = kernel.take_report();
    return result;
  };
  auto handle = [&](const KernelOutcome& k) -> std::optional<RunStatus> {
    if (k.action == KernelOutcome::Action::kTrap) {
      result.trap = k.trap;
      return RunStatus::kTrapped;
    }
    if (k.action == KernelOutcome::Action::kExit) {
      result.exit_code = k.exit_code;
      return RunStatus::kExited;
    }
    return std::nullopt;
  };

  // Skips do not retire, so bound the raw step count as well.
  for (uint64_t steps = 0; m.retired < options.budget && steps < 4 * options.budget + 64; ++steps) {
    StepResult s = step(m, image, faults, config);
    std::optional<RunStatus> done;
    switch (s.event) {
      case StepEvent::kRetired:
        break;
      case StepEvent::kTrap:
        result.trap = s.trap;
        return finish(RunStatus::kTrapped);
      case StepEvent::kSyscall:
        done = handle(kernel.handle_syscall(image.task, m, s.pc));
        break;
      case StepEvent::kTimer:
        done = handle(kernel.handle_timer(image.task, m, s.pc));
        break;
      case StepEvent::kHalt:
        done = handle(kernel.handle_exit(image.task, m, s.pc));
        if (!done) done = RunStatus::kExited;
        break;
    }
    if (done) return finish(*done);
  }
  return finish(RunStatus::kBudgetExhausted);
}

std::vector<std::string> validate_trace(const Program& program, std::span<const TraceEntry> trace) {
  const Cfg cfg = build_cfg(program);
  std::vector<uint32_t> block_of;
  for (uint32_t b = 0; b < program.blocks.size(); ++b)
    block_of.insert(block_of.end(), program.blocks[b].instructions.size(), b);
  std::vector<std::string> out;
  for (const auto& t : trace) {
    if (t.op == Opcode::kHalt) continue;
    if (t.pc >= block_of.size() || t.next_pc >= block_of.size()) {
      out.push_back("pc out of range at step " + std::to_string(t.index));
      continue;
    }
    const uint32_t from = block_of[t.pc], to = block_of[t.next_pc];
    if (t.next_pc == t.pc + 1 && from == to) continue;
    if (t.next_pc != program.block_start(to) || !cfg.has_edge(from, to))
      out.push_back("transfer " + program.blocks[from].label + " -> " + program.blocks[to].label + " at step " +
                    std::to_string(t.index) + " is not a CFG edge");
  }
  return out;
}

}  // namespace sfp
