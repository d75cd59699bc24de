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

#include "sfp/kernel.h"

#include <bit>

namespace sfp {

namespace {

int64_t sys_noop(MachineState&, std::string&, bool&) { return 0; }
int64_t sys_getpid(MachineState&, std::string&, bool&) { return static_cast<int64_t>(kGetpidValue); }

int64_t sys_write(MachineState& m, std::string& output, bool&) {
  std::string bytes;
  if (!m.read_bytes(m.regs[0], m.regs[1], bytes)) return kEfault;
  output += bytes;
  return static_cast<int64_t>(bytes.size());
}

int64_t sys_exit(MachineState&, std::string&, bool& exit) {
  exit = true;
  return 0;
}

uint64_t cost1(const MachineState&) { return 1; }
uint64_t cost3(const MachineState&) { return 3; }
uint64_t cost8(const MachineState&) { return 8; }
uint64_t cost_write(const MachineState& m) { return 6 + std::min<uint64_t>(m.regs[1], kDataSize); }

}  // namespace

std::string_view entry_kind_name(EntryKind kind) {
  switch (kind) {
    case EntryKind::kSyscall:
      return "syscall";
    case EntryKind::kTimer:
      return "timer";
    case EntryKind::kExit:
      return "exit";
  }
  return "?";
}

uint64_t CostModel::check(size_t intervals) { return 6 + 4 * std::bit_width(intervals); }

const SyscallTable& SyscallTable::standard() {
  static const SyscallTable table = [] {
    SyscallTable t;
    t.handlers_.fill({"reserved", sys_noop, cost1});
    t.handlers_[syscall_no::kNoop] = {"noop", sys_noop, cost1};
    t.handlers_[syscall_no::kGetpid] = {"getpid", sys_getpid, cost3};
    t.handlers_[syscall_no::kWrite] = {"write", sys_write, cost_write};
    t.handlers_[syscall_no::kExit] = {"exit", sys_exit, cost8};
    return t;
  }();
  return table;
}

const SyscallHandler* SyscallTable::find(uint64_t number) const {
  return number < handlers_.size() ? &handlers_[number] : nullptr;
}

Kernel::Kernel(KernelConfig config) : config_(config) {}

std::optional<TrapReason> Kernel::check(const TaskStruct& task, const MachineState& m, Pc pc, TrapKind kind,
                                        std::string_view what, std::optional<bool>& result,
                                        uint64_t adjust) {
  ++report_.checks;
  result = false;
  instructions_ += CostModel::check(task.expected.size());
  auto expected = task.expected.find(pc);
  if (!expected) {
    ++report_.violations;
    return TrapReason{TrapKind::kNoExpectedState, pc, std::string(what), m.state(), std::nullopt};
  }
  CfiState want = apply_patch(*expected, adjust);
  if (m.state() == want) {
    result = true;
    return std::nullopt;
  }
  ++report_.violations;
  return TrapReason{kind, pc, std::string(what), m.state(), want};
}

KernelOutcome Kernel::handle_syscall(const TaskStruct& task, MachineState& m, Pc pc_svc) {
  ++report_.syscalls;
  instructions_ += CostModel::kSyscallBase;
  KernelEntry& entry = report_.entries.emplace_back();
  entry.pc = pc_svc;
  entry.dispatched = m.regs[kSyscallReg];
  const bool checks = config_.checks && task.instrumented;
  const bool linking = config_.linking && task.syscall_linking;
  auto trap = [](TrapReason r) { return KernelOutcome{KernelOutcome::Action::kTrap, std::move(r), 0}; };

  if (checks)
    if (auto t = check(task, m, pc_svc, TrapKind::kCfiViolationEntry, "syscall entry", entry.entry_check))
      return trap(*t);

  const uint64_t number = m.regs[kSyscallReg];
  const SyscallSite* site = task.site_at(pc_svc);
  SyscallRecord rec{pc_svc, site ? site->number : number, number, {m.regs[0], m.regs[1], m.regs[2]}, kEnosys};
  bool exit = false;
  const SyscallHandler* handler = SyscallTable::standard().find(number);
  if (handler) {
    instructions_ += handler->cost(m);
    rec.result = handler->fn(m, output_, exit);
    if (linking) {
      instructions_ += CostModel::kLink;
      entry.second_stage_applied = true;
      m.regs[kStateReg] ^= compute_syscall_patch(task.key, static_cast<SyscallNo>(number), task.kernel_modifier)
                               .link_value();
    }
  } else if (!linking) {
    return trap({TrapKind::kUnknownSyscall, pc_svc, "syscall " + std::to_string(number), std::nullopt,
                 std::nullopt});
  }
  // With linking on, an unknown number gets no second-stage patch and is
  // caught by the end check below.
  m.regs[0] = static_cast<uint64_t>(rec.result);
  log_.push_back(rec);

  if (checks && linking) {
    if (!site) {
      ++report_.violations;
      return trap({TrapKind::kNoExpectedState, pc_svc, "SVC outside any syscall site", m.state(), std::nullopt});
    }
    const uint64_t k = compute_syscall_patch(task.key, site->number, task.kernel_modifier).link_value();
    if (auto t = check(task, m, pc_svc, TrapKind::kCfiViolationSyscallEnd, "syscall end", entry.end_check, k))
      return trap(*t);
  }
  if (linking) m.regs[kStateReg] = clear_syscall_residue(m.state()).value;

  if (exit) return {KernelOutcome::Action::kExit, std::nullopt, rec.args[0]};
  return {};
}

KernelOutcome Kernel::handle_timer(const TaskStruct& task, MachineState& m, Pc pc) {
  ++report_.timer_events;
  instructions_ += CostModel::kTimerBase;
  KernelEntry& entry = report_.entries.emplace_back();
  entry.kind = EntryKind::kTimer;
  entry.pc = pc;
  if (config_.checks && task.instrumented)
    if (auto t = check(task, m, pc, TrapKind::kCfiViolationTimer, "timer", entry.entry_check))
      return {KernelOutcome::Action::kTrap, std::move(t), 0};
  return {};
}

KernelOutcome Kernel::handle_exit(const TaskStruct& task, MachineState& m, Pc pc) {
  ++report_.exit_checks;
  KernelEntry& entry = report_.entries.emplace_back();
  entry.kind = EntryKind::kExit;
  entry.pc = pc;
  if (config_.checks && task.instrumented)
    if (auto t = check(task, m, pc, TrapKind::kCfiViolationEntry, "exit", entry.entry_check))
      return {KernelOutcome::Action::kTrap, std::move(t), 0};
  return {KernelOutcome::Action::kExit, std::nullopt, m.regs[0]};
}

}  // namespace sfp
