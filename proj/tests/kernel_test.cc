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

#include <gtest/gtest.h>

#include "sfp/fault.h"
#include "test_util.h"

namespace sfp {
namespace {

using testing::build_image;
using testing::fixture;
using testing::run_image;

const char* kFourThenExit =
    "a:\n MOVI r8, 4\n SVC\n NOP\n NOP\n NOP\n NOP\n NOP\n NOP\n MOVI r0, 0\n MOVI r8, 3\n SVC\n HALT\n";

Pc first_site(const ProcessImage& img) { return img.task.syscall_sites.front().pc; }

TEST(Kernel, HonestGetpid) {
  const ProcessImage img = build_image(fixture("straight3"), 1);
  MachineState m = initial_state(img);
  while (step(m, img, nullptr, {}).event != StepEvent::kSyscall) {
  }
  const Pc svc = m.last_retired_pc;
  Kernel k;
  const KernelOutcome out = k.handle_syscall(img.task, m, svc);
  EXPECT_EQ(out.action, KernelOutcome::Action::kResume);
  ASSERT_EQ(k.report().entries.size(), 1u);
  const KernelEntry& e = k.report().entries[0];
  EXPECT_EQ(e.kind, EntryKind::kSyscall);
  EXPECT_EQ(e.entry_check, true);
  EXPECT_EQ(e.end_check, true);
  EXPECT_EQ(e.dispatched, 1u);
  EXPECT_TRUE(e.second_stage_applied);
  EXPECT_EQ(m.regs[0], kGetpidValue);
  EXPECT_EQ(m.state().residue(), 0u);
  // The clear leaves exactly the loader's clean state for the next pc.
  EXPECT_EQ(m.state(), lookup_expected(img.task, svc + 1));
  EXPECT_EQ(k.syscall_log().size(), 1u);
}

TEST(Kernel, EverySyscallEntryHasBothChecks) {
  for (const auto& [name, p] : testing::corpus()) {
    const RunResult r = run_image(build_image(p, 2), 4);
    for (const auto& e : r.kernel.entries) {
      if (e.kind == EntryKind::kSyscall) {
        EXPECT_TRUE(e.entry_check.has_value() && *e.entry_check) << name;
        EXPECT_TRUE(e.end_check.has_value() && *e.end_check) << name;
      } else {
        EXPECT_EQ(e.entry_check, true) << name;
        EXPECT_FALSE(e.end_check.has_value()) << name;
      }
    }
    EXPECT_LE(r.kernel.exit_checks, 1u) << name;
  }
}

TEST(Kernel, HaltRunsExitCheck) {
  const ProcessImage img = build_image(fixture("diamond4"), 1);
  const RunResult r = run_image(img);
  EXPECT_EQ(r.status, RunStatus::kExited);
  ASSERT_EQ(r.kernel.entries.size(), 1u);
  EXPECT_EQ(r.kernel.entries[0].kind, EntryKind::kExit);
  EXPECT_EQ(r.kernel.entries[0].entry_check, true);
  // A corrupted state at HALT is still caught.
  const Pc halt = static_cast<Pc>(img.code.size() - 1);
  const RunResult bad = run_image(img, 1000, {flip_reg_at_pc(halt, kStateReg, 1)});
  ASSERT_TRUE(bad.trap);
  EXPECT_EQ(bad.trap->kind, TrapKind::kCfiViolationEntry);
  EXPECT_EQ(bad.trap->detail, "exit");
}

TEST(Kernel, SyscallRegisterFlipCaughtAtEnd) {
  const Program p = parse_program(kFourThenExit);
  int trials = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const ProcessImage img = build_image(p, seed);
    const auto& t = img.task;
    if (compute_syscall_patch(t.key, 4, kKernelModifier) == compute_syscall_patch(t.key, 5, kKernelModifier)) continue;
    ++trials;
    const RunResult r = run_image(img, 1000, {flip_reg_at_pc(first_site(img), kSyscallReg, 1)});
    ASSERT_TRUE(r.trap);
    EXPECT_EQ(r.trap->kind, TrapKind::kCfiViolationSyscallEnd);
    ASSERT_EQ(r.syscalls.size(), 1u);
    EXPECT_EQ(r.syscalls[0].requested, 4u);
    EXPECT_EQ(r.syscalls[0].number, 5u);
    EXPECT_EQ(r.kernel.entries[0].entry_check, true);
    EXPECT_EQ(r.kernel.entries[0].end_check, false);
    ASSERT_TRUE(r.trap->observed && r.trap->expected);
  }
  EXPECT_GE(trials, 19);
}

TEST(Kernel, SkippedSvcCaughtAtNextEntry) {
  const Program p = parse_program(kFourThenExit);
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const ProcessImage img = build_image(p, seed);
    const RunResult r = run_image(img, 1000, {skip_at_pc(first_site(img))});
    ASSERT_TRUE(r.trap) << seed;
    EXPECT_EQ(r.trap->kind, TrapKind::kCfiViolationEntry);
    EXPECT_EQ(r.trap->pc, img.task.syscall_sites[1].pc);
    EXPECT_TRUE(r.syscalls.empty());
  }
}

// Dropping the first-stage link along with the SVC keeps the residue clean,
// so only the signature half can give it away: it misses both link copies.
TEST(Kernel, WholeSequenceSkipCaughtByTimer) {
  const Program p = parse_program(kFourThenExit);
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const ProcessImage img = build_image(p, seed);
    const Pc start = first_site(img) - 3;
    const RunResult r = run_image(img, 3, {skip_at_pc(start, 4)});
    ASSERT_TRUE(r.trap) << seed;
    EXPECT_EQ(r.trap->kind, TrapKind::kCfiViolationTimer);
    EXPECT_TRUE(r.syscalls.empty());
  }
}

// Regression guard: with the kernel modifier equal to the user one the two
// link values cancel, and the same attack goes unnoticed.
TEST(Kernel, EqualModifiersLetWholeSequenceSkipThrough) {
  const Program p = parse_program(kFourThenExit);
  const auto r = instrument(p);
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const ProcessImage good = load(r.instrumented, r.metadata, {.seed = seed});
    const ProcessImage bad = load(r.instrumented, r.metadata, {.seed = seed, .equal_modifiers = true});
    const Pc start = first_site(good) - 3;
    EXPECT_TRUE(run_image(good, 3, {skip_at_pc(start, 4)}).trap) << seed;
    const RunResult res = run_image(bad, 3, {skip_at_pc(start, 4)});
    EXPECT_FALSE(res.trap) << seed;
    EXPECT_EQ(res.status, RunStatus::kExited);
    ASSERT_EQ(res.syscalls.size(), 1u);  // only exit ran
  }
}

TEST(Kernel, TimerInsideLinkWindowPasses) {
  // straight3: pc 5 is the STATE_XOR, 6 the MOVI r8, 7 the SVC.
  const ProcessImage img = build_image(fixture("straight3"), 3);
  for (uint64_t period : {6, 7}) {
    const RunResult r = run_image(img, period);
    EXPECT_EQ(r.status, RunStatus::kExited);
    EXPECT_FALSE(r.trap);
    bool in_window = false;
    for (const auto& e : r.kernel.entries)
      if (e.kind == EntryKind::kTimer && (e.pc == 5 || e.pc == 6)) in_window = *e.entry_check;
    EXPECT_TRUE(in_window) << period;
    EXPECT_NE(lookup_expected(img.task, 5).residue(), 0u);
  }
  // Due on the SVC: taken after the next instruction instead.
  const RunResult r = run_image(img, 8);
  ASSERT_FALSE(r.kernel.entries.empty());
  EXPECT_EQ(r.kernel.entries[0].kind, EntryKind::kSyscall);
  EXPECT_EQ(r.kernel.entries[1].kind, EntryKind::kTimer);
  EXPECT_EQ(r.kernel.entries[1].pc, 8u);
}

TEST(Kernel, EndCheckSoundnessSmall) {
  const Program p = fixture("all_syscalls");
  for (uint64_t seed = 0; seed < 3; ++seed) {
    const ProcessImage img = build_image(p, seed);
    const auto& t = img.task;
    for (const auto& site : t.syscall_sites) {
      for (SyscallNo m = 0; m < kSyscallCount; ++m) {
        if (m == site.number) continue;
        const RunResult r = run_image(img, 1000, {write_reg_at_pc(site.pc, kSyscallReg, m)});
        const bool collide =
            compute_syscall_patch(t.key, m, kKernelModifier) == compute_syscall_patch(t.key, site.number, kKernelModifier);
        if (collide) continue;
        ASSERT_TRUE(r.trap) << site.number << "->" << m;
        EXPECT_EQ(r.trap->kind, TrapKind::kCfiViolationSyscallEnd);
        EXPECT_EQ(r.trap->pc, site.pc);
      }
    }
  }
}

TEST(Kernel, UnknownNumber) {
  // Linking on: no handler, no second stage, the end check fails.
  const ProcessImage img = build_image(fixture("straight3"), 1);
  const RunResult r = run_image(img, 1000, {write_reg_at_pc(7, kSyscallReg, 99)});
  ASSERT_TRUE(r.trap);
  EXPECT_EQ(r.trap->kind, TrapKind::kCfiViolationSyscallEnd);
  EXPECT_FALSE(r.kernel.entries[0].second_stage_applied);
  EXPECT_EQ(r.syscalls[0].result, kEnosys);
  // Linking off: reported as an unknown syscall.
  const RunResult plain = run_image(load_plain(parse_program("a:\n MOVI r8, 99\n SVC\n HALT\n")), 1000, {}, {false, false});
  ASSERT_TRUE(plain.trap);
  EXPECT_EQ(plain.trap->kind, TrapKind::kUnknownSyscall);
  EXPECT_FALSE(plain.trap->is_detection());
}

TEST(Kernel, WriteAndExit) {
  const Program p = parse_program(
      "a:\n MOVI r0, 0x10000\n MOVI r1, 5\n MOVI r8, 2\n SVC\n MOVI r0, 7\n MOVI r8, 3\n SVC\n HALT\n"
      ".data 68 65 6c 6c 6f\n");
  const RunResult r = run_image(build_image(p, 1));
  EXPECT_EQ(r.status, RunStatus::kExited);
  EXPECT_EQ(r.output, "hello");
  EXPECT_EQ(r.exit_code, 7u);
  EXPECT_EQ(r.syscalls[0].result, 5);
  const RunResult bad = run_image(build_image(parse_program(
      "a:\n MOVI r0, 0\n MOVI r1, 5\n MOVI r8, 2\n SVC\n HALT\n"), 1));
  EXPECT_EQ(bad.syscalls[0].result, kEfault);
}

TEST(Kernel, TableIsDense) {
  const auto& t = SyscallTable::standard();
  EXPECT_GE(t.size(), 16u);
  for (uint64_t n = 0; n < t.size(); ++n) EXPECT_NE(t.find(n), nullptr);
  EXPECT_EQ(t.find(t.size()), nullptr);
  EXPECT_EQ(t.find(syscall_no::kGetpid)->name, "getpid");
}

TEST(Kernel, ChecksOffNeverTrap) {
  const Program p = parse_program(kFourThenExit);
  const ProcessImage img = build_image(p, 1);
  const RunResult r = run_image(img, 3, {skip_at_pc(first_site(img))}, {true, false});
  EXPECT_FALSE(r.trap);
  EXPECT_EQ(r.kernel.checks, 0u);
}

TEST(Kernel, CostModel) {
  EXPECT_EQ(CostModel::check(1), 10u);
  EXPECT_EQ(CostModel::check(5), 18u);
  // One getpid with both features: base, handler, link, two checks.
  const ProcessImage img = build_image(fixture("straight3"), 1);
  MachineState m = initial_state(img);
  while (step(m, img, nullptr, {}).event != StepEvent::kSyscall) {
  }
  Kernel k;
  k.handle_syscall(img.task, m, m.last_retired_pc);
  EXPECT_EQ(k.instructions(), CostModel::kSyscallBase + 3 + CostModel::kLink + 2 * CostModel::check(5));
}

}  // namespace
}  // namespace sfp
