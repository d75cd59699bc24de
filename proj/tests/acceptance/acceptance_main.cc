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

// Acceptance suite: one PASS/FAIL line per criterion on stdout, details on
// stderr. Exit status is the number of failed criteria.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "../test_util.h"
#include "sfp/campaign.h"
#include "sfp/cfi.h"
#include "sfp/fault.h"
#include "sfp/instrument.h"
#include "sfp/kernel.h"
#include "sfp/loader.h"
#include "sfp/machine.h"

namespace sfp {
namespace {

constexpr double kPacRate = 1.0 / 32768.0;

struct Subject {
  std::string name;
  Program program;
  InstrumentResult linked;
};

std::vector<Subject> load_corpus() {
  std::vector<Subject> out;
  for (auto& [name, p] : testing::corpus()) out.push_back({name, p, instrument(p)});
  return out;
}

RunResult run_with(const ProcessImage& img, std::vector<FaultSpec> faults, uint64_t timer = 1000,
                   KernelConfig kc = {}) {
  Kernel k(kc);
  FaultInjector inj(std::move(faults));
  RunOptions o;
  o.timer_period = timer;
  o.budget = 200000;
  return run(img, k, &inj, o);
}

bool detected(const RunResult& r) { return r.trap && r.trap->is_detection(); }

// Kernel link value for a dispatched number; unknown numbers get none.
uint64_t klink(const TaskStruct& t, uint64_t n) {
  return n < kSyscallCount ? compute_syscall_patch(t.key, static_cast<SyscallNo>(n), t.kernel_modifier).link_value()
                           : 0;
}

// Sites the fault-free run actually executes; pc-triggered faults at the
// others never fire.
std::vector<SyscallSite> reached_sites(const ProcessImage& img) {
  const RunResult base = run_with(img, {});
  std::vector<SyscallSite> out;
  for (const auto& site : img.task.syscall_sites)
    if (std::any_of(base.syscalls.begin(), base.syscalls.end(), [&](const auto& s) { return s.pc == site.pc; }))
      out.push_back(site);
  return out;
}

struct Verdict {
  bool pass = false;
  std::string summary;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// R1: every single-bit flip of w8 at each SVC (after the first-stage link),
// every corpus site, 100 keys.
Verdict r1_syscall_number_integrity(const std::vector<Subject>& corpus) {
  uint64_t trials = 0, undetected = 0, unexplained = 0;
  for (const auto& s : corpus) {
    const Loader loader(s.linked.instrumented, s.linked.metadata);
    for (uint64_t key = 0; key < 100; ++key) {
      const ProcessImage img = loader.load({.seed = 1000 + key});
      for (const auto& site : reached_sites(img)) {
        for (int bit = 0; bit < 64; ++bit) {
          const uint64_t m = site.number ^ (1ull << bit);
          const RunResult r = run_with(img, {flip_reg_at_pc(site.pc, kSyscallReg, 1ull << bit)});
          ++trials;
          const bool oracle_miss = klink(img.task, m) == klink(img.task, site.number);
          if (!detected(r)) {
            ++undetected;
            unexplained += !oracle_miss;
          } else {
            unexplained += oracle_miss;
          }
        }
      }
    }
  }
  const auto ci = wilson_interval(undetected, trials);
  std::cerr << fmt("R1: %llu trials, %llu undetected, rate CI [%.3g, %.3g], %llu disagree with the PRF oracle\n",
                   (unsigned long long)trials, (unsigned long long)undetected, ci.lo, ci.hi,
                   (unsigned long long)unexplained);
  return {ci.lo <= kPacRate && unexplained == 0,
          fmt("%llu single-bit w8 flips, %llu undetected (all PAC collisions), Wilson lower bound %.2g <= 2^-15",
              (unsigned long long)trials, (unsigned long long)undetected, ci.lo)};
}

// Caught at the first kernel entry after the fault: everything before the
// trapping entry is what the fault-free run saw, and nothing from after the
// skipped site got through.
bool caught_at_next_entry(const RunResult& r, const RunResult& base, Pc site) {
  const auto& got = r.kernel.entries;
  const auto& want = base.kernel.entries;
  if (got.empty() || got.size() > want.size()) return false;
  for (size_t i = 0; i + 1 < got.size(); ++i) {
    if (!(got[i] == want[i])) return false;
    if (want[i].kind == EntryKind::kSyscall && want[i].pc == site) return false;
  }
  const auto& last = got.back();
  return last.entry_check == false || last.end_check == false;
}

// R2: (a) skip only the SVC, caught at the very next kernel entry;
// (b) skip PATCH_SLOT, STATE_XOR, MOVI w8 and SVC, caught at the next
// timer, syscall or exit check.
Verdict r2_no_skipping(const std::vector<Subject>& corpus, bool whole_sequence) {
  uint64_t trials = 0, caught = 0, late = 0;
  for (const auto& s : corpus) {
    const Loader loader(s.linked.instrumented, s.linked.metadata);
    for (uint64_t key = 0; key < 100; ++key) {
      const ProcessImage img = loader.load({.seed = 2000 + key});
      const auto sites = reached_sites(img);
      for (uint64_t timer : {uint64_t{10}, uint64_t{1000}}) {
        const RunResult base = run_with(img, {}, timer);
        for (const auto& site : sites) {
          const FaultSpec f = whole_sequence ? skip_at_pc(site.pc - 3, 4) : skip_at_pc(site.pc);
          const RunResult r = run_with(img, {f}, timer);
          ++trials;
          if (!detected(r)) continue;
          ++caught;
          late += !caught_at_next_entry(r, base, site.pc);
        }
      }
    }
  }
  const char* what = whole_sequence ? "link+SVC sequence skips" : "SVC-only skips";
  std::cerr << fmt("R2%s: %llu %s, %llu detected, %llu not at the next kernel entry\n", whole_sequence ? "b" : "a",
                   (unsigned long long)trials, what, (unsigned long long)caught, (unsigned long long)late);
  return {caught == trials && late == 0,
          fmt("%llu/%llu %s detected at the next kernel entry", (unsigned long long)caught,
              (unsigned long long)trials, what)};
}

// R3: exhaustive (static n, dispatched m != n) over the table for 100 keys,
// then Monte-Carlo redirections with a fresh key per trial.
Verdict r3_correct_dispatch(uint64_t mc_trials) {
  const Program p = testing::fixture("all_syscalls");
  const auto linked = instrument(p);
  const Loader loader(linked.instrumented, linked.metadata);

  uint64_t ex_trials = 0, ex_missed = 0, ex_wrong = 0;
  for (uint64_t key = 0; key < 100; ++key) {
    const ProcessImage img = loader.load({.seed = 3000 + key});
    for (const auto& site : img.task.syscall_sites) {
      for (SyscallNo m = 0; m < kSyscallCount; ++m) {
        if (m == site.number) continue;
        const RunResult r = run_with(img, {write_reg_at_pc(site.pc, kSyscallReg, m)});
        ++ex_trials;
        const bool collide = klink(img.task, m) == klink(img.task, site.number);
        const bool end_failed = r.trap && r.trap->kind == TrapKind::kCfiViolationSyscallEnd && r.trap->pc == site.pc;
        ex_missed += !end_failed;
        ex_wrong += end_failed == collide;
      }
    }
  }

  std::mt19937_64 rng(0x5f9);
  uint64_t mc_missed = 0, mc_wrong = 0;
  const auto sites = loader.load({.seed = 0}).task.syscall_sites;
  for (uint64_t i = 0; i < mc_trials; ++i) {
    const ProcessImage img = loader.load({.seed = rng()});
    const auto& site = sites[rng() % sites.size()];
    SyscallNo m = static_cast<SyscallNo>(rng() % (kSyscallCount - 1));
    if (m >= site.number) ++m;
    const RunResult r = run_with(img, {write_reg_at_pc(site.pc, kSyscallReg, m)});
    const bool collide = klink(img.task, m) == klink(img.task, site.number);
    const bool caught = detected(r);
    mc_missed += !caught;
    mc_wrong += caught == collide;
  }
  const auto ci = wilson_interval(mc_missed, mc_trials);
  std::cerr << fmt(
      "R3: exhaustive %llu pairs, %llu end checks passed, %llu disagree with oracle; Monte-Carlo %llu trials, "
      "%llu undetected (rate %.3g, CI [%.3g, %.3g], 2^-15 = %.3g), %llu disagree with oracle\n",
      (unsigned long long)ex_trials, (unsigned long long)ex_missed, (unsigned long long)ex_wrong,
      (unsigned long long)mc_trials, (unsigned long long)mc_missed, double(mc_missed) / mc_trials, ci.lo, ci.hi,
      kPacRate, (unsigned long long)mc_wrong);
  return {ex_wrong == 0 && mc_wrong == 0 && ci.contains(kPacRate) && mc_trials >= 1000000,
          fmt("%llu exhaustive pairs match the oracle; %llu/%llu redirects undetected, Wilson [%.3g, %.3g] "
              "contains 2^-15",
              (unsigned long long)ex_trials, (unsigned long long)mc_missed, (unsigned long long)mc_trials, ci.lo,
              ci.hi)};
}

// R4: fresh keys and fresh syscall patches on every unseeded load.
Verdict r4_dynamic_instrumentation() {
  const Program p = testing::fixture("all_syscalls");
  const auto linked = instrument(p);
  const Loader loader(linked.instrumented, linked.metadata);
  std::vector<ProcessImage> imgs;
  std::set<std::pair<uint64_t, uint64_t>> keys;
  for (int i = 0; i < 100; ++i) {
    imgs.push_back(loader.load());
    keys.insert({imgs.back().task.key.lo, imgs.back().task.key.hi});
  }
  uint64_t pairs = 0, repeats = 0;
  for (const auto& slot : linked.metadata.slots) {
    if (slot.kind != SlotKind::kSyscall) continue;
    for (size_t a = 0; a < imgs.size(); ++a)
      for (size_t b = a + 1; b < imgs.size(); ++b) {
        ++pairs;
        repeats += imgs[a].code[slot.pc].imm == imgs[b].code[slot.pc].imm;
      }
  }
  const auto ci = wilson_interval(repeats, pairs);
  const bool unseeded = std::none_of(imgs.begin(), imgs.end(), [](const auto& i) { return i.task.seeded; });
  std::cerr << fmt("R4: %zu distinct keys of 100; %llu slot pairs, %llu repeats, CI [%.3g, %.3g]\n", keys.size(),
                   (unsigned long long)pairs, (unsigned long long)repeats, ci.lo, ci.hi);
  return {keys.size() == 100 && unseeded && ci.contains(kPacRate),
          fmt("100 unseeded loads, 100 distinct keys; %llu/%llu per-slot repeats, Wilson [%.3g, %.3g] contains 2^-15",
              (unsigned long long)repeats, (unsigned long long)pairs, ci.lo, ci.hi)};
}

// Criterion 5: no false positives, including timers placed inside the
// window between the first-stage link and the SVC.
Verdict c5_no_false_positives(const std::vector<Subject>& corpus) {
  uint64_t runs = 0, traps = 0, window_checks = 0;
  for (const auto& s : corpus) {
    const Loader loader(s.linked.instrumented, s.linked.metadata);
    std::vector<uint64_t> periods = {3, 10, 1000};
    // Periods that make the first timer fire right after the STATE_XOR or
    // the MOVI w8 of some site.
    {
      const ProcessImage img = loader.load({.seed = 5});
      std::vector<Pc> trace;
      Kernel k;
      RunOptions o;
      o.timer_period = 0;
      o.trace = [&](const TraceEntry& t) { trace.push_back(t.pc); };
      run(img, k, nullptr, o);
      for (const auto& site : img.task.syscall_sites)
        for (Pc target : {site.pc - 2, site.pc - 1}) {
          auto it = std::find(trace.begin(), trace.end(), target);
          if (it != trace.end()) periods.push_back(static_cast<uint64_t>(it - trace.begin()) + 1);
        }
    }
    for (uint64_t key = 0; key < 10; ++key) {
      const ProcessImage img = loader.load({.seed = 5000 + key});
      for (uint64_t T : periods) {
        const RunResult r = run_with(img, {}, T);
        ++runs;
        traps += r.trap.has_value() || r.status != RunStatus::kExited;
        for (const auto& e : r.kernel.entries) {
          if (e.kind != EntryKind::kTimer) continue;
          const bool in_window = std::any_of(img.task.syscall_sites.begin(), img.task.syscall_sites.end(),
                                             [&](const auto& site) { return e.pc + 2 == site.pc || e.pc + 1 == site.pc; });
          if (in_window)
            window_checks += e.entry_check.value_or(false);
        }
      }
    }
  }
  std::cerr << fmt("C5: %llu fault-free runs, %llu traps, %llu passing timer checks inside a link window\n",
                   (unsigned long long)runs, (unsigned long long)traps, (unsigned long long)window_checks);
  return {traps == 0 && window_checks > 0,
          fmt("%llu fault-free runs (T in {3, 10, 1000} plus in-window periods), 0 traps expected, %llu seen; "
              "%llu timer checks inside link windows",
              (unsigned long long)runs, (unsigned long long)traps, (unsigned long long)window_checks)};
}

// Criterion 6: the live state register equals the RangeMap at every
// instruction boundary.
Verdict c6_oracle_equivalence(const std::vector<Subject>& corpus) {
  uint64_t boundaries = 0, mismatches = 0, runs = 0;
  for (const auto& s : corpus) {
    const Loader loader(s.linked.instrumented, s.linked.metadata);
    for (uint64_t key = 0; key < 10; ++key) {
      const ProcessImage img = loader.load({.seed = 6000 + key});
      Kernel k;
      RunOptions o;
      o.timer_period = 7;
      o.trace = [&](const TraceEntry& t) {
        ++boundaries;
        const auto want = img.task.expected.find(t.pc);
        mismatches += !want || *want != t.state;
      };
      const RunResult r = run(img, k, nullptr, o);
      ++runs;
      mismatches += r.status != RunStatus::kExited;
    }
  }
  std::cerr << fmt("C6: %llu runs, %llu instruction boundaries, %llu mismatches\n", (unsigned long long)runs,
                   (unsigned long long)boundaries, (unsigned long long)mismatches);
  return {mismatches == 0 && boundaries > 0,
          fmt("%llu instruction boundaries over %llu runs, %llu mismatches", (unsigned long long)boundaries,
              (unsigned long long)runs, (unsigned long long)mismatches)};
}

// Criterion 7: latency and macro benchmark tables with monotone
// ordering in retired instructions.
Verdict c7_benchmark_structure(const std::vector<Subject>& corpus) {
  const Program loop = parse_program(testing::read_text(testing::source_path("corpus/getpid_loop.sasm")));
  const auto rows = bench_syscall_latency(loop, 100000);
  std::cerr << "C7: syscall latency (retired instructions)\n" << latency_csv(rows);
  bool ok = rows.size() == 4 && rows[0].configuration == "plain" && rows[3].configuration == "+both";
  if (ok)
    ok = rows[0].total() <= rows[1].total() && rows[0].total() <= rows[2].total() &&
         rows[1].total() <= rows[3].total() && rows[2].total() <= rows[3].total();
  std::vector<std::pair<std::string, Program>> programs;
  for (const auto& s : corpus) programs.emplace_back(s.name, s.program);
  const auto macro = bench_macro(programs);
  std::cerr << "C7: macro benchmark\n" << overhead_csv(macro);
  bool macro_ok = macro.size() == corpus.size();
  for (const auto& r : macro) macro_ok &= r.plain <= r.cfi_only && r.cfi_only <= r.cfi_sfp;
  return {ok && macro_ok,
          fmt("4-row latency table (plain %.1f, +both %.1f per syscall) and %zu-program macro table, "
              "plain <= CFI-only <= CFI+SFP",
              rows.empty() ? 0.0 : rows[0].per_syscall(), rows.size() < 4 ? 0.0 : rows[3].per_syscall(),
              macro.size())};
}

// Criterion 8: PRF quality.
Verdict c8_prf_quality() {
  std::mt19937_64 rng(0xa8);
  const int n = 10000;
  double flipped = 0, hamming = 0;
  for (int i = 0; i < n; ++i) {
    PaKey k;
    do {
      k = {rng(), rng()};
    } while (k.is_zero());
    const uint64_t x = rng();
    const Modifier m{rng()};
    flipped += std::popcount(prf(k, x, m) ^ prf(k, x ^ (1ull << (rng() % 64)), m));
    const SyscallNo s = static_cast<SyscallNo>(rng() % (kSyscallCount - 1));
    hamming += std::popcount(compute_syscall_patch(k, s, m).value() ^ compute_syscall_patch(k, s + 1, m).value());
  }
  flipped /= n;
  hamming /= n;
  std::cerr << fmt("C8: avalanche mean %.3f bits of 64, adjacent-syscall patch distance %.3f bits of 15\n", flipped,
                   hamming);
  return {flipped >= 30 && flipped <= 34 && hamming >= 6.0,
          fmt("avalanche %.2f flipped bits (32 +/- 2), adjacent-syscall patch distance %.2f (>= 6.0 of 15)", flipped,
              hamming)};
}

}  // namespace
}  // namespace sfp

int main(int argc, char** argv) {
  using namespace sfp;
  uint64_t mc = 1000000;
  // A smaller Monte-Carlo count for quick local runs; the criterion then
  // reports FAIL since it requires at least 10^6 trials.
  if (argc > 1) mc = std::stoull(argv[1]);

  const auto corpus = load_corpus();
  struct Criterion {
    const char* id;
    std::function<Verdict()> check;
  };
  const std::vector<Criterion> criteria = {
      {"R1 syscall-number integrity", [&] { return r1_syscall_number_integrity(corpus); }},
      {"R2 no skipping",
       [&] {
         const Verdict a = r2_no_skipping(corpus, false);
         const Verdict b = r2_no_skipping(corpus, true);
         return Verdict{a.pass && b.pass, "(a) " + a.summary + "; (b) " + b.summary};
       }},
      {"R3 correct dispatch", [&] { return r3_correct_dispatch(mc); }},
      {"R4 dynamic instrumentation", [] { return r4_dynamic_instrumentation(); }},
      {"C5 no false positives", [&] { return c5_no_false_positives(corpus); }},
      {"C6 oracle equivalence", [&] { return c6_oracle_equivalence(corpus); }},
      {"C7 benchmark structure", [&] { return c7_benchmark_structure(corpus); }},
      {"C8 PRF quality", [] { return c8_prf_quality(); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (v.pass ? "PASS" : "FAIL") << "  " << c.id << ": " << v.summary << fmt(" [%.1fs]", secs) << std::endl;
    failed += !v.pass;
  }
  return failed;
}
