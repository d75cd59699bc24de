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

#include "sfp/campaign.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "sfp/error.h"
#include "sfp/instrument.h"
#include "sfp/loader.h"

namespace sfp {

namespace {

using nlohmann::json;

constexpr size_t kUndetectedExamples = 20;

struct ClassName {
  FaultClass cls;
  const char* name;
};
constexpr ClassName kClassNames[] = {
    {FaultClass::kSvcSkip, "svc_skip"},
    {FaultClass::kSequenceSkip, "sequence_skip"},
    {FaultClass::kSyscallRegFlip, "syscall_reg_flip"},
    {FaultClass::kSyscallRedirect, "syscall_redirect"},
    {FaultClass::kPcRedirect, "pc_redirect"},
    {FaultClass::kPcBitFlip, "pc_bitflip"},
    {FaultClass::kRegisterFlip, "register_flip"},
    {FaultClass::kDataCorruption, "data_corruption"},
    {FaultClass::kOpcodeCorruption, "opcode_corruption"},
};

bool is_sweep(FaultClass c) {
  return c == FaultClass::kSvcSkip || c == FaultClass::kSequenceSkip || c == FaultClass::kSyscallRegFlip;
}

// splitmix64 finaliser, used to derive independent per-trial seeds.
uint64_t mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t trial_seed(uint64_t base, size_t entry, uint64_t index) {
  return mix(mix(base) ^ mix(0x5f5f0000ull + entry) ^ index);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kConfig, "cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Subject {
  std::string name;
  Program program;
  std::unique_ptr<Loader> loader;
  RunResult baseline;
};

struct Trial {
  uint32_t subject = 0;
  uint64_t seed = 0;
  std::vector<FaultSpec> faults;
};

struct Plan {
  std::string name;
  uint64_t count = 0;
  std::function<Trial(uint64_t)> make;
};

RunResult execute(const Subject& s, uint64_t seed, std::vector<FaultSpec> faults, const CampaignConfig& c) {
  LoadOptions lo;
  lo.seed = seed;
  ProcessImage img = s.loader->load(lo);
  Kernel kernel;
  FaultInjector injector(std::move(faults));
  RunOptions opt;
  opt.budget = c.budget;
  opt.timer_period = c.timer_period;
  return run(img, kernel, &injector, opt);
}

uint64_t pick(std::mt19937_64& rng, uint64_t n) { return std::uniform_int_distribution<uint64_t>(0, n - 1)(rng); }

SyscallNo other_syscall(std::mt19937_64& rng, SyscallNo n) {
  SyscallNo m = static_cast<SyscallNo>(pick(rng, kSyscallCount - 1));
  return m >= n ? m + 1 : m;
}

Plan make_plan(const FaultSpaceEntry& entry, size_t entry_index, const std::vector<Subject>& subjects,
               const CampaignConfig& config) {
  Plan plan;
  plan.name = std::string(fault_class_name(entry.cls));
  const uint64_t base = config.seed;

  if (is_sweep(entry.cls)) {
    struct Point {
      uint32_t subject;
      FaultSpec fault;
    };
    auto points = std::make_shared<std::vector<Point>>();
    for (uint32_t si = 0; si < subjects.size(); ++si) {
      const CfMetadata& meta = subjects[si].loader->metadata();
      for (const auto& site : meta.syscall_sites) {
        switch (entry.cls) {
          case FaultClass::kSvcSkip:
            points->push_back({si, skip_at_pc(site.pc)});
            break;
          case FaultClass::kSequenceSkip:
            if (site.slot_id != kNone) points->push_back({si, skip_at_pc(site.pc - 3, 4)});
            break;
          default:
            for (int bit = 0; bit < 64; ++bit)
              points->push_back({si, flip_reg_at_pc(site.pc, kSyscallReg, 1ull << bit)});
            break;
        }
      }
    }
    const uint32_t keys = std::max<uint32_t>(entry.keys, 1);
    plan.count = points->size() * keys;
    plan.make = [points, keys, base, entry_index](uint64_t i) {
      const Point& p = (*points)[i / keys];
      return Trial{p.subject, trial_seed(base, entry_index, i), {p.fault}};
    };
    return plan;
  }

  // Random classes draw a subject with at least one syscall site where one
  // is needed.
  std::vector<uint32_t> eligible;
  for (uint32_t si = 0; si < subjects.size(); ++si) {
    const bool needs_site = entry.cls == FaultClass::kSyscallRedirect || entry.cls == FaultClass::kPcRedirect;
    if (!needs_site || !subjects[si].loader->metadata().syscall_sites.empty()) eligible.push_back(si);
  }
  if (eligible.empty()) throw Error(ErrorCode::kConfig, "no corpus program has a syscall site for " + plan.name);
  plan.count = entry.samples;
  const FaultClass cls = entry.cls;
  plan.make = [eligible, base, entry_index, cls, &subjects](uint64_t i) {
    const uint64_t seed = trial_seed(base, entry_index, i);
    std::mt19937_64 rng(seed ^ 0xfa017ull);
    Trial t;
    t.seed = seed;
    t.subject = eligible[pick(rng, eligible.size())];
    const Subject& s = subjects[t.subject];
    const auto& sites = s.loader->metadata().syscall_sites;
    const uint64_t retired = std::max<uint64_t>(s.baseline.user_retired, 1);
    FaultSpec f;
    f.trigger = {TriggerKind::kRetired, pick(rng, retired)};
    switch (cls) {
      case FaultClass::kSyscallRedirect: {
        const auto& site = sites[pick(rng, sites.size())];
        t.faults.push_back(write_reg_at_pc(site.pc, kSyscallReg, other_syscall(rng, site.number)));
        break;
      }
      case FaultClass::kPcRedirect: {
        const auto& site = sites[pick(rng, sites.size())];
        FaultSpec w = f;
        w.action.kind = ActionKind::kWriteReg;
        w.action.reg = kSyscallReg;
        w.action.value = other_syscall(rng, site.number);
        FaultSpec j = f;
        j.action.kind = ActionKind::kRedirectPc;
        j.action.value = site.pc;
        t.faults = {w, j};
        break;
      }
      case FaultClass::kPcBitFlip: {
        const int width = std::bit_width(s.loader->metadata().code_size);
        f.action.kind = ActionKind::kFlipPcBits;
        f.action.mask = 1ull << pick(rng, static_cast<uint64_t>(width) + 1);
        t.faults.push_back(f);
        break;
      }
      case FaultClass::kRegisterFlip:
        f.action.kind = ActionKind::kFlipBits;
        f.action.reg = static_cast<uint32_t>(pick(rng, kNumRegisters));
        f.action.mask = 1ull << pick(rng, 64);
        t.faults.push_back(f);
        break;
      case FaultClass::kDataCorruption: {
        const uint64_t span = std::max<uint64_t>(s.program.data.size(), 64);
        f.action.kind = ActionKind::kWriteMem;
        f.action.addr = kDataBase + pick(rng, span);
        f.action.bytes.resize(8);
        for (auto& b : f.action.bytes) b = static_cast<uint8_t>(rng());
        t.faults.push_back(f);
        break;
      }
      case FaultClass::kOpcodeCorruption:
        f.action.kind = ActionKind::kCorruptOpcode;
        f.action.mask = 1ull << pick(rng, 4);
        t.faults.push_back(f);
        break;
      default:
        break;
    }
    return t;
  };
  return plan;
}

json counts_json(const ClassCounts& c) {
  const WilsonInterval ci = wilson_interval(c.detected, c.effective());
  return {{"detected", c.detected},
          {"benign", c.benign},
          {"effective_undetected", c.effective_undetected},
          {"budget_exhausted", c.budget_exhausted},
          {"trials", c.trials()},
          {"detection_rate", c.effective() ? static_cast<double>(c.detected) / c.effective() : 1.0},
          {"wilson95", {ci.lo, ci.hi}}};
}

RunResult run_config(const ProcessImage& img, KernelConfig kc, const RunOptions& opt, const std::string& what) {
  Kernel kernel(kc);
  RunResult r = run(img, kernel, nullptr, opt);
  if (r.status != RunStatus::kExited)
    throw Error(ErrorCode::kConfig, what + " did not exit cleanly (" + std::string(run_status_name(r.status)) +
                                        (r.trap ? ", " + std::string(trap_name(r.trap->kind)) : "") + ")");
  return r;
}

}  // namespace

WilsonInterval wilson_interval(uint64_t successes, uint64_t trials, double z) {
  if (trials == 0) return {0.0, 1.0};
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2 * n)) / denom;
  const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

std::string_view fault_class_name(FaultClass c) {
  for (const auto& n : kClassNames)
    if (n.cls == c) return n.name;
  return "?";
}

std::optional<FaultClass> fault_class_from_name(std::string_view name) {
  for (const auto& n : kClassNames)
    if (name == n.name) return n.cls;
  return std::nullopt;
}

void ClassCounts::add(const std::optional<DetectionOutcome>& outcome) {
  if (!outcome) {
    ++budget_exhausted;
    return;
  }
  switch (outcome->cls) {
    case DetectionClass::kDetected:
      ++detected;
      break;
    case DetectionClass::kBenign:
      ++benign;
      break;
    case DetectionClass::kEffectiveUndetected:
      ++effective_undetected;
      break;
  }
}

ClassCounts& ClassCounts::operator+=(const ClassCounts& o) {
  detected += o.detected;
  benign += o.benign;
  effective_undetected += o.effective_undetected;
  budget_exhausted += o.budget_exhausted;
  return *this;
}

double CampaignReport::detection_rate() const {
  return totals.effective() ? static_cast<double>(totals.detected) / totals.effective() : 1.0;
}

WilsonInterval CampaignReport::detection_interval() const {
  return wilson_interval(totals.detected, totals.effective());
}

CampaignConfig parse_campaign_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kConfig, std::string("campaign config is not valid JSON: ") + e.what());
  }
  CampaignConfig c;
  try {
    for (const auto& p : j.at("corpus")) c.corpus.push_back(p.get<std::string>());
    for (const auto& f : j.at("fault_space")) {
      FaultSpaceEntry e;
      const std::string name = f.at("class").get<std::string>();
      auto cls = fault_class_from_name(name);
      if (!cls) throw Error(ErrorCode::kConfig, "unknown fault class '" + name + "'");
      e.cls = *cls;
      e.keys = f.value("keys", e.keys);
      e.samples = f.value("samples", e.samples);
      c.fault_space.push_back(e);
    }
    c.seed = j.value("seed", c.seed);
    c.timer_period = j.value("timer_period", c.timer_period);
    c.budget = j.value("budget", c.budget);
    c.parallelism = j.value("parallelism", c.parallelism);
    c.output_path = j.value("output", c.output_path);
    c.overhead = j.value("overhead", c.overhead);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("bad campaign config: ") + e.what());
  }
  return c;
}

CampaignReport run_campaign(const CampaignConfig& config) {
  // Everything that can fail as configuration fails here, before trial 1.
  if (config.corpus.empty()) throw Error(ErrorCode::kConfig, "campaign corpus is empty");
  if (config.fault_space.empty()) throw Error(ErrorCode::kConfig, "campaign fault space is empty");
  if (config.budget == 0) throw Error(ErrorCode::kConfig, "budget must be positive");

  std::vector<Subject> subjects;
  for (const auto& path : config.corpus) {
    Subject s;
    s.name = std::filesystem::path(path).filename().string();
    try {
      s.program = parse_program(read_file(path));
      auto linked = instrument(s.program);
      s.loader = std::make_unique<Loader>(std::move(linked.instrumented), std::move(linked.metadata));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kConfig) throw;
      throw Error(ErrorCode::kConfig, path + ": " + e.what());
    }
    // Observable behaviour of a fault-free run does not depend on the key,
    // so one baseline per program serves every trial.
    LoadOptions lo;
    lo.seed = trial_seed(config.seed, 0xba5e, subjects.size());
    Kernel kernel;
    RunOptions opt;
    opt.budget = config.budget;
    opt.timer_period = config.timer_period;
    s.baseline = run(s.loader->load(lo), kernel, nullptr, opt);
    if (s.baseline.status != RunStatus::kExited)
      throw Error(ErrorCode::kConfig, path + ": fault-free run did not exit cleanly");
    subjects.push_back(std::move(s));
  }

  std::vector<Plan> plans;
  std::vector<uint64_t> offsets{0};
  for (size_t i = 0; i < config.fault_space.size(); ++i) {
    plans.push_back(make_plan(config.fault_space[i], i, subjects, config));
    offsets.push_back(offsets.back() + plans.back().count);
  }
  const uint64_t total = offsets.back();
  if (total == 0) throw Error(ErrorCode::kConfig, "campaign has no trials");

  CampaignReport report;
  report.trials = total;
  for (const auto& e : config.fault_space)
    report.multi_fault |= e.cls == FaultClass::kPcRedirect;

  std::vector<int8_t> verdict(total, -1);
  std::map<uint64_t, std::string> examples;
  std::mutex mu;
  std::atomic<uint64_t> next{0};
  std::exception_ptr failure;

  auto worker = [&] {
    for (;;) {
      const uint64_t i = next.fetch_add(1);
      if (i >= total) return;
      try {
        const size_t p = std::upper_bound(offsets.begin(), offsets.end(), i) - offsets.begin() - 1;
        Trial t = plans[p].make(i - offsets[p]);
        const Subject& s = subjects[t.subject];
        RunResult r = execute(s, t.seed, std::move(t.faults), config);
        auto outcome = classify(r, s.baseline);
        verdict[i] = outcome ? static_cast<int8_t>(outcome->cls) : 3;
        if (outcome && outcome->cls == DetectionClass::kEffectiveUndetected) {
          std::lock_guard lock(mu);
          examples[i] = plans[p].name + " on " + s.name + ": " + outcome->evidence;
          if (examples.size() > kUndetectedExamples) examples.erase(std::prev(examples.end()));
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = total;
        return;
      }
    }
  };
  const unsigned threads = std::max(1u, config.parallelism);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  // Aggregate in trial order so the result is independent of scheduling.
  for (size_t p = 0; p < plans.size(); ++p) {
    ClassCounts& c = report.by_class[plans[p].name];
    for (uint64_t i = offsets[p]; i < offsets[p + 1]; ++i) {
      switch (verdict[i]) {
        case 0:
          ++c.detected;
          break;
        case 1:
          ++c.benign;
          break;
        case 2:
          ++c.effective_undetected;
          break;
        default:
          ++c.budget_exhausted;
          break;
      }
    }
  }
  for (const auto& [name, c] : report.by_class) report.totals += c;
  for (auto& [i, text] : examples) report.undetected_examples.push_back(text);

  if (config.overhead) {
    std::vector<std::pair<std::string, Program>> programs;
    for (const auto& s : subjects) programs.emplace_back(s.name, s.program);
    report.overhead = bench_macro(programs, config.timer_period, config.budget);
  }
  report.generated_at = utc_timestamp();

  if (!config.output_path.empty()) {
    namespace fs = std::filesystem;
    const fs::path out(config.output_path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream(out) << report_to_json(report, config).dump(2) << "\n";
    fs::path stem = out;
    stem.replace_extension();
    std::ofstream(stem.string() + ".classes.csv") << classes_csv(report);
    if (config.overhead) std::ofstream(stem.string() + ".overhead.csv") << overhead_csv(report.overhead);
  }
  return report;
}

json report_to_json(const CampaignReport& report, const CampaignConfig& config) {
  json cfg;
  cfg["seed"] = config.seed;
  cfg["timer_period"] = config.timer_period;
  cfg["budget"] = config.budget;
  cfg["corpus"] = json::array();
  for (const auto& p : config.corpus) cfg["corpus"].push_back(std::filesystem::path(p).filename().string());
  cfg["fault_space"] = json::array();
  for (const auto& e : config.fault_space) {
    json f = {{"class", fault_class_name(e.cls)}};
    if (is_sweep(e.cls)) f["keys"] = e.keys;
    else f["samples"] = e.samples;
    cfg["fault_space"].push_back(f);
  }

  json j;
  j["schema"] = "sfp-campaign-report";
  j["version"] = 1;
  j["generated_at"] = report.generated_at;
  j["seeded"] = true;
  j["metric"] = "retired instructions (simulator), not CPU cycles";
  j["config"] = cfg;
  j["trials"] = report.trials;
  j["multi_fault"] = report.multi_fault;
  j["totals"] = counts_json(report.totals);
  j["classes"] = json::object();
  for (const auto& [name, c] : report.by_class) j["classes"][name] = counts_json(c);
  j["undetected_examples"] = report.undetected_examples;
  j["overhead"] = json::array();
  for (const auto& r : report.overhead)
    j["overhead"].push_back({{"program", r.program},
                             {"plain", r.plain},
                             {"cfi_only", r.cfi_only},
                             {"cfi_sfp", r.cfi_sfp}});
  return j;
}

std::string classes_csv(const CampaignReport& report) {
  std::ostringstream out;
  out << "class,trials,detected,benign,effective_undetected,budget_exhausted,detection_rate,wilson_lo,wilson_hi\n";
  auto row = [&](const std::string& name, const ClassCounts& c) {
    const WilsonInterval ci = wilson_interval(c.detected, c.effective());
    char buf[128];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f",
                  c.effective() ? static_cast<double>(c.detected) / c.effective() : 1.0, ci.lo, ci.hi);
    out << name << ',' << c.trials() << ',' << c.detected << ',' << c.benign << ',' << c.effective_undetected << ','
        << c.budget_exhausted << ',' << buf << '\n';
  };
  for (const auto& [name, c] : report.by_class) row(name, c);
  row("total", report.totals);
  return out.str();
}

std::string overhead_csv(const std::vector<OverheadRow>& rows) {
  std::ostringstream out;
  out << "program,plain,cfi_only,cfi_sfp,cfi_only_ratio,cfi_sfp_ratio\n";
  double log_cfi = 0, log_sfp = 0;
  char buf[64];
  for (const auto& r : rows) {
    const double a = static_cast<double>(r.cfi_only) / r.plain, b = static_cast<double>(r.cfi_sfp) / r.plain;
    log_cfi += std::log(a);
    log_sfp += std::log(b);
    std::snprintf(buf, sizeof buf, "%.4f,%.4f", a, b);
    out << r.program << ',' << r.plain << ',' << r.cfi_only << ',' << r.cfi_sfp << ',' << buf << '\n';
  }
  if (!rows.empty()) {
    std::snprintf(buf, sizeof buf, "%.4f,%.4f", std::exp(log_cfi / rows.size()), std::exp(log_sfp / rows.size()));
    out << "geomean,,,," << buf << '\n';
  }
  return out.str();
}

std::vector<LatencyRow> bench_syscall_latency(const Program& source, uint64_t iterations, uint64_t timer_period) {
  const auto linked = instrument(source);
  const auto cfi_only = instrument(source, {.syscall_linking = false});
  const ProcessImage plain = load_plain(source);
  const ProcessImage sfp = load(linked.instrumented, linked.metadata, {.seed = 1});
  const ProcessImage cfi = load(cfi_only.instrumented, cfi_only.metadata, {.seed = 1});

  RunOptions opt;
  opt.argument = iterations;
  opt.timer_period = timer_period;
  opt.budget = 64 * iterations + 10000;
  auto row = [&](std::string name, const ProcessImage& img, KernelConfig kc) {
    RunResult r = run_config(img, kc, opt, "benchmark configuration " + name);
    return LatencyRow{std::move(name), r.user_retired, r.kernel_instructions, r.kernel.syscalls};
  };
  return {row("plain", plain, {.linking = false, .checks = false}),
          row("+verification", sfp, {.linking = true, .checks = false}),
          row("+checks", cfi, {.linking = false, .checks = true}),
          row("+both", sfp, {.linking = true, .checks = true})};
}

std::string latency_csv(const std::vector<LatencyRow>& rows) {
  std::ostringstream out;
  out << "configuration,user_instructions,kernel_instructions,total_instructions,syscalls,per_syscall,ratio\n";
  const double base = rows.empty() ? 1.0 : rows.front().per_syscall();
  for (const auto& r : rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f,%.4f", r.per_syscall(), base > 0 ? r.per_syscall() / base : 0.0);
    out << r.configuration << ',' << r.user_instructions << ',' << r.kernel_instructions << ',' << r.total() << ','
        << r.syscalls << ',' << buf << '\n';
  }
  return out.str();
}

std::vector<OverheadRow> bench_macro(const std::vector<std::pair<std::string, Program>>& programs,
                                     uint64_t timer_period, uint64_t budget) {
  std::vector<OverheadRow> rows;
  RunOptions opt;
  opt.timer_period = timer_period;
  opt.budget = budget;
  for (const auto& [name, program] : programs) {
    const auto linked = instrument(program);
    const auto cfi_only = instrument(program, {.syscall_linking = false});
    auto total = [](const RunResult& r) { return r.user_retired + r.kernel_instructions; };
    OverheadRow row{name};
    row.plain = total(run_config(load_plain(program), {false, false}, opt, name + " (plain)"));
    row.cfi_only = total(run_config(load(cfi_only.instrumented, cfi_only.metadata, {.seed = 1}), {false, true}, opt,
                                    name + " (CFI-only)"));
    row.cfi_sfp =
        total(run_config(load(linked.instrumented, linked.metadata, {.seed = 1}), {true, true}, opt, name + " (CFI+SFP)"));
    rows.push_back(row);
  }
  return rows;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace sfp
