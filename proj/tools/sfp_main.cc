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

// sfp: command-line front end. See docs/sfp.1.md.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sfp/campaign.h"
#include "sfp/cfg.h"
#include "sfp/error.h"
#include "sfp/fault.h"
#include "sfp/instrument.h"
#include "sfp/kernel.h"
#include "sfp/loader.h"
#include "sfp/machine.h"
#include "sfp/metadata.h"

namespace {

using nlohmann::json;
using namespace sfp;

constexpr int kExitOk = 0;
constexpr int kExitDetected = 1;
constexpr int kExitUsage = 2;
constexpr int kExitInternal = 3;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kConfig, "cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kConfig, "cannot write '" + path + "'");
  out << text;
}

// A plain .sasm file is instrumented on the fly; an .sfp file carries its
// metadata.
InstrumentResult obtain_instrumented(const std::string& path, bool cfi_only) {
  const std::string text = read_file(path);
  if (has_metadata_section(text)) {
    auto [program, meta] = read_sfp(text);
    InstrumentResult r;
    r.instrumented.program = std::move(program);
    r.instrumented.slots = meta.slots;
    r.metadata = std::move(meta);
    return r;
  }
  return instrument(parse_program(text), {.syscall_linking = !cfi_only});
}

json trap_json(const TrapReason& t) {
  json j = {{"kind", trap_name(t.kind)}, {"pc", t.pc}, {"detail", t.detail}};
  if (t.observed) j["observed"] = redact_state(*t.observed);
  if (t.expected) j["expected"] = redact_state(*t.expected);
  return j;
}

json run_json(const RunResult& r) {
  json j;
  j["status"] = run_status_name(r.status);
  j["exit_code"] = r.exit_code;
  if (r.trap) j["trap"] = trap_json(*r.trap);
  j["user_retired"] = r.user_retired;
  j["kernel_instructions"] = r.kernel_instructions;
  j["output"] = r.output;
  j["syscalls"] = json::array();
  for (const auto& s : r.syscalls)
    j["syscalls"].push_back({{"pc", s.pc},
                             {"requested", s.requested},
                             {"number", s.number},
                             {"args", s.args},
                             {"result", s.result}});
  json k = {{"syscalls", r.kernel.syscalls},
            {"timer_events", r.kernel.timer_events},
            {"exit_checks", r.kernel.exit_checks},
            {"checks", r.kernel.checks},
            {"violations", r.kernel.violations},
            {"entries", json::array()}};
  auto check = [](const std::optional<bool>& c) { return c ? json(*c ? "pass" : "fail") : json(nullptr); };
  for (const auto& e : r.kernel.entries)
    k["entries"].push_back({{"kind", entry_kind_name(e.kind)},
                            {"pc", e.pc},
                            {"entry_check", check(e.entry_check)},
                            {"end_check", check(e.end_check)},
                            {"dispatched", e.dispatched},
                            {"second_stage_applied", e.second_stage_applied}});
  j["kernel"] = k;
  return j;
}

struct RunArgs {
  std::string input;
  std::string faults;
  std::optional<uint64_t> seed;
  uint64_t timer = 1000;
  uint64_t budget = 1'000'000;
  uint64_t argument = 0;
  std::string trace;
  std::string output;
  bool no_checks = false;
  bool plain = false;
};

int cmd_run(const RunArgs& a) {
  ProcessImage image;
  if (a.plain) {
    image = load_plain(parse_program(read_file(a.input)));
  } else {
    auto r = obtain_instrumented(a.input, false);
    LoadOptions lo;
    lo.seed = a.seed;
    image = load(r.instrumented, r.metadata, lo);
  }
  std::vector<FaultSpec> faults;
  if (!a.faults.empty()) faults = parse_fault_file(read_file(a.faults));

  KernelConfig kc{.linking = !a.plain, .checks = !a.no_checks && !a.plain};
  RunOptions opt;
  opt.timer_period = a.timer;
  opt.budget = a.budget;
  opt.argument = a.argument;
  std::ofstream trace_out;
  if (!a.trace.empty()) {
    trace_out.open(a.trace);
    if (!trace_out) throw Error(ErrorCode::kConfig, "cannot write '" + a.trace + "'");
    opt.trace = [&](const TraceEntry& t) {
      trace_out << t.index << ' ' << t.pc << ' ' << opcode_name(t.op) << ' ' << redact_state(t.state) << '\n';
    };
  }

  Kernel kernel(kc);
  FaultInjector injector(faults);
  RunResult result = run(image, kernel, faults.empty() ? nullptr : &injector, opt);

  json j = run_json(result);
  j["seeded"] = image.task.seeded;
  j["instrumented"] = image.task.instrumented;
  j["zero_patch_count"] = image.zero_patch_count;
  if (!faults.empty()) {
    j["faults"] = injector.log();
    j["multi_fault"] = injector.multi_fault();
    RunOptions base = opt;
    base.trace = nullptr;
    Kernel k2(kc);
    RunResult baseline = run(image, k2, nullptr, base);
    if (auto outcome = classify(result, baseline))
      j["outcome"] = {{"class", detection_class_name(outcome->cls)}, {"evidence", outcome->evidence}};
    else
      j["outcome"] = {{"class", "BudgetExhausted"}};
  }
  write_output(a.output, j.dump(2) + "\n");
  if (!a.output.empty() && j.contains("outcome")) std::cout << j["outcome"]["class"].get<std::string>() << "\n";
  return result.trap && result.trap->is_detection() ? kExitDetected : kExitOk;
}

int cmd_dump_cfg(const std::string& input, bool instrumented, const std::string& output) {
  const std::string text = read_file(input);
  Program program;
  if (has_metadata_section(text)) program = read_sfp(text).first;
  else if (instrumented) program = instrument(parse_program(text)).instrumented.program;
  else program = parse_program(text);
  const Cfg cfg = build_cfg(program);
  json j;
  j["entry"] = program.blocks[cfg.entry].label;
  j["nodes"] = json::array();
  for (uint32_t n : cfg.nodes)
    j["nodes"].push_back({{"index", n}, {"label", program.blocks[n].label}, {"start", program.block_start(n)}});
  j["edges"] = json::array();
  for (const auto& e : cfg.edges)
    j["edges"].push_back({{"from", program.blocks[e.from].label},
                          {"to", program.blocks[e.to].label},
                          {"kind", edge_kind_name(e.kind)}});
  j["warnings"] = cfg.warnings;
  write_output(output, j.dump(2) + "\n");
  return kExitOk;
}

int classify_error(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kInconsistentMerge:
    case ErrorCode::kBadMetadata:
      return kExitInternal;
    default:
      return kExitUsage;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SFP simulator: instrument, load, run and attack toy programs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "sfp 1.0");

  std::string in, out;
  bool cfi_only = false;
  std::string meta_json;
  auto* inst = app.add_subcommand("instrument", "Instrument a program and write an .sfp file");
  inst->add_option("input", in, "Program text (.sasm)")->required()->check(CLI::ExistingFile);
  inst->add_option("-o,--output", out, "Output .sfp file")->required();
  inst->add_flag("--cfi-only", cfi_only, "Control-flow protection only, no syscall linking");
  inst->add_option("--metadata-json", meta_json, "Also write the metadata as JSON");

  RunArgs ra;
  auto* runc = app.add_subcommand("run", "Load and execute a program, optionally with faults");
  runc->add_option("input", ra.input, "Program (.sasm or .sfp)")->required()->check(CLI::ExistingFile);
  runc->add_option("--faults", ra.faults, "Fault file (JSON)")->check(CLI::ExistingFile);
  runc->add_option("--seed", ra.seed, "Deterministic key seed");
  runc->add_option("--timer", ra.timer, "Timer period in retired instructions (0 = off)");
  runc->add_option("--budget", ra.budget, "Instruction budget")->check(CLI::PositiveNumber);
  runc->add_option("--arg", ra.argument, "Initial value of r0");
  runc->add_option("--trace", ra.trace, "Write an execution trace");
  runc->add_option("-o,--output", ra.output, "Write the run report here instead of stdout");
  runc->add_flag("--no-checks", ra.no_checks, "Disable kernel state checks");
  runc->add_flag("--plain", ra.plain, "Run the uninstrumented program");

  std::string config_path;
  std::optional<uint64_t> camp_seed;
  unsigned jobs = 0;
  auto* camp = app.add_subcommand("campaign", "Run a fault-injection campaign");
  camp->add_option("config", config_path, "Campaign config (JSON)")->required()->check(CLI::ExistingFile);
  camp->add_option("-o,--output", out, "Report path (overrides the config)");
  camp->add_option("--seed", camp_seed, "Campaign seed (overrides the config)");
  camp->add_option("-j,--jobs", jobs, "Worker threads (overrides the config)");

  std::vector<std::string> bench_inputs;
  uint64_t iterations = 100000;
  bool macro = false;
  uint64_t bench_timer = 1000;
  auto* bench = app.add_subcommand("bench", "Syscall-latency or macro benchmark tables (CSV)");
  bench->add_option("inputs", bench_inputs, "Program(s) (.sasm)")->required()->check(CLI::ExistingFile);
  bench->add_option("-n,--iterations", iterations, "Loop iterations for the latency benchmark")
      ->check(CLI::PositiveNumber);
  bench->add_flag("--macro", macro, "Plain / CFI-only / CFI+SFP totals per program");
  bench->add_option("--timer", bench_timer, "Timer period");
  bench->add_option("-o,--output", out, "CSV output (default stdout)");

  bool instrumented = false;
  auto* dcfg = app.add_subcommand("dump-cfg", "Print the control-flow graph as JSON");
  dcfg->add_option("input", in, "Program (.sasm or .sfp)")->required()->check(CLI::ExistingFile);
  dcfg->add_flag("--instrumented", instrumented, "Show the graph after instrumentation");
  dcfg->add_option("-o,--output", out, "Output file");

  uint64_t rm_seed = 0;
  bool debug = false;
  auto* drm = app.add_subcommand("dump-rangemap", "Print the expected-state map of a loaded process");
  drm->add_option("input", in, "Program (.sasm or .sfp)")->required()->check(CLI::ExistingFile);
  drm->add_option("--seed", rm_seed, "Key seed")->required();
  drm->add_flag("--debug", debug, "Show raw state values instead of digests");
  drm->add_option("-o,--output", out, "Output file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*inst) {
      auto r = instrument(parse_program(read_file(in)), {.syscall_linking = !cfi_only});
      for (const auto& w : r.instrumented.warnings) std::cerr << "warning: " << w << "\n";
      write_output(out, write_sfp(r.instrumented.program, r.metadata));
      if (!meta_json.empty()) write_output(meta_json, metadata_to_json(r.metadata).dump(2) + "\n");
      return kExitOk;
    }
    if (*runc) return cmd_run(ra);
    if (*camp) {
      CampaignConfig c = parse_campaign_config(read_file(config_path));
      // Corpus paths are relative to the config file.
      const auto dir = std::filesystem::path(config_path).parent_path();
      for (auto& p : c.corpus)
        if (std::filesystem::path(p).is_relative()) p = (dir / p).string();
      if (!out.empty()) c.output_path = out;
      if (camp_seed) c.seed = *camp_seed;
      if (jobs) c.parallelism = jobs;
      CampaignReport report = run_campaign(c);
      std::cout << classes_csv(report);
      if (!c.output_path.empty()) std::cerr << "report written to " << c.output_path << "\n";
      return kExitOk;
    }
    if (*bench) {
      if (macro) {
        std::vector<std::pair<std::string, Program>> programs;
        for (const auto& p : bench_inputs)
          programs.emplace_back(std::filesystem::path(p).filename().string(), parse_program(read_file(p)));
        write_output(out, overhead_csv(bench_macro(programs, bench_timer)));
      } else {
        if (bench_inputs.size() != 1) throw Error(ErrorCode::kConfig, "latency benchmark takes one program");
        write_output(out, latency_csv(bench_syscall_latency(parse_program(read_file(bench_inputs[0])), iterations,
                                                            bench_timer)));
      }
      return kExitOk;
    }
    if (*dcfg) return cmd_dump_cfg(in, instrumented, out);
    if (*drm) {
      auto r = obtain_instrumented(in, false);
      ProcessImage img = load(r.instrumented, r.metadata, {.seed = rm_seed});
      json j = rangemap_to_json(img.task.expected, debug);
      j["seeded"] = true;
      write_output(out, j.dump(2) + "\n");
      return kExitOk;
    }
  } catch (const Error& e) {
    std::cerr << "sfp: " << e.what() << "\n";
    return classify_error(e);
  } catch (const std::exception& e) {
    std::cerr << "sfp: internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}
