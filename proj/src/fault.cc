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

#include "sfp/fault.h"

#include <cstdio>

#include "sfp/error.h"

namespace sfp {

namespace {

using nlohmann::json;

std::string hex(uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
  return buf;
}

// Numbers may be given as JSON integers or "0x..." strings.
uint64_t number(const json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorCode::kConfig, std::string("fault is missing '") + key + "'");
  const json& v = j.at(key);
  if (v.is_number_unsigned()) return v.get<uint64_t>();
  if (v.is_number_integer()) return static_cast<uint64_t>(v.get<int64_t>());
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    try {
      size_t used = 0;
      uint64_t out = std::stoull(s, &used, 0);
      if (used == s.size()) return out;
    } catch (const std::exception&) {
    }
  }
  throw Error(ErrorCode::kConfig, std::string("fault field '") + key + "' is not a number");
}

struct ActionName {
  ActionKind kind;
  const char* name;
};
constexpr ActionName kActionNames[] = {
    {ActionKind::kFlipBits, "flip_bits"},       {ActionKind::kFlipPcBits, "flip_pc_bits"},
    {ActionKind::kSkipInstr, "skip"},           {ActionKind::kRedirectPc, "redirect_pc"},
    {ActionKind::kWriteMem, "write_mem"},       {ActionKind::kWriteReg, "write_reg"},
    {ActionKind::kCorruptOpcode, "corrupt_opcode"},
};

const char* action_name(ActionKind k) {
  for (const auto& a : kActionNames)
    if (a.kind == k) return a.name;
  return "?";
}

}  // namespace

FaultSpec skip_at_pc(Pc pc, uint32_t count) {
  FaultSpec f;
  f.trigger = {TriggerKind::kPc, pc};
  f.action.kind = ActionKind::kSkipInstr;
  f.action.count = count;
  return f;
}

FaultSpec flip_reg_at_pc(Pc pc, uint32_t reg, uint64_t mask) {
  FaultSpec f;
  f.trigger = {TriggerKind::kPc, pc};
  f.action.kind = ActionKind::kFlipBits;
  f.action.reg = reg;
  f.action.mask = mask;
  return f;
}

FaultSpec write_reg_at_pc(Pc pc, uint32_t reg, uint64_t value) {
  FaultSpec f;
  f.trigger = {TriggerKind::kPc, pc};
  f.action.kind = ActionKind::kWriteReg;
  f.action.reg = reg;
  f.action.value = value;
  return f;
}

std::string describe(const FaultSpec& spec) {
  std::string s;
  switch (spec.trigger.kind) {
    case TriggerKind::kRetired:
      s = "at retired #" + std::to_string(spec.trigger.value);
      break;
    case TriggerKind::kPc:
      s = "at pc " + std::to_string(spec.trigger.value);
      break;
    case TriggerKind::kOpcode:
      s = "at " + std::string(opcode_name(spec.trigger.opcode)) + " #" + std::to_string(spec.trigger.occurrence);
      break;
  }
  const auto& a = spec.action;
  s += ": ";
  switch (a.kind) {
    case ActionKind::kFlipBits:
      s += "flip r" + std::to_string(a.reg) + " ^= " + hex(a.mask);
      break;
    case ActionKind::kFlipPcBits:
      s += "flip pc ^= " + hex(a.mask);
      break;
    case ActionKind::kSkipInstr:
      s += "skip " + std::to_string(a.count);
      break;
    case ActionKind::kRedirectPc:
      s += "pc = " + std::to_string(a.value);
      break;
    case ActionKind::kWriteMem:
      s += "write " + std::to_string(a.bytes.size()) + " bytes at " + hex(a.addr);
      break;
    case ActionKind::kWriteReg:
      s += "r" + std::to_string(a.reg) + " = " + hex(a.value);
      break;
    case ActionKind::kCorruptOpcode:
      s += "opcode ^= " + hex(a.mask);
      break;
  }
  return s;
}

void validate_fault(const FaultSpec& spec) {
  const auto& a = spec.action;
  if ((a.kind == ActionKind::kFlipBits || a.kind == ActionKind::kWriteReg) && a.reg >= kNumRegisters)
    throw Error(ErrorCode::kConfig, "fault register r" + std::to_string(a.reg) + " does not exist");
  if (a.kind == ActionKind::kWriteMem &&
      (a.bytes.empty() || a.addr < kDataBase || a.addr - kDataBase + a.bytes.size() > kDataSize))
    throw Error(ErrorCode::kConfig, "fault memory write outside the data segment");
  if (a.kind == ActionKind::kSkipInstr && a.count == 0)
    throw Error(ErrorCode::kConfig, "skip count must be positive");
  if (a.kind == ActionKind::kCorruptOpcode && (a.mask == 0 || a.mask > 0xF))
    throw Error(ErrorCode::kConfig, "opcode mask must be a nonzero 4-bit value");
  if (spec.trigger.kind == TriggerKind::kOpcode && spec.trigger.occurrence == 0)
    throw Error(ErrorCode::kConfig, "opcode occurrence is 1-based");
}

uint8_t apply_fault(const FaultSpec& spec, MachineState& m) {
  validate_fault(spec);
  const auto& a = spec.action;
  switch (a.kind) {
    case ActionKind::kFlipBits:
      m.regs[a.reg] ^= a.mask;
      break;
    case ActionKind::kFlipPcBits:
      m.pc ^= static_cast<Pc>(a.mask);
      break;
    case ActionKind::kSkipInstr:
      m.pc += a.count;
      break;
    case ActionKind::kRedirectPc:
      m.pc = static_cast<Pc>(a.value);
      break;
    case ActionKind::kWriteMem:
      if (!m.write_bytes(a.addr, a.bytes)) throw Error(ErrorCode::kConfig, "fault memory write failed");
      break;
    case ActionKind::kWriteReg:
      m.regs[a.reg] = a.value;
      break;
    case ActionKind::kCorruptOpcode:
      return static_cast<uint8_t>(a.mask);
  }
  return 0;
}

json fault_to_json(const FaultSpec& spec) {
  json t;
  switch (spec.trigger.kind) {
    case TriggerKind::kRetired:
      t = {{"kind", "retired"}, {"index", spec.trigger.value}};
      break;
    case TriggerKind::kPc:
      t = {{"kind", "pc"}, {"pc", spec.trigger.value}};
      break;
    case TriggerKind::kOpcode:
      t = {{"kind", "opcode"}, {"opcode", opcode_name(spec.trigger.opcode)}, {"occurrence", spec.trigger.occurrence}};
      break;
  }
  if (spec.trigger.repeating) t["repeating"] = true;
  const auto& a = spec.action;
  json act = {{"kind", action_name(a.kind)}};
  switch (a.kind) {
    case ActionKind::kFlipBits:
      act["reg"] = a.reg;
      act["mask"] = hex(a.mask);
      break;
    case ActionKind::kFlipPcBits:
    case ActionKind::kCorruptOpcode:
      act["mask"] = hex(a.mask);
      break;
    case ActionKind::kSkipInstr:
      act["count"] = a.count;
      break;
    case ActionKind::kRedirectPc:
      act["target"] = a.value;
      break;
    case ActionKind::kWriteMem:
      act["addr"] = hex(a.addr);
      act["bytes"] = a.bytes;
      break;
    case ActionKind::kWriteReg:
      act["reg"] = a.reg;
      act["value"] = hex(a.value);
      break;
  }
  return {{"trigger", t}, {"action", act}};
}

FaultSpec fault_from_json(const json& j) {
  if (!j.is_object() || !j.contains("trigger") || !j.contains("action"))
    throw Error(ErrorCode::kConfig, "fault needs 'trigger' and 'action' objects");
  FaultSpec f;
  const json& t = j.at("trigger");
  const std::string tk = t.value("kind", "");
  if (tk == "retired") {
    f.trigger.kind = TriggerKind::kRetired;
    f.trigger.value = number(t, "index");
  } else if (tk == "pc") {
    f.trigger.kind = TriggerKind::kPc;
    f.trigger.value = number(t, "pc");
  } else if (tk == "opcode") {
    f.trigger.kind = TriggerKind::kOpcode;
    auto op = opcode_from_name(t.value("opcode", ""));
    if (!op) throw Error(ErrorCode::kConfig, "unknown opcode in fault trigger");
    f.trigger.opcode = *op;
    f.trigger.occurrence = t.contains("occurrence") ? static_cast<uint32_t>(number(t, "occurrence")) : 1;
  } else {
    throw Error(ErrorCode::kConfig, "unknown trigger kind '" + tk + "'");
  }
  f.trigger.repeating = t.value("repeating", false);

  const json& a = j.at("action");
  const std::string ak = a.value("kind", "");
  bool found = false;
  for (const auto& n : kActionNames)
    if (ak == n.name) {
      f.action.kind = n.kind;
      found = true;
    }
  if (!found) throw Error(ErrorCode::kConfig, "unknown action kind '" + ak + "'");
  auto& act = f.action;
  switch (act.kind) {
    case ActionKind::kFlipBits:
      act.reg = static_cast<uint32_t>(number(a, "reg"));
      act.mask = number(a, "mask");
      break;
    case ActionKind::kFlipPcBits:
    case ActionKind::kCorruptOpcode:
      act.mask = number(a, "mask");
      break;
    case ActionKind::kSkipInstr:
      act.count = a.contains("count") ? static_cast<uint32_t>(number(a, "count")) : 1;
      break;
    case ActionKind::kRedirectPc:
      act.value = number(a, "target");
      break;
    case ActionKind::kWriteMem:
      act.addr = number(a, "addr");
      if (!a.contains("bytes") || !a.at("bytes").is_array())
        throw Error(ErrorCode::kConfig, "write_mem needs a 'bytes' array");
      for (const auto& b : a.at("bytes")) {
        if (!b.is_number_unsigned() || b.get<uint64_t>() > 0xff)
          throw Error(ErrorCode::kConfig, "write_mem bytes must be 0..255");
        act.bytes.push_back(b.get<uint8_t>());
      }
      break;
    case ActionKind::kWriteReg:
      act.reg = static_cast<uint32_t>(number(a, "reg"));
      act.value = number(a, "value");
      break;
  }
  validate_fault(f);
  return f;
}

std::vector<FaultSpec> parse_fault_file(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kConfig, std::string("fault file is not valid JSON: ") + e.what());
  }
  const json* list = &j;
  if (j.is_object()) {
    if (j.value("version", 0) != kFaultFormatVersion)
      throw Error(ErrorCode::kConfig, "unsupported fault file version");
    if (!j.contains("faults")) throw Error(ErrorCode::kConfig, "fault file has no 'faults' array");
    list = &j.at("faults");
  }
  if (!list->is_array()) throw Error(ErrorCode::kConfig, "faults must be an array");
  std::vector<FaultSpec> out;
  for (const auto& f : *list) out.push_back(fault_from_json(f));
  return out;
}

std::string write_fault_file(std::span<const FaultSpec> faults) {
  json j = {{"version", kFaultFormatVersion}, {"faults", json::array()}};
  for (const auto& f : faults) j["faults"].push_back(fault_to_json(f));
  return j.dump(2) + "\n";
}

FaultInjector::FaultInjector(std::vector<FaultSpec> faults)
    : faults_(std::move(faults)), fired_(faults_.size(), false) {
  for (const auto& f : faults_) validate_fault(f);
}

bool FaultInjector::matches(size_t i, const MachineState& m, const ProcessImage& image) const {
  const Trigger& t = faults_[i].trigger;
  switch (t.kind) {
    case TriggerKind::kRetired:
      return m.retired == t.value;
    case TriggerKind::kPc:
      return m.pc == t.value;
    case TriggerKind::kOpcode: {
      if (m.pc >= image.code.size() || image.code[m.pc].op != t.opcode) return false;
      auto it = seen_.find(t.opcode);
      const uint32_t n = it == seen_.end() ? 0 : it->second;
      return t.repeating ? n >= t.occurrence : n == t.occurrence;
    }
  }
  return false;
}

uint8_t FaultInjector::before_fetch(MachineState& m, const ProcessImage& image) {
  uint8_t mask = 0;
  std::vector<bool> fired_now(faults_.size(), false);
  for (;;) {
    // Each distinct fetch point counts once towards opcode occurrences.
    if (m.pc < image.code.size() && (m.retired != last_counted_retired_ || m.pc != last_counted_pc_)) {
      ++seen_[image.code[m.pc].op];
      last_counted_retired_ = m.retired;
      last_counted_pc_ = m.pc;
    }
    bool moved = false;
    for (size_t i = 0; i < faults_.size(); ++i) {
      if (fired_now[i] || (fired_[i] && !faults_[i].trigger.repeating) || !matches(i, m, image)) continue;
      const Pc before = m.pc;
      mask ^= apply_fault(faults_[i], m);
      fired_[i] = fired_now[i] = true;
      ++fired_count_;
      log_.push_back("step " + std::to_string(m.retired) + ", pc " + std::to_string(before) + ": " +
                     describe(faults_[i]));
      if (m.pc != before) {
        moved = true;
        break;
      }
    }
    if (!moved) return mask;
  }
}

std::string_view detection_class_name(DetectionClass c) {
  switch (c) {
    case DetectionClass::kDetected:
      return "Detected";
    case DetectionClass::kBenign:
      return "Benign";
    case DetectionClass::kEffectiveUndetected:
      return "EffectiveUndetected";
  }
  return "?";
}

std::optional<DetectionOutcome> classify(const RunResult& run, const RunResult& baseline) {
  if (run.status == RunStatus::kBudgetExhausted) return std::nullopt;
  if (run.trap && run.trap->is_detection())
    return DetectionOutcome{DetectionClass::kDetected,
                            std::string(trap_name(run.trap->kind)) + " at pc " + std::to_string(run.trap->pc) +
                                " (" + run.trap->detail + ")"};

  auto undetected = [](std::string why) {
    return DetectionOutcome{DetectionClass::kEffectiveUndetected, std::move(why)};
  };
  const size_t n = std::min(run.syscalls.size(), baseline.syscalls.size());
  for (size_t i = 0; i < n; ++i) {
    const auto& a = run.syscalls[i];
    const auto& b = baseline.syscalls[i];
    if (a.number != b.number || a.args != b.args || a.result != b.result)
      return undetected("syscall #" + std::to_string(i) + ": " + std::to_string(a.number) + " vs baseline " +
                        std::to_string(b.number));
  }
  if (run.syscalls.size() != baseline.syscalls.size())
    return undetected(std::to_string(run.syscalls.size()) + " syscalls vs baseline " +
                      std::to_string(baseline.syscalls.size()));
  if (run.status != baseline.status || run.trap.has_value() != baseline.trap.has_value())
    return undetected("run " + std::string(run_status_name(run.status)) +
                      (run.trap ? " (" + std::string(trap_name(run.trap->kind)) + ")" : "") + " vs baseline " +
                      std::string(run_status_name(baseline.status)));
  if (run.exit_code != baseline.exit_code) return undetected("exit code differs");
  if (run.output != baseline.output) return undetected("output differs");
  if (run.final_state.data_snapshot() != baseline.final_state.data_snapshot())
    return undetected("data memory differs");
  return DetectionOutcome{DetectionClass::kBenign, "matches baseline"};
}

}  // namespace sfp
