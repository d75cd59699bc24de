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

#include "sfp/instrument.h"

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <unordered_map>
#include <utility>

#include "sfp/cfg.h"
#include "sfp/error.h"

namespace sfp {

namespace {

bool writes_reg(const Instruction& i, uint8_t r) {
  switch (i.op) {
    case Opcode::kMovi:
    case Opcode::kAlu:
    case Opcode::kLoad:
      return i.rd == r;
    case Opcode::kCall:
      return r == kLinkReg;
    default:
      return false;
  }
}

bool reads_reg(const Instruction& i, uint8_t r) {
  switch (i.op) {
    case Opcode::kAlu:
    case Opcode::kStore:
      return i.rs1 == r || i.rs2 == r;
    case Opcode::kLoad:
    case Opcode::kBrCond:
    case Opcode::kBrInd:
      return i.rs1 == r;
    case Opcode::kSvc:
      return r == kSyscallReg || r < 3;
    case Opcode::kRet:
      return r == kLinkReg;
    default:
      return false;
  }
}

// Explicit register operands only.
std::vector<uint8_t> operand_regs(const Instruction& i) {
  switch (i.op) {
    case Opcode::kMovi:
      return {i.rd};
    case Opcode::kAlu:
      return {i.rd, i.rs1, i.rs2};
    case Opcode::kLoad:
      return {i.rd, i.rs1};
    case Opcode::kStore:
      return {i.rs1, i.rs2};
    case Opcode::kBrCond:
    case Opcode::kBrInd:
      return {i.rs1};
    default:
      return {};
  }
}

void check_reserved(const Program& p) {
  for (const auto& b : p.blocks) {
    for (const auto& i : b.instructions) {
      if (i.op == Opcode::kPatchSlot || i.op == Opcode::kStateXor || i.op == Opcode::kUpdate)
        throw Error(ErrorCode::kReservedRegister,
                    "block '" + b.label + "' already contains " + std::string(opcode_name(i.op)));
      for (uint8_t r : operand_regs(i))
        if (r == kPatchReg || r == kStateReg)
          throw Error(ErrorCode::kReservedRegister,
                      "block '" + b.label + "' uses reserved register x" + std::to_string(r) +
                          " in '" + print_instruction(i) + "'");
    }
  }
}

// Edges closing a cycle in a DFS from the entry (successors in index order).
std::set<std::pair<uint32_t, uint32_t>> back_edges(const Cfg& cfg, size_t nblocks) {
  std::vector<std::vector<uint32_t>> succ(nblocks);
  for (const auto& e : cfg.edges) succ[e.from].push_back(e.to);
  for (auto& s : succ) s.erase(std::unique(s.begin(), s.end()), s.end());

  enum Color { kWhite, kGrey, kBlack };
  std::vector<Color> color(nblocks, kWhite);
  std::set<std::pair<uint32_t, uint32_t>> back;
  std::vector<std::pair<uint32_t, size_t>> stack{{cfg.entry, 0}};
  color[cfg.entry] = kGrey;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next == succ[node].size()) {
      color[node] = kBlack;
      stack.pop_back();
      continue;
    }
    uint32_t to = succ[node][next++];
    if (color[to] == kGrey) {
      back.insert({node, to});
    } else if (color[to] == kWhite) {
      color[to] = kGrey;
      stack.push_back({to, 0});
    }
  }
  return back;
}

struct SyscallInfo {
  size_t svc_index;
  size_t movi_index;
  SyscallNo number;
  bool drop_movi;
};

std::vector<SyscallInfo> analyze_syscalls(const BasicBlock& b) {
  std::vector<SyscallInfo> out;
  for (size_t i = 0; i < b.instructions.size(); ++i) {
    if (b.instructions[i].op != Opcode::kSvc) continue;
    std::optional<size_t> def;
    for (size_t j = i; j-- > 0;) {
      if (writes_reg(b.instructions[j], kSyscallReg)) {
        def = j;
        break;
      }
    }
    const std::string where = "block '" + b.label + "', instruction " + std::to_string(i);
    if (!def)
      throw Error(ErrorCode::kDynamicSyscallNumber,
                  where + ": no constant syscall number in the same block");
    const Instruction& d = b.instructions[*def];
    if (d.op != Opcode::kMovi || !d.label.empty())
      throw Error(ErrorCode::kDynamicSyscallNumber,
                  where + ": syscall number comes from '" + print_instruction(d) + "'");
    if (d.imm > 0xFFFFFFFFull)
      throw Error(ErrorCode::kUnknownSyscall, where + ": syscall number out of range");
    bool read_between = false;
    for (size_t j = *def + 1; j < i; ++j)
      read_between |= reads_reg(b.instructions[j], kSyscallReg);
    out.push_back({i, *def, static_cast<SyscallNo>(d.imm), !read_between});
  }
  // A MOVI shared by two SVCs is read by the first one and so is kept.
  return out;
}

Instruction make(Opcode op, uint64_t imm = 0) {
  Instruction i;
  i.op = op;
  i.imm = imm;
  return i;
}

struct PendingSlot {
  uint32_t block;  // output block index
  uint32_t insn;   // index of PATCH_SLOT within the block
  SlotKind kind;
  uint32_t target_orig;  // merge target, original block index
  SyscallNo number;
};

}  // namespace

InstrumentResult instrument(const Program& program, const InstrumentOptions& options) {
  check_reserved(program);
  const Cfg cfg = build_cfg(program);
  const size_t n = program.blocks.size();
  const auto back = back_edges(cfg, n);

  std::vector<uint32_t> canonical(n, kNone);
  std::vector<std::optional<uint32_t>> inblock(n), taken_tramp(n), fall_tramp(n);
  auto name = [&](uint32_t b) { return "'" + program.blocks[b].label + "'"; };

  for (uint32_t x : cfg.nodes) {
    const auto ins = cfg.in_edges(x);
    std::set<uint32_t> forced;
    for (const auto& e : ins)
      if (e.kind == EdgeKind::kReturn || e.kind == EdgeKind::kIndirect) forced.insert(e.from);
    uint32_t canon = kNone;
    if (x == cfg.entry) {
      if (!forced.empty())
        throw Error(ErrorCode::kUnjustifiableMerge,
                    "entry block " + name(x) + " is reached by a return or indirect branch");
    } else if (forced.size() > 1) {
      std::string who;
      for (uint32_t f : forced) who += (who.empty() ? "" : ", ") + name(f);
      throw Error(ErrorCode::kUnjustifiableMerge,
                  "block " + name(x) + " is reached by returns or indirect branches from " + who);
    } else if (forced.size() == 1) {
      canon = *forced.begin();
      if (back.count({canon, x}))
        throw Error(ErrorCode::kUnjustifiableMerge,
                    "block " + name(x) + " is reached by a loop-closing return or indirect branch");
    } else {
      for (const auto& e : ins)
        if (!back.count({e.from, x})) canon = std::min(canon, e.from);
    }
    canonical[x] = canon;
    for (const auto& e : ins) {
      if (e.from == canon) continue;
      if (program.blocks[e.from].terminator() == Terminator::kCondBranch) {
        (e.kind == EdgeKind::kTaken ? taken_tramp : fall_tramp)[e.from] = x;
      } else {
        inblock[e.from] = x;
      }
    }
  }

  InstrumentResult result;
  InstrumentedProgram& ip = result.instrumented;
  Program& out = ip.program;
  out.data = program.data;
  ip.warnings = cfg.warnings;

  std::set<std::string> used;
  for (const auto& b : program.blocks) used.insert(b.label);
  uint32_t tramp_counter = 0;
  auto fresh_label = [&] {
    std::string l;
    do {
      l = "__sfp_j" + std::to_string(tramp_counter++);
    } while (used.count(l));
    used.insert(l);
    return l;
  };

  std::vector<uint32_t> new_index(n, kNone);
  std::vector<std::string> taken_label(n);
  for (uint32_t b = 0; b < n; ++b)
    if (taken_tramp[b]) taken_label[b] = fresh_label();

  std::vector<PendingSlot> pending;
  std::vector<uint32_t> trampoline_source;  // output block -> original source
  // original pc -> (output block, index)
  std::vector<std::pair<uint32_t, uint32_t>> placed(program.code_size(), {kNone, kNone});
  struct SitePos {
    uint32_t block, insn;
    SyscallNo number;
    uint32_t slot;  // index into pending, or kNone
  };
  std::vector<SitePos> sites;

  auto emit_slot = [&](BasicBlock& nb, SlotKind kind, uint32_t target, SyscallNo number) {
    pending.push_back({static_cast<uint32_t>(out.blocks.size()),
                       static_cast<uint32_t>(nb.instructions.size()), kind, target, number});
    nb.instructions.push_back(make(Opcode::kPatchSlot));
    nb.instructions.push_back(make(Opcode::kStateXor));
  };

  for (uint32_t b = 0; b < n; ++b) {
    if (!cfg.contains(b)) continue;
    const BasicBlock& src = program.blocks[b];
    const Pc base = program.block_start(b);
    const auto syscalls = analyze_syscalls(src);
    std::set<size_t> dropped;
    std::map<size_t, const SyscallInfo*> by_svc;
    for (const auto& s : syscalls) {
      by_svc[s.svc_index] = &s;
      if (options.syscall_linking && s.drop_movi) dropped.insert(s.movi_index);
    }

    BasicBlock nb{src.label, {}};
    const uint32_t self = static_cast<uint32_t>(out.blocks.size());
    new_index[b] = self;
    nb.instructions.push_back(make(Opcode::kUpdate, src.tag()));
    const size_t term = src.terminator_index();
    for (size_t i = 0; i < src.instructions.size(); ++i) {
      if (dropped.count(i)) continue;
      Instruction insn = src.instructions[i];
      if (i == term && inblock[b]) emit_slot(nb, SlotKind::kMerge, *inblock[b], kNone);
      if (insn.op == Opcode::kSvc) {
        const SyscallInfo& s = *by_svc.at(i);
        uint32_t slot = kNone;
        if (options.syscall_linking) {
          slot = static_cast<uint32_t>(pending.size());
          emit_slot(nb, SlotKind::kSyscall, kNone, s.number);
          Instruction movi = make(Opcode::kMovi, s.number);
          movi.rd = kSyscallReg;
          if (s.drop_movi)
            placed[base + s.movi_index] = {self, static_cast<uint32_t>(nb.instructions.size())};
          nb.instructions.push_back(movi);
        }
        sites.push_back({self, static_cast<uint32_t>(nb.instructions.size()), s.number, slot});
      }
      if (insn.op == Opcode::kBrCond && taken_tramp[b]) insn.label = taken_label[b];
      placed[base + i] = {self, static_cast<uint32_t>(nb.instructions.size())};
      nb.instructions.push_back(std::move(insn));
    }
    if (term == src.instructions.size() && inblock[b])
      emit_slot(nb, SlotKind::kMerge, *inblock[b], kNone);
    out.blocks.push_back(std::move(nb));
    trampoline_source.push_back(kNone);

    if (fall_tramp[b]) {
      BasicBlock t{fresh_label(), {}};
      emit_slot(t, SlotKind::kMerge, *fall_tramp[b], kNone);
      out.blocks.push_back(std::move(t));
      trampoline_source.push_back(b);
    }
  }
  for (uint32_t b = 0; b < n; ++b) {
    if (!taken_tramp[b]) continue;
    BasicBlock t{taken_label[b], {}};
    emit_slot(t, SlotKind::kMerge, *taken_tramp[b], kNone);
    Instruction br = make(Opcode::kBr);
    br.label = program.blocks[*taken_tramp[b]].label;
    t.instructions.push_back(br);
    out.blocks.push_back(std::move(t));
    trampoline_source.push_back(b);
  }

  out.entry = new_index[cfg.entry];
  for (const auto& [src, targets] : program.indirect_targets)
    if (auto b = program.find_block(src); b && cfg.contains(*b)) out.indirect_targets[src] = targets;

  // Label operands must still resolve once unreachable blocks are gone.
  for (const auto& b : out.blocks)
    for (const auto& i : b.instructions)
      if (!i.label.empty() && !out.find_block(i.label))
        throw Error(ErrorCode::kUndefinedLabel, "block '" + b.label + "' refers to '" + i.label +
                                                    "', which is unreachable and was removed");

  // Layout is final; materialise pcs.
  std::vector<Pc> start(out.blocks.size());
  for (uint32_t b = 0; b < out.blocks.size(); ++b) start[b] = out.block_start(b);

  for (uint32_t id = 0; id < pending.size(); ++id) {
    const auto& p = pending[id];
    PatchSlot s;
    s.id = id;
    s.kind = p.kind;
    s.pc = start[p.block] + p.insn;
    s.site_block = p.block;
    if (p.kind == SlotKind::kMerge) s.target_block = new_index[p.target_orig];
    else s.syscall_no = p.number;
    ip.slots.push_back(s);
  }

  ip.pc_map.assign(program.code_size(), kNone);
  for (Pc pc = 0; pc < placed.size(); ++pc)
    if (placed[pc].first != kNone) ip.pc_map[pc] = start[placed[pc].first] + placed[pc].second;

  CfMetadata& meta = result.metadata;
  meta.syscall_linking = options.syscall_linking;
  meta.entry_block = out.entry;
  meta.code_size = out.code_size();
  for (uint32_t b = 0; b < out.blocks.size(); ++b) {
    BlockMeta m;
    m.tag = out.blocks[b].tag();
    m.start = start[b];
    m.length = static_cast<uint32_t>(out.blocks[b].instructions.size());
    m.trampoline = trampoline_source[b] != kNone;
    m.has_update = !m.trampoline;
    if (m.trampoline) {
      m.canonical_pred = new_index[trampoline_source[b]];
    } else {
      // Recover the original index through the label.
      uint32_t orig = program.block_index(out.blocks[b].label);
      if (canonical[orig] != kNone) m.canonical_pred = new_index[canonical[orig]];
    }
    meta.blocks.push_back(m);
  }
  meta.edges = build_cfg(out).edges;
  meta.slots = ip.slots;
  for (const auto& s : sites)
    meta.syscall_sites.push_back({start[s.block] + s.insn, s.number, s.slot});

  if (auto diags = validate_metadata(ip, meta); !diags.empty())
    throw Error(ErrorCode::kBadMetadata, "internal: " + diags.front().kind + ": " + diags.front().message);
  return result;
}

std::vector<Diagnostic> validate_metadata(const InstrumentedProgram& instrumented,
                                          const CfMetadata& meta) {
  std::vector<Diagnostic> d;
  auto diag = [&](std::string kind, std::string msg) { d.push_back({std::move(kind), std::move(msg)}); };
  const Program& p = instrumented.program;
  const auto flat = p.flatten();
  const Pc size = static_cast<Pc>(flat.size());

  if (meta.code_size != size)
    diag("BlockMismatch", "code size " + std::to_string(meta.code_size) + " != " + std::to_string(size));
  if (meta.blocks.size() != p.blocks.size()) {
    diag("BlockMismatch", "metadata lists " + std::to_string(meta.blocks.size()) + " blocks, code has " +
                              std::to_string(p.blocks.size()));
    return d;
  }
  if (meta.entry_block != p.entry) diag("BlockMismatch", "entry block differs");

  const auto nblocks = static_cast<uint32_t>(p.blocks.size());
  for (uint32_t b = 0; b < nblocks; ++b) {
    const auto& m = meta.blocks[b];
    const std::string what = "block " + std::to_string(b) + " ('" + p.blocks[b].label + "')";
    if (m.start != p.block_start(b) || m.length != p.blocks[b].instructions.size())
      diag("BlockMismatch", what + " extent differs from the code");
    else if (m.tag != p.blocks[b].tag())
      diag("BlockMismatch", what + " tag differs");
    else if (m.has_update &&
             (flat[m.start].op != Opcode::kUpdate || flat[m.start].imm != m.tag))
      diag("BlockMismatch", what + " does not start with its UPDATE");
    if (m.canonical_pred == kNone ? b != meta.entry_block : m.canonical_pred >= nblocks)
      diag("MergeMismatch", what + " has an invalid canonical predecessor");
  }

  if (meta.edges != build_cfg(p).edges) diag("EdgeMismatch", "CFG edges differ from the code");

  std::map<uint32_t, const PatchSlot*> by_id;
  std::set<Pc> slot_pcs;
  for (const auto& s : meta.slots) {
    const std::string what = "slot " + std::to_string(s.id);
    if (!by_id.emplace(s.id, &s).second) diag("SlotMismatch", what + " is listed twice");
    slot_pcs.insert(s.pc);
    if (s.pc + 1 >= size || flat[s.pc].op != Opcode::kPatchSlot || flat[s.pc + 1].op != Opcode::kStateXor)
      diag("SlotMismatch", what + " at pc " + std::to_string(s.pc) + " is not a PATCH_SLOT/STATE_XOR pair");
    if (s.site_block >= nblocks || s.pc < meta.blocks[s.site_block].start ||
        s.pc + 1 >= meta.blocks[s.site_block].start + meta.blocks[s.site_block].length)
      diag("SlotMismatch", what + " lies outside its site block");
    if (s.kind == SlotKind::kMerge && s.target_block >= nblocks)
      diag("SlotMismatch", what + " justifies a nonexistent block");
  }
  std::set<Pc> described;
  for (const auto& s : instrumented.slots) {
    described.insert(s.pc);
    auto it = by_id.find(s.id);
    if (it == by_id.end())
      diag("SlotMismatch", "slot " + std::to_string(s.id) + " is missing from the metadata");
    else if (!(*it->second == s))
      diag("SlotMismatch", "slot " + std::to_string(s.id) + " differs from the instrumented program");
  }
  for (Pc pc = 0; pc < size; ++pc)
    if (flat[pc].op == Opcode::kPatchSlot && !slot_pcs.count(pc) && !described.count(pc))
      diag("SlotMismatch", "PATCH_SLOT at pc " + std::to_string(pc) + " has no slot descriptor");

  std::set<Pc> site_pcs;
  for (const auto& s : meta.syscall_sites) {
    const std::string what = "syscall site at pc " + std::to_string(s.pc);
    site_pcs.insert(s.pc);
    if (s.pc >= size || flat[s.pc].op != Opcode::kSvc) {
      diag("SyscallSiteMismatch", what + " is not an SVC");
      continue;
    }
    if (!meta.syscall_linking) continue;
    if (s.slot_id == kNone) {
      diag("SyscallSiteMismatch", what + " has no first-stage slot");
      continue;
    }
    if (s.pc < 3 || flat[s.pc - 1].op != Opcode::kMovi || flat[s.pc - 1].rd != kSyscallReg ||
        flat[s.pc - 1].imm != s.number)
      diag("SyscallSiteMismatch", what + " is not preceded by MOVI w8, " + std::to_string(s.number));
    auto it = by_id.find(s.slot_id);
    if (it == by_id.end()) continue;  // already reported as a missing slot
    const PatchSlot& slot = *it->second;
    if (slot.kind != SlotKind::kSyscall || slot.syscall_no != s.number || slot.pc + 3 != s.pc)
      diag("SyscallSiteMismatch", what + " does not match slot " + std::to_string(s.slot_id));
  }
  for (Pc pc = 0; pc < size; ++pc)
    if (flat[pc].op == Opcode::kSvc && !site_pcs.count(pc))
      diag("SyscallSiteMismatch", "SVC at pc " + std::to_string(pc) + " has no syscall site");
  return d;
}

}  // namespace sfp
