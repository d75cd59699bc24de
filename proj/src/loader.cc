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

#include "sfp/loader.h"

#include <algorithm>
#include <array>
#include <cstdio>
#include <deque>
#include <random>

#include "sfp/error.h"

namespace sfp {

namespace {

std::string hex64(uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void draw_key(PaKey& key, Modifier& user, const LoadOptions& options) {
  auto draw = [&](auto& gen) {
    do {
      key.lo = gen();
      key.hi = gen();
    } while (key.is_zero());
    // The user modifier must stay distinct from the kernel and update ones.
    do {
      user.value = gen();
    } while (user == kKernelModifier || user == kBlockUpdateModifier);
  };
  if (options.seed) {
    std::mt19937_64 gen(*options.seed);
    draw(gen);
  } else {
    std::random_device rd;
    auto gen = [&rd] { return (static_cast<uint64_t>(rd()) << 32) | rd(); };
    draw(gen);
  }
}

ProcessImage base_image(const Program& program) {
  ProcessImage img;
  img.code = program.flatten();
  img.target.assign(img.code.size(), 0);
  const auto addr = program.label_addresses();
  for (size_t pc = 0; pc < img.code.size(); ++pc)
    if (!img.code[pc].label.empty()) img.target[pc] = addr.at(img.code[pc].label);
  img.entry_pc = program.block_start(program.entry);
  img.data = program.data;
  return img;
}

}  // namespace

RangeMap RangeMap::from_states(std::span<const std::optional<CfiState>> per_pc) {
  RangeMap m;
  for (Pc pc = 0; pc < per_pc.size(); ++pc) {
    if (!per_pc[pc]) continue;
    if (!m.intervals_.empty() && m.intervals_.back().end == pc &&
        m.intervals_.back().state == *per_pc[pc]) {
      ++m.intervals_.back().end;
    } else {
      m.intervals_.push_back({pc, pc + 1, *per_pc[pc]});
    }
  }
  return m;
}

std::optional<CfiState> RangeMap::find(Pc pc) const {
  auto it = std::upper_bound(intervals_.begin(), intervals_.end(), pc,
                             [](Pc p, const StateInterval& iv) { return p < iv.begin; });
  if (it == intervals_.begin()) return std::nullopt;
  --it;
  if (pc >= it->end) return std::nullopt;
  return it->state;
}

const SyscallSite* TaskStruct::site_at(Pc pc) const {
  auto it = std::lower_bound(syscall_sites.begin(), syscall_sites.end(), pc,
                             [](const SyscallSite& s, Pc p) { return s.pc < p; });
  return it != syscall_sites.end() && it->pc == pc ? &*it : nullptr;
}

CfiState lookup_expected(const TaskStruct& task, Pc pc) {
  if (auto s = task.expected.find(pc)) return *s;
  throw Error(ErrorCode::kNoExpectedState, "no expected state for pc " + std::to_string(pc));
}

ExpectedStates compute_expected_states(const CfMetadata& meta, const PaKey& key, Modifier user,
                                       Modifier kernel) {
  const size_t nblocks = meta.blocks.size();
  std::vector<uint32_t> xor_slot(meta.code_size, kNone);  // STATE_XOR pc -> slot id
  std::vector<const SyscallSite*> site(meta.code_size, nullptr);
  uint32_t max_id = 0;
  for (const auto& s : meta.slots) {
    if (s.pc + 1 >= meta.code_size) throw Error(ErrorCode::kBadMetadata, "slot outside the code");
    xor_slot[s.pc + 1] = s.id;
    max_id = std::max(max_id, s.id + 1);
  }
  for (const auto& s : meta.syscall_sites) {
    if (s.pc >= meta.code_size) throw Error(ErrorCode::kBadMetadata, "syscall site outside the code");
    site[s.pc] = &s;
  }
  std::vector<const PatchSlot*> slot_by_id(max_id, nullptr);
  for (const auto& s : meta.slots) slot_by_id[s.id] = &s;

  // Both patch tables are computed once per load.
  std::array<uint64_t, kSyscallCount> ulink{}, klink{};
  std::array<bool, kSyscallCount> have{};
  auto ensure = [&](SyscallNo n) {
    if (n >= kSyscallCount) compute_syscall_patch(key, n, user);  // throws
    if (!have[n]) {
      ulink[n] = compute_syscall_patch(key, n, user).link_value();
      klink[n] = compute_syscall_patch(key, n, kernel).link_value();
      have[n] = true;
    }
  };

  ExpectedStates out;
  out.after.assign(meta.code_size, std::nullopt);
  out.block_entry.assign(nblocks, CfiState{});
  out.block_exit.assign(nblocks, CfiState{});
  out.slot_values.assign(max_id, 0);
  std::vector<bool> known(nblocks, false);

  // final_pass: merge slots use the real canonical entry state of their
  // target and every pc gets its state recorded.
  auto walk = [&](uint32_t b, bool final_pass) {
    const BlockMeta& bm = meta.blocks[b];
    CfiState s = out.block_entry[b];
    for (Pc pc = bm.start; pc < bm.start + bm.length; ++pc) {
      if (pc == bm.start && bm.has_update) s = block_update(s, bm.tag, key);
      if (uint32_t id = xor_slot[pc]; id != kNone) {
        const PatchSlot& slot = *slot_by_id[id];
        uint64_t v = 0;
        if (slot.kind == SlotKind::kSyscall) {
          ensure(slot.syscall_no);
          v = ulink[slot.syscall_no];
        } else if (final_pass) {
          if (slot.target_block >= nblocks || !known[slot.target_block])
            throw Error(ErrorCode::kBadMetadata, "merge slot " + std::to_string(id) + " has no target state");
          v = derive_edge_patch(s, out.block_entry[slot.target_block]).value;
        }
        if (final_pass) out.slot_values[id] = v;
        s = apply_patch(s, v);
      }
      if (final_pass) out.after[pc] = s;
      if (site[pc] && meta.syscall_linking) {
        ensure(site[pc]->number);
        s = clear_syscall_residue(apply_patch(s, klink[site[pc]->number]));
      }
    }
    out.block_exit[b] = s;
  };

  std::vector<std::vector<uint32_t>> children(nblocks);
  for (uint32_t b = 0; b < nblocks; ++b) {
    uint32_t p = meta.blocks[b].canonical_pred;
    if (p == kNone) {
      if (b != meta.entry_block) throw Error(ErrorCode::kBadMetadata, "block without canonical predecessor");
    } else if (p >= nblocks) {
      throw Error(ErrorCode::kBadMetadata, "canonical predecessor out of range");
    } else {
      children[p].push_back(b);
    }
  }
  if (meta.entry_block >= nblocks) throw Error(ErrorCode::kBadMetadata, "entry block out of range");

  std::deque<uint32_t> queue{meta.entry_block};
  known[meta.entry_block] = true;  // initial state 0
  std::vector<uint32_t> order;
  while (!queue.empty()) {
    uint32_t b = queue.front();
    queue.pop_front();
    order.push_back(b);
    walk(b, false);
    for (uint32_t c : children[b]) {
      out.block_entry[c] = out.block_exit[b];
      known[c] = true;
      queue.push_back(c);
    }
  }
  if (order.size() != nblocks)
    throw Error(ErrorCode::kBadMetadata, "canonical predecessors do not form a tree");
  for (uint32_t b : order) walk(b, true);

  for (const auto& e : meta.edges) {
    if (out.block_exit[e.from] != out.block_entry[e.to])
      throw Error(ErrorCode::kInconsistentMerge,
                  "state leaving block " + std::to_string(e.from) + " differs from the entry state of block " +
                      std::to_string(e.to));
  }
  return out;
}

Loader::Loader(InstrumentedProgram instrumented, CfMetadata meta)
    : instrumented_(std::move(instrumented)), meta_(std::move(meta)) {
  if (auto diags = validate_metadata(instrumented_, meta_); !diags.empty())
    throw Error(ErrorCode::kBadMetadata, diags.front().kind + ": " + diags.front().message);
  base_ = base_image(instrumented_.program);
  base_.task.instrumented = true;
  base_.task.syscall_linking = meta_.syscall_linking;
  base_.task.syscall_sites = meta_.syscall_sites;
  std::sort(base_.task.syscall_sites.begin(), base_.task.syscall_sites.end(),
            [](const SyscallSite& a, const SyscallSite& b) { return a.pc < b.pc; });
}

ProcessImage Loader::load(const LoadOptions& options) const {
  ProcessImage img = base_;
  TaskStruct& task = img.task;
  draw_key(task.key, task.user_modifier, options);
  task.kernel_modifier = options.equal_modifiers ? task.user_modifier : kKernelModifier;
  task.seeded = options.seed.has_value();

  ExpectedStates states = compute_expected_states(meta_, task.key, task.user_modifier, task.kernel_modifier);
  for (const auto& slot : meta_.slots) {
    uint64_t v = states.slot_values[slot.id];
    img.code[slot.pc].imm = v;
    img.zero_patch_count += v == 0;
  }
  task.expected = RangeMap::from_states(states.after);
  return img;
}

ProcessImage load(const InstrumentedProgram& instrumented, const CfMetadata& meta,
                  const LoadOptions& options) {
  return Loader(instrumented, meta).load(options);
}

ProcessImage load_plain(const Program& program) {
  ProcessImage img = base_image(program);
  for (const auto& insn : img.code)
    if (insn.op == Opcode::kPatchSlot || insn.op == Opcode::kStateXor || insn.op == Opcode::kUpdate)
      throw Error(ErrorCode::kBadFormat, "instrumented code needs its metadata to load");
  return img;
}

std::string redact_state(CfiState state) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (int i = 0; i < 8; ++i) {
    h ^= (state.value >> (8 * i)) & 0xff;
    h *= 0x100000001b3ull;
  }
  char buf[12];
  std::snprintf(buf, sizeof buf, "h:%08x", static_cast<unsigned>(h >> 32));
  return buf;
}

nlohmann::json rangemap_to_json(const RangeMap& map, bool unredacted) {
  nlohmann::json j;
  j["redacted"] = !unredacted;
  j["intervals"] = nlohmann::json::array();
  for (const auto& iv : map.intervals())
    j["intervals"].push_back({{"begin", iv.begin},
                              {"end", iv.end},
                              {"state", unredacted ? hex64(iv.state.value) : redact_state(iv.state)}});
  return j;
}

}  // namespace sfp
