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

#include <gtest/gtest.h>

#include <map>
#include <set>

#include "sfp/cfg.h"
#include "sfp/error.h"
#include "sfp/metadata.h"
#include "test_util.h"

namespace sfp {
namespace {

using testing::corpus;
using testing::fixture;
using testing::read_text;
using testing::source_path;

ErrorCode instrument_error(const std::string& text) {
  try {
    instrument(parse_program(text));
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "instrumented without error";
  return ErrorCode::kConfig;
}

size_t count_op(const Program& p, Opcode op) {
  size_t n = 0;
  for (const auto& i : p.flatten()) n += i.op == op;
  return n;
}

size_t count_kind(const std::vector<PatchSlot>& slots, SlotKind kind) {
  size_t n = 0;
  for (const auto& s : slots) n += s.kind == kind;
  return n;
}

// Expected merge-slot count from the CFG alone: every distinct predecessor
// other than the canonical one needs a slot; the entry block has no static
// predecessor, so all of its incoming edges need one.
size_t oracle_merge_slots(const Program& p) {
  const Cfg g = build_cfg(p);
  size_t n = 0;
  for (uint32_t x : g.nodes) {
    std::set<uint32_t> preds;
    for (const auto& e : g.in_edges(x)) preds.insert(e.from);
    if (preds.empty()) continue;
    n += preds.size() - (x == g.entry ? 0 : 1);
  }
  return n;
}

TEST(Instrument, StraightLineNoSyscalls) {
  const auto r = instrument(parse_program("entry:\n MOVI r1, 1\n MOVI r2, 2\n HALT\n"));
  const auto& code = r.instrumented.program.blocks[0].instructions;
  ASSERT_EQ(code.size(), 4u);
  EXPECT_EQ(code[0].op, Opcode::kUpdate);
  EXPECT_EQ(code[0].imm, label_tag("entry"));
  EXPECT_EQ(count_op(r.instrumented.program, Opcode::kUpdate), 1u);
  EXPECT_TRUE(r.instrumented.slots.empty());
  EXPECT_TRUE(r.metadata.slots.empty());
}

TEST(Instrument, DiamondHasOneMergeSlot) {
  const Program p = fixture("diamond4");
  const auto r = instrument(p);
  ASSERT_EQ(r.instrumented.slots.size(), 1u);
  const PatchSlot& s = r.instrumented.slots[0];
  EXPECT_EQ(s.kind, SlotKind::kMerge);
  const Program& ip = r.instrumented.program;
  EXPECT_EQ(ip.blocks[s.target_block].label, "join");
  // Predecessors of join are then_arm (1) and else_arm (2); the smaller
  // index is canonical so the slot sits on else_arm's edge.
  EXPECT_EQ(ip.blocks[s.site_block].label, "else_arm");
  EXPECT_EQ(r.metadata.blocks[ip.block_index("join")].canonical_pred, ip.block_index("then_arm"));
  EXPECT_EQ(count_op(ip, Opcode::kUpdate), 4u);
}

TEST(Instrument, Listing2Sequence) {
  const Program p = fixture("straight3");
  const auto r = instrument(p);
  const auto code = r.instrumented.program.flatten();
  size_t svcs = 0;
  for (size_t pc = 0; pc < code.size(); ++pc) {
    if (code[pc].op != Opcode::kSvc) continue;
    ++svcs;
    ASSERT_GE(pc, 3u);
    EXPECT_EQ(code[pc - 3].op, Opcode::kPatchSlot);
    EXPECT_EQ(code[pc - 3].imm, 0u);
    EXPECT_EQ(code[pc - 2].op, Opcode::kStateXor);
    EXPECT_EQ(code[pc - 1].op, Opcode::kMovi);
    EXPECT_EQ(code[pc - 1].rd, kSyscallReg);
    EXPECT_EQ(code[pc - 1].imm, 1u);
  }
  EXPECT_EQ(svcs, 1u);
}

TEST(Instrument, SequenceOrderOnCorpus) {
  for (const auto& [name, p] : corpus()) {
    const auto r = instrument(p);
    const auto code = r.instrumented.program.flatten();
    for (const auto& site : r.metadata.syscall_sites) {
      ASSERT_EQ(code[site.pc].op, Opcode::kSvc) << name;
      EXPECT_EQ(code[site.pc - 3].op, Opcode::kPatchSlot) << name;
      EXPECT_EQ(code[site.pc - 2].op, Opcode::kStateXor) << name;
      EXPECT_EQ(code[site.pc - 1].op, Opcode::kMovi) << name;
      EXPECT_EQ(code[site.pc - 1].imm, site.number) << name;
    }
  }
}

TEST(Instrument, AllSlotImmediatesZero) {
  for (const auto& [name, p] : corpus()) {
    const auto r = instrument(p);
    for (const auto& i : r.instrumented.program.flatten()) {
      if (i.op == Opcode::kPatchSlot) {
        EXPECT_EQ(i.imm, 0u) << name;
      }
    }
  }
}

TEST(Instrument, SlotCompleteness) {
  for (const auto& [name, p] : corpus()) {
    const auto r = instrument(p);
    EXPECT_EQ(count_kind(r.metadata.slots, SlotKind::kSyscall), count_op(p, Opcode::kSvc)) << name;
    EXPECT_EQ(count_kind(r.metadata.slots, SlotKind::kMerge), oracle_merge_slots(p)) << name;
    EXPECT_EQ(r.metadata.syscall_sites.size(), count_op(p, Opcode::kSvc)) << name;
    EXPECT_EQ(count_op(r.instrumented.program, Opcode::kPatchSlot), r.metadata.slots.size()) << name;
    EXPECT_EQ(count_op(r.instrumented.program, Opcode::kStateXor), r.metadata.slots.size()) << name;
  }
}

TEST(Instrument, NoChecksEmitted) {
  // The instrumented ISA has no compare-to-expected instruction at all;
  // the only additions are the three state opcodes and trampoline jumps.
  for (const auto& [name, p] : corpus()) {
    const auto r = instrument(p);
    std::map<Opcode, size_t> before, after;
    for (const auto& i : p.flatten()) ++before[i.op];
    for (const auto& i : r.instrumented.program.flatten()) ++after[i.op];
    for (const auto& [op, n] : after) {
      if (op == Opcode::kUpdate || op == Opcode::kPatchSlot || op == Opcode::kStateXor || op == Opcode::kBr ||
          op == Opcode::kMovi)
        continue;
      EXPECT_EQ(n, before[op]) << name << " " << opcode_name(op);
    }
  }
}

TEST(Instrument, CfiOnly) {
  const auto r = instrument(fixture("straight3"), {.syscall_linking = false});
  EXPECT_FALSE(r.metadata.syscall_linking);
  EXPECT_EQ(count_kind(r.metadata.slots, SlotKind::kSyscall), 0u);
  ASSERT_EQ(r.metadata.syscall_sites.size(), 1u);
  EXPECT_EQ(r.metadata.syscall_sites[0].slot_id, kNone);
  EXPECT_EQ(r.metadata.syscall_sites[0].number, 1u);
  EXPECT_TRUE(validate_metadata(r.instrumented, r.metadata).empty());
}

TEST(Instrument, LoopGetsBackEdgeSlot) {
  const auto r = instrument(parse_program(
      "entry:\n MOVI r1, 3\nhead:\n MOVI r2, 1\n XOR r1, r1, r2\n BRCOND r1, head\nout:\n HALT\n"));
  ASSERT_EQ(count_kind(r.metadata.slots, SlotKind::kMerge), 1u);
  const auto& s = r.metadata.slots[0];
  EXPECT_EQ(r.instrumented.program.blocks[s.target_block].label, "head");
}

TEST(Instrument, Errors) {
  EXPECT_EQ(instrument_error(read_text(source_path("tests/fixtures/dynamic_syscall.sasm"))),
            ErrorCode::kDynamicSyscallNumber);
  EXPECT_EQ(instrument_error("a:\n MOVI r8, 1\n MOVI r8, 2\n ADD r8, r8, r1\n SVC\n HALT\n"),
            ErrorCode::kDynamicSyscallNumber);
  EXPECT_EQ(instrument_error("a:\n SVC\n HALT\n"), ErrorCode::kDynamicSyscallNumber);
  EXPECT_EQ(instrument_error("a:\n MOVI r28, 1\n HALT\n"), ErrorCode::kReservedRegister);
  EXPECT_EQ(instrument_error("a:\n ADD r1, r15, r2\n HALT\n"), ErrorCode::kReservedRegister);
  EXPECT_EQ(instrument_error("a:\n STATE_XOR\n HALT\n"), ErrorCode::kReservedRegister);
  // Two returns into the same block cannot both be canonical.
  EXPECT_EQ(instrument_error("main:\n CALL f\nafter:\n HALT\n"
                             "f:\n BRCOND r1, f2\nf1:\n RET\nf2:\n RET\n"),
            ErrorCode::kUnjustifiableMerge);
}

TEST(Instrument, DominatingMoviAcrossUnrelatedInstructions) {
  const auto r = instrument(parse_program("a:\n MOVI r8, 2\n MOVI r0, 1\n MOVI r2, 0\n SVC\n HALT\n"));
  ASSERT_EQ(r.metadata.syscall_sites.size(), 1u);
  EXPECT_EQ(r.metadata.syscall_sites[0].number, 2u);
}

TEST(Instrument, Deterministic) {
  for (const auto& [name, p] : corpus()) {
    const auto a = instrument(p), b = instrument(p);
    EXPECT_EQ(a.instrumented.program, b.instrumented.program) << name;
    EXPECT_EQ(a.metadata, b.metadata) << name;
    EXPECT_EQ(write_sfp(a.instrumented.program, a.metadata), write_sfp(b.instrumented.program, b.metadata)) << name;
  }
}

TEST(Validate, CleanOutputHasNoDiagnostics) {
  for (const auto& [name, p] : corpus()) {
    const auto r = instrument(p);
    const auto d = validate_metadata(r.instrumented, r.metadata);
    EXPECT_TRUE(d.empty()) << name << ": " << (d.empty() ? "" : d[0].message);
  }
}

TEST(Validate, DeletedSlotNamed) {
  auto r = instrument(fixture("diamond4"));
  ASSERT_EQ(r.metadata.slots.size(), 1u);
  const uint32_t id = r.metadata.slots[0].id;
  r.metadata.slots.clear();
  const auto d = validate_metadata(r.instrumented, r.metadata);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_NE(d[0].message.find("slot " + std::to_string(id)), std::string::npos) << d[0].message;
}

TEST(Validate, SyscallSiteOffByOne) {
  auto r = instrument(fixture("straight3"));
  ASSERT_EQ(r.metadata.syscall_sites.size(), 1u);
  r.metadata.syscall_sites[0].pc += 1;
  const auto d = validate_metadata(r.instrumented, r.metadata);
  ASSERT_FALSE(d.empty());
  bool found = false;
  for (const auto& x : d) found |= x.kind == "SyscallSiteMismatch";
  EXPECT_TRUE(found);
}

TEST(Metadata, BinaryRoundTrip) {
  for (const auto& [name, p] : corpus()) {
    for (bool linking : {true, false}) {
      const auto r = instrument(p, {.syscall_linking = linking});
      EXPECT_EQ(decode_metadata(encode_metadata(r.metadata)), r.metadata) << name;
      const std::string file = write_sfp(r.instrumented.program, r.metadata);
      ASSERT_TRUE(has_metadata_section(file));
      const auto [prog, meta] = read_sfp(file);
      EXPECT_EQ(prog, r.instrumented.program) << name;
      EXPECT_EQ(meta, r.metadata) << name;
    }
  }
  EXPECT_FALSE(has_metadata_section(read_text(source_path("corpus/diamond.sasm"))));
}

TEST(Metadata, RejectsDamage) {
  const auto r = instrument(fixture("straight3"));
  const auto bytes = encode_metadata(r.metadata);
  auto expect_bad = [](std::vector<uint8_t> b) {
    try {
      decode_metadata(b);
      ADD_FAILURE() << "decoded damaged metadata";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kBadFormat);
    }
  };
  auto bad_magic = bytes;
  bad_magic[0] ^= 1;
  expect_bad(bad_magic);
  auto bad_version = bytes;
  bad_version[4] = 9;
  expect_bad(bad_version);
  auto flipped = bytes;
  flipped.back() ^= 0x40;
  expect_bad(flipped);
  expect_bad(std::vector<uint8_t>(bytes.begin(), bytes.end() - 3));
  expect_bad({});
}

TEST(Metadata, HeaderLayout) {
  const auto r = instrument(fixture("diamond4"));
  const auto b = encode_metadata(r.metadata);
  ASSERT_GE(b.size(), 16u);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "SFPM");
  EXPECT_EQ(b[4] | (b[5] << 8), CfMetadata::kVersion);
  EXPECT_EQ(b[6] & 1, 1);
  const uint32_t len = b[8] | (b[9] << 8) | (b[10] << 16) | (uint32_t(b[11]) << 24);
  EXPECT_EQ(len + 16, b.size());
}

class Golden : public ::testing::TestWithParam<const char*> {};

TEST_P(Golden, MatchesFrozenFiles) {
  const std::string name = GetParam();
  const auto r = instrument(fixture(name));
  const std::string dir = source_path("tests/golden/");
  EXPECT_EQ(print_program(r.instrumented.program), read_text(dir + name + ".instrumented.sasm"));
  EXPECT_EQ(metadata_to_json(r.metadata).dump(2) + "\n", read_text(dir + name + ".metadata.json"));
  EXPECT_EQ(write_sfp(r.instrumented.program, r.metadata), read_text(dir + name + ".sfp"));
}

INSTANTIATE_TEST_SUITE_P(Fixtures, Golden, ::testing::Values("diamond4", "straight3"));

}  // namespace
}  // namespace sfp
