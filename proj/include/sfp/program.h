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

// Toy ISA and the assembly-like program text format. See
// docs/program_format.md for the grammar.

#ifndef SFP_PROGRAM_H_
#define SFP_PROGRAM_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sfp {

using Pc = uint32_t;

inline constexpr int kNumRegisters = 32;
inline constexpr uint8_t kSyscallReg = 8;  // w8
inline constexpr uint8_t kPatchReg = 15;   // x15
inline constexpr uint8_t kStateReg = 28;   // x28
inline constexpr uint8_t kLinkReg = 30;    // x30

// Numeric values double as the 4-bit opcode encoding used by the
// decode-corruption fault. 15 is not a valid opcode.
enum class Opcode : uint8_t {
  kMovi = 0,
  kAlu = 1,
  kLoad = 2,
  kStore = 3,
  kBr = 4,
  kBrCond = 5,
  kBrInd = 6,
  kCall = 7,
  kRet = 8,
  kSvc = 9,
  kPatchSlot = 10,
  kStateXor = 11,
  kUpdate = 12,
  kNop = 13,
  kHalt = 14,
};
inline constexpr int kOpcodeCount = 15;

enum class AluOp : uint8_t { kXor, kAdd, kAnd };

std::string_view opcode_name(Opcode op);
std::optional<Opcode> opcode_from_name(std::string_view name);

// Operand usage per opcode:
//   MOVI     rd, imm | rd, @label
//   ALU      rd, rs1, rs2
//   LOAD     rd, rs1, imm          rd = mem64[rs1 + imm]
//   STORE    rs2, rs1, imm         mem64[rs1 + imm] = rs2
//   BR       label
//   BRCOND   rs1, label            taken when rs1 != 0
//   BRIND    rs1
//   CALL     label                 x30 = pc + 1
//   PATCH_SLOT imm                 x15 = imm
//   STATE_XOR                      x28 ^= x15
//   UPDATE   imm (block tag)       x28 = block_update(x28, tag)
struct Instruction {
  Opcode op = Opcode::kNop;
  AluOp alu = AluOp::kAdd;
  uint8_t rd = 0;
  uint8_t rs1 = 0;
  uint8_t rs2 = 0;
  uint64_t imm = 0;
  std::string label;

  bool is_terminator() const;
  friend bool operator==(const Instruction&, const Instruction&) = default;
};

enum class Terminator {
  kFallthrough,
  kBranch,
  kCondBranch,
  kIndirect,
  kCall,
  kReturn,
  kHalt,
};

struct BasicBlock {
  std::string label;
  std::vector<Instruction> instructions;

  // Stable 64-bit identifier (FNV-1a of the label).
  uint64_t tag() const;
  Terminator terminator() const;
  // Index of the terminator instruction, or size() when falling through.
  size_t terminator_index() const;

  friend bool operator==(const BasicBlock&, const BasicBlock&) = default;
};

struct Program {
  std::vector<BasicBlock> blocks;
  uint32_t entry = 0;
  std::vector<uint8_t> data;
  // Block label of a BRIND terminator -> declared candidate targets.
  std::map<std::string, std::vector<std::string>> indirect_targets;

  std::optional<uint32_t> find_block(std::string_view label) const;
  uint32_t block_index(std::string_view label) const;  // throws
  Pc block_start(uint32_t block) const;
  Pc code_size() const;
  // Flattened instruction stream in layout order.
  std::vector<Instruction> flatten() const;
  // Label -> first pc.
  std::unordered_map<std::string, Pc> label_addresses() const;

  friend bool operator==(const Program&, const Program&) = default;
};

uint64_t label_tag(std::string_view label);

// Throws Error(kSyntax | kUndefinedLabel | kDuplicateLabel) with line numbers.
Program parse_program(std::string_view text);
std::string print_program(const Program& program);
std::string print_instruction(const Instruction& insn);

}  // namespace sfp

#endif  // SFP_PROGRAM_H_
