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

#include "sfp/program.h"

#include <array>
#include <cctype>
#include <charconv>
#include <set>
#include <sstream>

#include "sfp/error.h"

namespace sfp {

namespace {

constexpr std::array<std::string_view, kOpcodeCount> kOpcodeNames = {
    "MOVI", "ALU",  "LOAD", "STORE",      "BR",        "BRCOND", "BRIND", "CALL",
    "RET",  "SVC",  "PATCH_SLOT", "STATE_XOR", "UPDATE", "NOP",    "HALT"};

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
    s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
    s.remove_suffix(1);
  return s;
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  if (!(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_'))
    return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  return true;
}

std::vector<std::string_view> split_operands(std::string_view s) {
  std::vector<std::string_view> out;
  if (trim(s).empty()) return out;
  size_t start = 0;
  while (true) {
    size_t comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  Program run() {
    size_t pos = 0;
    while (pos <= text_.size()) {
      size_t nl = text_.find('\n', pos);
      if (nl == std::string_view::npos) nl = text_.size();
      ++line_;
      parse_line(text_.substr(pos, nl - pos));
      pos = nl + 1;
    }
    finish();
    return std::move(program_);
  }

 private:
  [[noreturn]] void fail(ErrorCode code, const std::string& msg) const {
    throw Error(code, "line " + std::to_string(line_) + ": " + msg);
  }

  void parse_line(std::string_view line) {
    if (size_t hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) return;
    if (line.front() == '.') {
      parse_directive(line);
      return;
    }
    if (size_t colon = line.find(':'); colon != std::string_view::npos) {
      std::string_view label = trim(line.substr(0, colon));
      if (!is_identifier(label)) fail(ErrorCode::kSyntax, "bad label '" + std::string(label) + "'");
      open_block(std::string(label));
      line = trim(line.substr(colon + 1));
      if (line.empty()) return;
    }
    parse_instruction(line);
  }

  void open_block(std::string label) {
    if (!program_.blocks.empty() && program_.blocks.back().instructions.empty())
      fail(ErrorCode::kSyntax, "block '" + program_.blocks.back().label + "' is empty");
    if (!labels_.insert(label).second)
      fail(ErrorCode::kDuplicateLabel, "label '" + label + "' defined twice");
    program_.blocks.push_back(BasicBlock{std::move(label), {}});
  }

  void parse_directive(std::string_view line) {
    size_t sp = line.find_first_of(" \t");
    std::string_view name = line.substr(0, sp);
    std::string_view rest = sp == std::string_view::npos ? std::string_view{} : trim(line.substr(sp));
    if (name == ".data") {
      std::istringstream in{std::string(rest)};
      std::string tok;
      while (in >> tok) {
        if (tok.size() % 2 != 0) fail(ErrorCode::kSyntax, "odd-length hex token '" + tok + "'");
        for (size_t i = 0; i < tok.size(); i += 2) {
          uint8_t byte = 0;
          auto [p, ec] = std::from_chars(tok.data() + i, tok.data() + i + 2, byte, 16);
          if (ec != std::errc() || p != tok.data() + i + 2)
            fail(ErrorCode::kSyntax, "bad hex byte in '" + tok + "'");
          program_.data.push_back(byte);
        }
      }
    } else if (name == ".indirect") {
      size_t arrow = rest.find("->");
      if (arrow == std::string_view::npos) fail(ErrorCode::kSyntax, ".indirect needs 'label -> {targets}'");
      std::string src(trim(rest.substr(0, arrow)));
      std::string_view set = trim(rest.substr(arrow + 2));
      if (set.size() < 2 || set.front() != '{' || set.back() != '}')
        fail(ErrorCode::kSyntax, ".indirect target set must be braced");
      if (!is_identifier(src)) fail(ErrorCode::kSyntax, "bad label '" + src + "'");
      std::vector<std::string> targets;
      for (std::string_view t : split_operands(set.substr(1, set.size() - 2))) {
        if (!is_identifier(t)) fail(ErrorCode::kSyntax, "bad label '" + std::string(t) + "'");
        targets.emplace_back(t);
        refs_.push_back({std::string(t), line_});
      }
      if (targets.empty()) fail(ErrorCode::kSyntax, ".indirect with empty target set");
      refs_.push_back({src, line_});
      if (!program_.indirect_targets.emplace(src, std::move(targets)).second)
        fail(ErrorCode::kSyntax, "duplicate .indirect for '" + src + "'");
      indirect_lines_[src] = line_;
    } else if (name == ".entry") {
      if (!is_identifier(rest)) fail(ErrorCode::kSyntax, ".entry needs a label");
      entry_label_ = std::string(rest);
      refs_.push_back({entry_label_, line_});
    } else {
      fail(ErrorCode::kSyntax, "unknown directive '" + std::string(name) + "'");
    }
  }

  uint8_t parse_reg(std::string_view tok) {
    if (tok.size() < 2 || (tok[0] != 'r' && tok[0] != 'R'))
      fail(ErrorCode::kSyntax, "expected register, got '" + std::string(tok) + "'");
    unsigned v = 0;
    auto [p, ec] = std::from_chars(tok.data() + 1, tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size() || v >= kNumRegisters)
      fail(ErrorCode::kSyntax, "bad register '" + std::string(tok) + "'");
    return static_cast<uint8_t>(v);
  }

  uint64_t parse_imm(std::string_view tok) {
    bool neg = false;
    std::string_view t = tok;
    if (!t.empty() && t[0] == '-') {
      neg = true;
      t.remove_prefix(1);
    }
    int base = 10;
    if (t.size() > 2 && t[0] == '0' && (t[1] == 'x' || t[1] == 'X')) {
      base = 16;
      t.remove_prefix(2);
    }
    uint64_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v, base);
    if (t.empty() || ec != std::errc() || p != t.data() + t.size())
      fail(ErrorCode::kSyntax, "bad immediate '" + std::string(tok) + "'");
    return neg ? ~v + 1 : v;
  }

  std::string parse_label_ref(std::string_view tok) {
    if (!is_identifier(tok)) fail(ErrorCode::kSyntax, "bad label '" + std::string(tok) + "'");
    refs_.push_back({std::string(tok), line_});
    return std::string(tok);
  }

  void expect_count(const std::vector<std::string_view>& ops, size_t n, std::string_view mnem) {
    if (ops.size() != n)
      fail(ErrorCode::kSyntax, std::string(mnem) + " takes " + std::to_string(n) + " operand(s)");
  }

  void parse_instruction(std::string_view line) {
    if (program_.blocks.empty()) fail(ErrorCode::kSyntax, "instruction outside a labelled block");
    BasicBlock& block = program_.blocks.back();
    if (!block.instructions.empty() && block.instructions.back().is_terminator())
      fail(ErrorCode::kSyntax, "code after a terminator must start a new labelled block");

    size_t sp = line.find_first_of(" \t");
    std::string mnem = upper(line.substr(0, sp));
    auto ops = split_operands(sp == std::string_view::npos ? std::string_view{} : line.substr(sp));

    Instruction insn;
    if (mnem == "XOR" || mnem == "ADD" || mnem == "AND") {
      expect_count(ops, 3, mnem);
      insn.op = Opcode::kAlu;
      insn.alu = mnem == "XOR" ? AluOp::kXor : mnem == "ADD" ? AluOp::kAdd : AluOp::kAnd;
      insn.rd = parse_reg(ops[0]);
      insn.rs1 = parse_reg(ops[1]);
      insn.rs2 = parse_reg(ops[2]);
      block.instructions.push_back(std::move(insn));
      return;
    }
    auto op = opcode_from_name(mnem);
    if (!op || *op == Opcode::kAlu) fail(ErrorCode::kSyntax, "unknown mnemonic '" + mnem + "'");
    insn.op = *op;
    switch (*op) {
      case Opcode::kMovi:
        expect_count(ops, 2, mnem);
        insn.rd = parse_reg(ops[0]);
        if (!ops[1].empty() && ops[1][0] == '@')
          insn.label = parse_label_ref(ops[1].substr(1));
        else
          insn.imm = parse_imm(ops[1]);
        break;
      case Opcode::kLoad:
        expect_count(ops, 3, mnem);
        insn.rd = parse_reg(ops[0]);
        insn.rs1 = parse_reg(ops[1]);
        insn.imm = parse_imm(ops[2]);
        break;
      case Opcode::kStore:
        expect_count(ops, 3, mnem);
        insn.rs2 = parse_reg(ops[0]);
        insn.rs1 = parse_reg(ops[1]);
        insn.imm = parse_imm(ops[2]);
        break;
      case Opcode::kBr:
      case Opcode::kCall:
        expect_count(ops, 1, mnem);
        insn.label = parse_label_ref(ops[0]);
        break;
      case Opcode::kBrCond:
        expect_count(ops, 2, mnem);
        insn.rs1 = parse_reg(ops[0]);
        insn.label = parse_label_ref(ops[1]);
        break;
      case Opcode::kBrInd:
        expect_count(ops, 1, mnem);
        insn.rs1 = parse_reg(ops[0]);
        break;
      case Opcode::kPatchSlot:
      case Opcode::kUpdate:
        expect_count(ops, 1, mnem);
        insn.imm = parse_imm(ops[0]);
        break;
      default:
        expect_count(ops, 0, mnem);
        break;
    }
    if (insn.op == Opcode::kBrInd) brind_lines_[block.label] = line_;
    if (insn.op == Opcode::kCall) call_lines_.push_back({block.label, line_});
    block.instructions.push_back(std::move(insn));
  }

  void finish() {
    if (program_.blocks.empty()) {
      line_ = 0;
      fail(ErrorCode::kSyntax, "program has no code");
    }
    if (program_.blocks.back().instructions.empty())
      fail(ErrorCode::kSyntax, "block '" + program_.blocks.back().label + "' is empty");
    for (const auto& [label, line] : refs_) {
      if (!labels_.count(label)) {
        line_ = line;
        fail(ErrorCode::kUndefinedLabel, "undefined label '" + label + "'");
      }
    }
    if (program_.blocks.back().terminator() == Terminator::kFallthrough ||
        program_.blocks.back().terminator() == Terminator::kCondBranch)
      fail(ErrorCode::kSyntax, "control falls off the end of the code");
    for (const auto& [label, line] : call_lines_) {
      if (label == program_.blocks.back().label) {
        line_ = line;
        fail(ErrorCode::kSyntax, "CALL in the last block has no return continuation");
      }
    }
    for (const auto& [label, line] : indirect_lines_) {
      if (!brind_lines_.count(label)) {
        line_ = line;
        fail(ErrorCode::kSyntax, ".indirect source '" + label + "' does not end in BRIND");
      }
    }
    if (!entry_label_.empty()) program_.entry = program_.block_index(entry_label_);
  }

  std::string_view text_;
  int line_ = 0;
  Program program_;
  std::set<std::string> labels_;
  std::vector<std::pair<std::string, int>> refs_;
  std::map<std::string, int> indirect_lines_;
  std::map<std::string, int> brind_lines_;
  std::vector<std::pair<std::string, int>> call_lines_;
  std::string entry_label_;
};

std::string hex(uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

}  // namespace

std::string_view opcode_name(Opcode op) {
  auto i = static_cast<size_t>(op);
  return i < kOpcodeNames.size() ? kOpcodeNames[i] : "ILLEGAL";
}

std::optional<Opcode> opcode_from_name(std::string_view name) {
  for (size_t i = 0; i < kOpcodeNames.size(); ++i)
    if (kOpcodeNames[i] == name) return static_cast<Opcode>(i);
  return std::nullopt;
}

bool Instruction::is_terminator() const {
  switch (op) {
    case Opcode::kBr:
    case Opcode::kBrCond:
    case Opcode::kBrInd:
    case Opcode::kCall:
    case Opcode::kRet:
    case Opcode::kHalt:
      return true;
    default:
      return false;
  }
}

uint64_t label_tag(std::string_view label) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : label) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t BasicBlock::tag() const { return label_tag(label); }

Terminator BasicBlock::terminator() const {
  if (instructions.empty() || !instructions.back().is_terminator())
    return Terminator::kFallthrough;
  switch (instructions.back().op) {
    case Opcode::kBr: return Terminator::kBranch;
    case Opcode::kBrCond: return Terminator::kCondBranch;
    case Opcode::kBrInd: return Terminator::kIndirect;
    case Opcode::kCall: return Terminator::kCall;
    case Opcode::kRet: return Terminator::kReturn;
    default: return Terminator::kHalt;
  }
}

size_t BasicBlock::terminator_index() const {
  return terminator() == Terminator::kFallthrough ? instructions.size()
                                                  : instructions.size() - 1;
}

std::optional<uint32_t> Program::find_block(std::string_view label) const {
  for (uint32_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].label == label) return i;
  return std::nullopt;
}

uint32_t Program::block_index(std::string_view label) const {
  if (auto i = find_block(label)) return *i;
  throw Error(ErrorCode::kUndefinedLabel, "undefined label '" + std::string(label) + "'");
}

Pc Program::block_start(uint32_t block) const {
  Pc pc = 0;
  for (uint32_t i = 0; i < block; ++i) pc += static_cast<Pc>(blocks[i].instructions.size());
  return pc;
}

Pc Program::code_size() const { return block_start(static_cast<uint32_t>(blocks.size())); }

std::vector<Instruction> Program::flatten() const {
  std::vector<Instruction> out;
  for (const auto& b : blocks) out.insert(out.end(), b.instructions.begin(), b.instructions.end());
  return out;
}

std::unordered_map<std::string, Pc> Program::label_addresses() const {
  std::unordered_map<std::string, Pc> out;
  Pc pc = 0;
  for (const auto& b : blocks) {
    out.emplace(b.label, pc);
    pc += static_cast<Pc>(b.instructions.size());
  }
  return out;
}

Program parse_program(std::string_view text) { return Parser(text).run(); }

std::string print_instruction(const Instruction& insn) {
  auto r = [](uint8_t reg) { return "r" + std::to_string(reg); };
  switch (insn.op) {
    case Opcode::kMovi: {
      std::string v;
      if (!insn.label.empty()) {
        v = "@" + insn.label;
      } else {
        auto s = static_cast<int64_t>(insn.imm);
        v = (s >= -(int64_t{1} << 31) && s < (int64_t{1} << 31)) ? std::to_string(s) : hex(insn.imm);
      }
      return "MOVI " + r(insn.rd) + ", " + v;
    }
    case Opcode::kAlu: {
      const char* m = insn.alu == AluOp::kXor ? "XOR" : insn.alu == AluOp::kAdd ? "ADD" : "AND";
      return std::string(m) + " " + r(insn.rd) + ", " + r(insn.rs1) + ", " + r(insn.rs2);
    }
    case Opcode::kLoad:
      return "LOAD " + r(insn.rd) + ", " + r(insn.rs1) + ", " + std::to_string(static_cast<int64_t>(insn.imm));
    case Opcode::kStore:
      return "STORE " + r(insn.rs2) + ", " + r(insn.rs1) + ", " + std::to_string(static_cast<int64_t>(insn.imm));
    case Opcode::kBr:
    case Opcode::kCall:
      return std::string(opcode_name(insn.op)) + " " + insn.label;
    case Opcode::kBrCond:
      return "BRCOND " + r(insn.rs1) + ", " + insn.label;
    case Opcode::kBrInd:
      return "BRIND " + r(insn.rs1);
    case Opcode::kPatchSlot:
    case Opcode::kUpdate:
      return std::string(opcode_name(insn.op)) + " " + hex(insn.imm);
    default:
      return std::string(opcode_name(insn.op));
  }
}

std::string print_program(const Program& program) {
  std::ostringstream os;
  if (program.entry != 0) os << ".entry " << program.blocks[program.entry].label << "\n";
  for (size_t i = 0; i < program.data.size(); i += 16) {
    os << ".data";
    for (size_t j = i; j < std::min(i + 16, program.data.size()); ++j) {
      static constexpr char kDigits[] = "0123456789abcdef";
      os << ' ' << kDigits[program.data[j] >> 4] << kDigits[program.data[j] & 0xf];
    }
    os << "\n";
  }
  for (const auto& [src, targets] : program.indirect_targets) {
    os << ".indirect " << src << " -> {";
    for (size_t i = 0; i < targets.size(); ++i) os << (i ? ", " : "") << targets[i];
    os << "}\n";
  }
  for (const auto& block : program.blocks) {
    os << "\n" << block.label << ":\n";
    for (const auto& insn : block.instructions) os << "    " << print_instruction(insn) << "\n";
  }
  return os.str();
}

}  // namespace sfp
