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

#include "sfp/metadata.h"

#include <zlib.h>

#include <cstdio>
#include <cstring>

#include "sfp/error.h"

namespace sfp {

namespace {

constexpr char kMagic[4] = {'S', 'F', 'P', 'M'};
constexpr size_t kHeaderSize = 16;

class Writer {
 public:
  void u8(uint8_t v) { out_.push_back(v); }
  void u16(uint16_t v) { put(v, 2); }
  void u32(uint32_t v) { put(v, 4); }
  void u64(uint64_t v) { put(v, 8); }
  std::vector<uint8_t>& bytes() { return out_; }

 private:
  void put(uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  std::vector<uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> in) : in_(in) {}
  uint8_t u8() { return static_cast<uint8_t>(get(1)); }
  uint16_t u16() { return static_cast<uint16_t>(get(2)); }
  uint32_t u32() { return static_cast<uint32_t>(get(4)); }
  uint64_t u64() { return get(8); }
  bool done() const { return pos_ == in_.size(); }

  // Guards count fields against absurd allocations.
  uint32_t count(size_t record_size) {
    uint32_t n = u32();
    if (static_cast<uint64_t>(n) * record_size > in_.size() - pos_)
      throw Error(ErrorCode::kBadFormat, "metadata record count exceeds section size");
    return n;
  }

 private:
  uint64_t get(int n) {
    if (pos_ + n > in_.size()) throw Error(ErrorCode::kBadFormat, "metadata section truncated");
    uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }
  std::span<const uint8_t> in_;
  size_t pos_ = 0;
};

uint32_t crc(std::span<const uint8_t> bytes) {
  return static_cast<uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace

const SyscallSite* CfMetadata::site_at(Pc pc) const {
  for (const auto& s : syscall_sites)
    if (s.pc == pc) return &s;
  return nullptr;
}

std::vector<uint8_t> encode_metadata(const CfMetadata& meta) {
  Writer p;
  p.u32(meta.entry_block);
  p.u32(meta.code_size);
  p.u32(static_cast<uint32_t>(meta.blocks.size()));
  for (const auto& b : meta.blocks) {
    p.u64(b.tag);
    p.u32(b.start);
    p.u32(b.length);
    p.u8(static_cast<uint8_t>((b.has_update ? 1 : 0) | (b.trampoline ? 2 : 0)));
    p.u32(b.canonical_pred);
  }
  p.u32(static_cast<uint32_t>(meta.edges.size()));
  for (const auto& e : meta.edges) {
    p.u32(e.from);
    p.u32(e.to);
    p.u8(static_cast<uint8_t>(e.kind));
  }
  p.u32(static_cast<uint32_t>(meta.slots.size()));
  for (const auto& s : meta.slots) {
    p.u32(s.id);
    p.u8(static_cast<uint8_t>(s.kind));
    p.u32(s.pc);
    p.u32(s.site_block);
    p.u32(s.target_block);
    p.u32(s.syscall_no);
  }
  p.u32(static_cast<uint32_t>(meta.syscall_sites.size()));
  for (const auto& s : meta.syscall_sites) {
    p.u32(s.pc);
    p.u32(s.number);
    p.u32(s.slot_id);
  }

  const auto& payload = p.bytes();
  Writer out;
  for (char c : kMagic) out.u8(static_cast<uint8_t>(c));
  out.u16(CfMetadata::kVersion);
  out.u16(meta.syscall_linking ? 1 : 0);
  out.u32(static_cast<uint32_t>(payload.size()));
  out.u32(crc(payload));
  out.bytes().insert(out.bytes().end(), payload.begin(), payload.end());
  return std::move(out.bytes());
}

CfMetadata decode_metadata(std::span<const uint8_t> bytes) {
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(ErrorCode::kBadFormat, "missing SFPM metadata header");
  Reader h(bytes.subspan(4, kHeaderSize - 4));
  const uint16_t version = h.u16();
  const uint16_t flags = h.u16();
  const uint32_t length = h.u32();
  const uint32_t checksum = h.u32();
  if (version != CfMetadata::kVersion)
    throw Error(ErrorCode::kBadFormat, "unsupported metadata version " + std::to_string(version));
  if (bytes.size() - kHeaderSize != length)
    throw Error(ErrorCode::kBadFormat, "metadata length field does not match section size");
  auto payload = bytes.subspan(kHeaderSize);
  if (crc(payload) != checksum) throw Error(ErrorCode::kBadFormat, "metadata checksum mismatch");

  CfMetadata meta;
  meta.syscall_linking = (flags & 1) != 0;
  Reader r(payload);
  meta.entry_block = r.u32();
  meta.code_size = r.u32();
  meta.blocks.resize(r.count(21));
  for (auto& b : meta.blocks) {
    b.tag = r.u64();
    b.start = r.u32();
    b.length = r.u32();
    uint8_t f = r.u8();
    b.has_update = f & 1;
    b.trampoline = f & 2;
    b.canonical_pred = r.u32();
  }
  meta.edges.resize(r.count(9));
  for (auto& e : meta.edges) {
    e.from = r.u32();
    e.to = r.u32();
    uint8_t kind = r.u8();
    if (kind > static_cast<uint8_t>(EdgeKind::kIndirect))
      throw Error(ErrorCode::kBadFormat, "bad edge kind");
    e.kind = static_cast<EdgeKind>(kind);
  }
  meta.slots.resize(r.count(21));
  for (auto& s : meta.slots) {
    s.id = r.u32();
    uint8_t kind = r.u8();
    if (kind > 1) throw Error(ErrorCode::kBadFormat, "bad slot kind");
    s.kind = static_cast<SlotKind>(kind);
    s.pc = r.u32();
    s.site_block = r.u32();
    s.target_block = r.u32();
    s.syscall_no = r.u32();
  }
  meta.syscall_sites.resize(r.count(12));
  for (auto& s : meta.syscall_sites) {
    s.pc = r.u32();
    s.number = r.u32();
    s.slot_id = r.u32();
  }
  if (!r.done()) throw Error(ErrorCode::kBadFormat, "trailing bytes in metadata section");
  return meta;
}

nlohmann::json metadata_to_json(const CfMetadata& meta) {
  using nlohmann::json;
  auto opt = [](uint32_t v) { return v == kNone ? json(nullptr) : json(v); };
  json j;
  j["version"] = CfMetadata::kVersion;
  j["syscall_linking"] = meta.syscall_linking;
  j["entry_block"] = meta.entry_block;
  j["code_size"] = meta.code_size;
  j["blocks"] = json::array();
  for (size_t i = 0; i < meta.blocks.size(); ++i) {
    const auto& b = meta.blocks[i];
    char tag[19];
    std::snprintf(tag, sizeof tag, "0x%016llx", static_cast<unsigned long long>(b.tag));
    j["blocks"].push_back({{"index", i},
                           {"tag", tag},
                           {"start", b.start},
                           {"length", b.length},
                           {"has_update", b.has_update},
                           {"trampoline", b.trampoline},
                           {"canonical_pred", opt(b.canonical_pred)}});
  }
  j["edges"] = json::array();
  for (const auto& e : meta.edges)
    j["edges"].push_back({{"from", e.from}, {"to", e.to}, {"kind", edge_kind_name(e.kind)}});
  j["slots"] = json::array();
  for (const auto& s : meta.slots)
    j["slots"].push_back({{"id", s.id},
                          {"kind", s.kind == SlotKind::kMerge ? "merge-justification" : "syscall-first-stage"},
                          {"pc", s.pc},
                          {"site_block", s.site_block},
                          {"target_block", opt(s.target_block)},
                          {"syscall", opt(s.syscall_no)}});
  j["syscall_sites"] = json::array();
  for (const auto& s : meta.syscall_sites)
    j["syscall_sites"].push_back({{"pc", s.pc}, {"syscall", s.number}, {"slot", opt(s.slot_id)}});
  return j;
}

std::string write_sfp(const Program& program, const CfMetadata& meta) {
  std::string out = print_program(program);
  out.push_back('\0');
  auto bytes = encode_metadata(meta);
  out.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  return out;
}

bool has_metadata_section(std::string_view bytes) {
  return bytes.find('\0') != std::string_view::npos;
}

std::pair<Program, CfMetadata> read_sfp(std::string_view bytes) {
  size_t nul = bytes.find('\0');
  if (nul == std::string_view::npos)
    throw Error(ErrorCode::kBadFormat, "no metadata section (not an instrumented program)");
  Program program = parse_program(bytes.substr(0, nul));
  auto section = bytes.substr(nul + 1);
  CfMetadata meta = decode_metadata(std::span<const uint8_t>(
      reinterpret_cast<const uint8_t*>(section.data()), section.size()));
  return {std::move(program), std::move(meta)};
}

}  // namespace sfp
