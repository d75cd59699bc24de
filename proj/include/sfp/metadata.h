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

// Control-flow metadata emitted by the instrumenter and consumed by the
// loader, plus its on-disk form. The binary layout is documented in
// docs/metadata_format.md.

#ifndef SFP_METADATA_H_
#define SFP_METADATA_H_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sfp/cfg.h"
#include "sfp/cfi.h"
#include "sfp/program.h"

namespace sfp {

inline constexpr uint32_t kNone = 0xFFFFFFFFu;

enum class SlotKind : uint8_t { kMerge = 0, kSyscall = 1 };

// A PATCH_SLOT at `pc` followed by STATE_XOR at `pc + 1`.
struct PatchSlot {
  uint32_t id = 0;
  SlotKind kind = SlotKind::kMerge;
  Pc pc = 0;
  uint32_t site_block = 0;
  uint32_t target_block = kNone;  // merge slots: block being justified
  SyscallNo syscall_no = kNone;   // syscall slots

  friend bool operator==(const PatchSlot&, const PatchSlot&) = default;
};

struct SyscallSite {
  Pc pc = 0;  // the SVC
  SyscallNo number = 0;
  uint32_t slot_id = kNone;  // kNone when built without syscall linking

  friend bool operator==(const SyscallSite&, const SyscallSite&) = default;
};

struct BlockMeta {
  uint64_t tag = 0;
  Pc start = 0;
  uint32_t length = 0;
  bool has_update = false;
  bool trampoline = false;
  uint32_t canonical_pred = kNone;

  friend bool operator==(const BlockMeta&, const BlockMeta&) = default;
};

struct CfMetadata {
  static constexpr uint16_t kVersion = 1;

  bool syscall_linking = true;
  uint32_t entry_block = 0;
  Pc code_size = 0;
  std::vector<BlockMeta> blocks;  // indexed like the instrumented program
  std::vector<CfgEdge> edges;
  std::vector<PatchSlot> slots;
  std::vector<SyscallSite> syscall_sites;

  const SyscallSite* site_at(Pc pc) const;
  friend bool operator==(const CfMetadata&, const CfMetadata&) = default;
};

std::vector<uint8_t> encode_metadata(const CfMetadata& meta);
// Throws Error(kBadFormat) on truncation, bad magic, version or checksum.
CfMetadata decode_metadata(std::span<const uint8_t> bytes);

nlohmann::json metadata_to_json(const CfMetadata& meta);

// An .sfp file is the printed program text, a NUL byte, and the encoded
// metadata section.
std::string write_sfp(const Program& program, const CfMetadata& meta);
std::pair<Program, CfMetadata> read_sfp(std::string_view bytes);
bool has_metadata_section(std::string_view bytes);

}  // namespace sfp

#endif  // SFP_METADATA_H_
