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

#include "sfp/cfi.h"

#include <array>
#include <bit>
#include <string>

#include "sfp/error.h"

namespace sfp {

namespace {

uint64_t load_le64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void store_le64(uint8_t* p, uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<uint8_t>(v >> (8 * i));
}

struct SipState {
  uint64_t v0, v1, v2, v3;

  void round() {
    v0 += v1;
    v1 = std::rotl(v1, 13);
    v1 ^= v0;
    v0 = std::rotl(v0, 32);
    v2 += v3;
    v3 = std::rotl(v3, 16);
    v3 ^= v2;
    v0 += v3;
    v3 = std::rotl(v3, 21);
    v3 ^= v0;
    v2 += v1;
    v1 = std::rotl(v1, 17);
    v1 ^= v2;
    v2 = std::rotl(v2, 32);
  }

  void compress(uint64_t m) {
    v3 ^= m;
    round();
    round();
    v0 ^= m;
  }
};

}  // namespace

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnknownSyscall: return "UnknownSyscall";
    case ErrorCode::kSyntax: return "SyntaxError";
    case ErrorCode::kUndefinedLabel: return "UndefinedLabel";
    case ErrorCode::kDuplicateLabel: return "DuplicateLabel";
    case ErrorCode::kMissingIndirectTargets: return "MissingIndirectTargets";
    case ErrorCode::kReservedRegister: return "ReservedRegister";
    case ErrorCode::kDynamicSyscallNumber: return "DynamicSyscallNumber";
    case ErrorCode::kUnjustifiableMerge: return "UnjustifiableMerge";
    case ErrorCode::kInconsistentMerge: return "InconsistentMerge";
    case ErrorCode::kNoExpectedState: return "NoExpectedState";
    case ErrorCode::kBadMetadata: return "BadMetadata";
    case ErrorCode::kBadFormat: return "BadFormat";
    case ErrorCode::kConfig: return "ConfigError";
  }
  return "Error";
}

uint64_t siphash24(const PaKey& key, std::span<const uint8_t> message) {
  SipState s{key.lo ^ 0x736f6d6570736575ull, key.hi ^ 0x646f72616e646f6dull,
             key.lo ^ 0x6c7967656e657261ull, key.hi ^ 0x7465646279746573ull};

  const size_t full = message.size() / 8 * 8;
  for (size_t i = 0; i < full; i += 8) s.compress(load_le64(&message[i]));

  uint64_t last = static_cast<uint64_t>(message.size() & 0xff) << 56;
  for (size_t i = full; i < message.size(); ++i)
    last |= static_cast<uint64_t>(message[i]) << (8 * (i - full));
  s.compress(last);

  s.v2 ^= 0xff;
  for (int i = 0; i < 4; ++i) s.round();
  return s.v0 ^ s.v1 ^ s.v2 ^ s.v3;
}

uint64_t prf(const PaKey& key, uint64_t data, Modifier modifier) {
  std::array<uint8_t, 16> block;
  store_le64(block.data(), data);
  store_le64(block.data() + 8, modifier.value);
  return siphash24(key, block);
}

SyscallPatch compute_syscall_patch(const PaKey& key, SyscallNo syscall_no,
                                   Modifier modifier, uint32_t table_size) {
  if (syscall_no >= table_size) {
    throw Error(ErrorCode::kUnknownSyscall,
                "syscall " + std::to_string(syscall_no) +
                    " outside table of size " + std::to_string(table_size));
  }
  return SyscallPatch::truncate(prf(key, syscall_no, modifier));
}

CfiState block_update(CfiState state, uint64_t block_tag, const PaKey& key) {
  const uint64_t mac =
      prf(key, (state.value >> 32) ^ block_tag, kBlockUpdateModifier);
  return CfiState{(mac << 32) | (state.value & kResidueMask)};
}

}  // namespace sfp
