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

// The cryptographic state algebra: the running CFI state, the keyed PRF that
// stands in for PACIA, and the patches that are XORed into the state.
//
// State layout (64 bits):
//   bits 32..63  running control-flow signature
//   bits  0..31  syscall-linking residue; zero outside a link window
//
// A syscall patch is a 15-bit PAC. It is applied to the state as its link
// value, one copy in the residue (seen by the kernel checks, cleared at the
// end of the syscall) and one copy in the signature, where it stays.

#ifndef SFP_CFI_H_
#define SFP_CFI_H_

#include <compare>
#include <cstdint>
#include <span>

namespace sfp {

inline constexpr uint64_t kSignatureMask = 0xFFFFFFFF00000000ull;
inline constexpr uint64_t kResidueMask = 0x00000000FFFFFFFFull;
inline constexpr uint64_t kSyscallPatchMask = 0x7FFFull;
inline constexpr int kSyscallPatchBits = 15;

// Dense syscall numbering 0..kSyscallCount-1.
inline constexpr uint32_t kSyscallCount = 16;

using SyscallNo = uint32_t;

struct CfiState {
  uint64_t value = 0;

  uint32_t signature() const { return static_cast<uint32_t>(value >> 32); }
  uint32_t residue() const { return static_cast<uint32_t>(value); }

  friend constexpr auto operator<=>(const CfiState&, const CfiState&) = default;
};

// 128-bit PA key. Generated per process load and never written to reports.
struct PaKey {
  uint64_t lo = 0;
  uint64_t hi = 0;

  bool is_zero() const { return lo == 0 && hi == 0; }
  friend constexpr bool operator==(const PaKey&, const PaKey&) = default;
};

struct Modifier {
  uint64_t value = 0;
  friend constexpr auto operator<=>(const Modifier&, const Modifier&) = default;
};

// `mov x16, #1` in the kernel's second-stage sequence.
inline constexpr Modifier kKernelModifier{1};
inline constexpr Modifier kBlockUpdateModifier{2};

class SyscallPatch {
 public:
  SyscallPatch() = default;

  // Keeps the low 15 bits of a PRF output.
  static constexpr SyscallPatch truncate(uint64_t prf_output) {
    return SyscallPatch(prf_output & kSyscallPatchMask);
  }

  constexpr uint64_t value() const { return value_; }

  // The 64-bit word XORed into the state: the PAC in the residue and in the
  // low bits of the signature.
  constexpr uint64_t link_value() const { return value_ | (value_ << 32); }

  friend constexpr bool operator==(const SyscallPatch&,
                                   const SyscallPatch&) = default;

 private:
  explicit constexpr SyscallPatch(uint64_t v) : value_(v) {}
  uint64_t value_ = 0;
};

struct EdgePatch {
  uint64_t value = 0;
  friend constexpr bool operator==(const EdgePatch&, const EdgePatch&) = default;
};

// SipHash-2-4 over an arbitrary message. Exposed for the reference vectors.
uint64_t siphash24(const PaKey& key, std::span<const uint8_t> message);

// Keyed 64-bit PRF, PACIA analog: SipHash-2-4 of (data || modifier).
uint64_t prf(const PaKey& key, uint64_t data, Modifier modifier);

// Throws Error(kUnknownSyscall) when syscall_no >= table_size.
SyscallPatch compute_syscall_patch(const PaKey& key, SyscallNo syscall_no,
                                   Modifier modifier,
                                   uint32_t table_size = kSyscallCount);

constexpr CfiState apply_patch(CfiState state, uint64_t patch) {
  return CfiState{state.value ^ patch};
}

// `and x28, x28, #0xffffffff00000000`
constexpr CfiState clear_syscall_residue(CfiState state) {
  return CfiState{state.value & kSignatureMask};
}

// Per-block update: the new signature is the low half of
// prf(key, signature ^ tag, block modifier); the residue passes through.
CfiState block_update(CfiState state, uint64_t block_tag, const PaKey& key);

constexpr EdgePatch derive_edge_patch(CfiState state_at_edge,
                                      CfiState canonical_state) {
  return EdgePatch{state_at_edge.value ^ canonical_state.value};
}

}  // namespace sfp

#endif  // SFP_CFI_H_
