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

#ifndef SFP_CFG_H_
#define SFP_CFG_H_

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "sfp/program.h"

namespace sfp {

enum class EdgeKind : uint8_t {
  kFallthrough = 0,
  kTaken = 1,
  kCall = 2,
  kReturn = 3,
  kIndirect = 4,
};

std::string_view edge_kind_name(EdgeKind kind);

struct CfgEdge {
  uint32_t from = 0;
  uint32_t to = 0;
  EdgeKind kind = EdgeKind::kFallthrough;

  friend constexpr auto operator<=>(const CfgEdge&, const CfgEdge&) = default;
};

// Control-flow graph over block indices. Only blocks reachable from the
// entry appear; nodes and edges are sorted.
//
// Calls are modelled context-insensitively: a CALL block has a call edge to
// the callee, and every RET in the callee's body has a return edge to the
// block following each call site.
struct Cfg {
  uint32_t entry = 0;
  std::vector<uint32_t> nodes;
  std::vector<CfgEdge> edges;
  std::vector<std::string> warnings;

  bool contains(uint32_t block) const;
  bool has_edge(uint32_t from, uint32_t to) const;
  std::vector<CfgEdge> out_edges(uint32_t block) const;
  std::vector<CfgEdge> in_edges(uint32_t block) const;
};

// Throws Error(kMissingIndirectTargets) for a reachable BRIND without a
// declared candidate set.
Cfg build_cfg(const Program& program);

}  // namespace sfp

#endif  // SFP_CFG_H_
