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

#include "sfp/cfg.h"

#include <algorithm>
#include <deque>
#include <map>
#include <set>

#include "sfp/error.h"

namespace sfp {

namespace {

// Intra-procedural successors: everything except call and return edges,
// with a call block summarised by its continuation.
std::vector<uint32_t> local_successors(const Program& p, uint32_t b) {
  const BasicBlock& block = p.blocks[b];
  switch (block.terminator()) {
    case Terminator::kFallthrough:
    case Terminator::kCall:
      return {b + 1};
    case Terminator::kBranch:
      return {p.block_index(block.instructions.back().label)};
    case Terminator::kCondBranch:
      return {p.block_index(block.instructions.back().label), b + 1};
    case Terminator::kIndirect: {
      std::vector<uint32_t> out;
      auto it = p.indirect_targets.find(block.label);
      if (it != p.indirect_targets.end())
        for (const auto& t : it->second) out.push_back(p.block_index(t));
      return out;
    }
    case Terminator::kReturn:
    case Terminator::kHalt:
      return {};
  }
  return {};
}

}  // namespace

std::string_view edge_kind_name(EdgeKind kind) {
  switch (kind) {
    case EdgeKind::kFallthrough: return "fallthrough";
    case EdgeKind::kTaken: return "taken";
    case EdgeKind::kCall: return "call";
    case EdgeKind::kReturn: return "return";
    case EdgeKind::kIndirect: return "indirect-candidate";
  }
  return "?";
}

bool Cfg::contains(uint32_t block) const {
  return std::binary_search(nodes.begin(), nodes.end(), block);
}

bool Cfg::has_edge(uint32_t from, uint32_t to) const {
  return std::any_of(edges.begin(), edges.end(),
                     [&](const CfgEdge& e) { return e.from == from && e.to == to; });
}

std::vector<CfgEdge> Cfg::out_edges(uint32_t block) const {
  std::vector<CfgEdge> out;
  for (const auto& e : edges)
    if (e.from == block) out.push_back(e);
  return out;
}

std::vector<CfgEdge> Cfg::in_edges(uint32_t block) const {
  std::vector<CfgEdge> out;
  for (const auto& e : edges)
    if (e.to == block) out.push_back(e);
  return out;
}

Cfg build_cfg(const Program& p) {
  const auto n = static_cast<uint32_t>(p.blocks.size());

  // Call sites per callee, and the body of every callee.
  std::map<uint32_t, std::vector<uint32_t>> callers;
  for (uint32_t b = 0; b < n; ++b)
    if (p.blocks[b].terminator() == Terminator::kCall)
      callers[p.block_index(p.blocks[b].instructions.back().label)].push_back(b);

  std::map<uint32_t, std::set<uint32_t>> return_targets;  // ret block -> continuations
  for (const auto& [callee, sites] : callers) {
    std::set<uint32_t> body{callee};
    std::deque<uint32_t> work{callee};
    while (!work.empty()) {
      uint32_t b = work.front();
      work.pop_front();
      for (uint32_t s : local_successors(p, b))
        if (body.insert(s).second) work.push_back(s);
    }
    for (uint32_t b : body)
      if (p.blocks[b].terminator() == Terminator::kReturn)
        for (uint32_t site : sites) return_targets[b].insert(site + 1);
  }

  auto successors = [&](uint32_t b) {
    std::vector<CfgEdge> out;
    const BasicBlock& block = p.blocks[b];
    switch (block.terminator()) {
      case Terminator::kFallthrough:
        out.push_back({b, b + 1, EdgeKind::kFallthrough});
        break;
      case Terminator::kBranch:
        out.push_back({b, p.block_index(block.instructions.back().label), EdgeKind::kTaken});
        break;
      case Terminator::kCondBranch:
        out.push_back({b, p.block_index(block.instructions.back().label), EdgeKind::kTaken});
        out.push_back({b, b + 1, EdgeKind::kFallthrough});
        break;
      case Terminator::kIndirect: {
        auto it = p.indirect_targets.find(block.label);
        if (it == p.indirect_targets.end())
          throw Error(ErrorCode::kMissingIndirectTargets,
                      "BRIND in block '" + block.label + "' has no .indirect candidate set");
        for (const auto& t : it->second)
          out.push_back({b, p.block_index(t), EdgeKind::kIndirect});
        break;
      }
      case Terminator::kCall:
        out.push_back({b, p.block_index(block.instructions.back().label), EdgeKind::kCall});
        break;
      case Terminator::kReturn:
        if (auto it = return_targets.find(b); it != return_targets.end())
          for (uint32_t t : it->second) out.push_back({b, t, EdgeKind::kReturn});
        break;
      case Terminator::kHalt:
        break;
    }
    return out;
  };

  Cfg cfg;
  cfg.entry = p.entry;
  std::vector<bool> seen(n, false);
  std::deque<uint32_t> work{p.entry};
  seen[p.entry] = true;
  while (!work.empty()) {
    uint32_t b = work.front();
    work.pop_front();
    cfg.nodes.push_back(b);
    for (const auto& e : successors(b)) {
      cfg.edges.push_back(e);
      if (!seen[e.to]) {
        seen[e.to] = true;
        work.push_back(e.to);
      }
    }
  }
  std::sort(cfg.nodes.begin(), cfg.nodes.end());
  std::sort(cfg.edges.begin(), cfg.edges.end());
  cfg.edges.erase(std::unique(cfg.edges.begin(), cfg.edges.end()), cfg.edges.end());
  for (uint32_t b = 0; b < n; ++b)
    if (!seen[b]) cfg.warnings.push_back("unreachable block '" + p.blocks[b].label + "'");
  return cfg;
}

}  // namespace sfp
