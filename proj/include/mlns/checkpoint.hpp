#pragma once

#include <string>

#include "mlns/network.hpp"

namespace mlns {

// Single-file binary checkpoint, little-endian:
//   magic "MLNS", u32 version (=1), then per tensor:
//   u32 name_len, name bytes, u32 rank, u32 dims[rank], f64 data.
// Tensors appear in graph order; norm layers additionally store
// running statistics and a 1-element stats_ready flag.
void save_checkpoint(const std::string& path, const LayerGraph& graph, const ParamSet& params);

// Loads into a ParamSet shaped by `graph`; unknown names, missing tensors or
// shape mismatches are rejected.
ParamSet load_checkpoint(const std::string& path, const LayerGraph& graph);

}  // namespace mlns
