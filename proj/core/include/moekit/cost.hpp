// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEKIT_COST_HPP_
#define MOEKIT_COST_HPP_

#include <cstdint>

namespace moekit {

// Exact operation accounting. Matmuls are charged 2*r*s*t; every other
// instrumented op charges a fixed per-element constant declared at the op
// site. Communication is counted in tensor entries moved by all-to-all.
//
// A counter is an explicit context: code paths that should be accounted
// receive one (usually through a Tape). No global state.
struct CostCounter {
  std::uint64_t matmul_flops = 0;
  std::uint64_t elementwise_flops = 0;
  std::uint64_t comm_entries = 0;

  std::uint64_t flops() const { return matmul_flops + elementwise_flops; }

  CostCounter& operator+=(const CostCounter& o) {
    matmul_flops += o.matmul_flops;
    elementwise_flops += o.elementwise_flops;
    comm_entries += o.comm_entries;
    return *this;
  }

  CostCounter delta_since(const CostCounter& earlier) const {
    return CostCounter{matmul_flops - earlier.matmul_flops,
                       elementwise_flops - earlier.elementwise_flops,
                       comm_entries - earlier.comm_entries};
  }
};

}  // namespace moekit

#endif  // MOEKIT_COST_HPP_
