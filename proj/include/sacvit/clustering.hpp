#pragma once

#include <array>
#include <utility>
#include <vector>

#include "sacvit/config.hpp"
#include "sacvit/encoder.hpp"

namespace sacvit {

// Stage-boundary partition: the top-M low-resolution tokens (targets), their
// mapped high-resolution indices, and the leftover non-target tokens.
struct ClusterPartition {
    std::vector<int> target_low;    // sorted, size M
    std::vector<int> target_high;   // size 4M, grouped in 4s per source token
    std::vector<int> nontarget_low; // sorted, size N - M

    int num_targets() const { return static_cast<int>(target_low.size()); }
};

// Global moving average over the per-layer class-attention rows:
// a0 = 0, a_l = beta * a_{l-1} + (1 - beta) * row_l; returns a_L.
std::vector<double> moving_average_scores(const AttentionTrace& trace, double beta);

// Picks M = clamp(floor(alpha * N), 1, N-1) indices with the largest scores,
// ties broken toward the lower index. Returns (targets, non-targets), both
// sorted ascending.
std::pair<std::vector<int>, std::vector<int>> select_targets(const std::vector<double>& scores,
                                                             double alpha);

// Maps a low-resolution patch index to its 2x2 block of high-resolution
// indices (top-left, top-right, bottom-left, bottom-right). grid_h/grid_w are
// the low-resolution grid dimensions.
std::array<int, 4> map_to_high_res(int index, int grid_h, int grid_w);

// moving_average_scores -> select_targets -> map_to_high_res, with every
// partition invariant enforced before returning.
ClusterPartition build_partition(const AttentionTrace& trace, const ModelConfig& cfg);

// Bug guard used by build_partition and tests: disjoint cover of the low
// grid, distinct in-range high indices. Throws Error(internal).
void validate_partition(const ClusterPartition& p, int n_low);

} // namespace sacvit
