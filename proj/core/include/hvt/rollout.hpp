#pragma once

#include <cstddef>
#include <vector>

#include "hvt/model.hpp"

namespace hvt {

/// Square row-major matrix.
struct SquareMatrix {
    std::size_t n = 0;
    std::vector<double> values;

    double operator()(std::size_t r, std::size_t c) const { return values[r * n + c]; }
};

struct RolloutResult {
    /// Cumulative rollout after each block: R_k = A~_k R_{k-1}, every one row-stochastic.
    std::vector<SquareMatrix> steps;
    /// Column means of the final rollout (one relevance value per token).
    std::vector<double> token_relevance;
    std::size_t grid_h = 0, grid_w = 0;
    /// Nearest-neighbour upsampled relevance, min-max normalized to [0, 1], row-major.
    std::vector<double> heatmap;
    std::size_t height = 0, width = 0;
};

/// Rollout over already head-averaged attention matrices, first block first.
///
/// Each matrix is mixed with the identity (0.5 A + 0.5 I) and row-renormalized
/// before multiplication. A constant relevance map normalizes to all ones.
RolloutResult rollout_from_matrices(const std::vector<SquareMatrix>& attention, std::size_t grid_h,
                                    std::size_t grid_w, std::size_t height, std::size_t width);

/// Rollout of one sample of a captured final-stage record, upsampled to height x width.
RolloutResult attention_rollout(const AttentionRecord& record, std::size_t sample, std::size_t height,
                                std::size_t width);

} // namespace hvt
