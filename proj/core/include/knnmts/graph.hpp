#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "knnmts/tensor.hpp"

namespace knnmts {

/// Row-normalized forward and backward transition matrices of a graph.
struct TransitionMatrices {
  Tensor forward;   // P_f: rows of A scaled to sum 1 (zero rows stay zero)
  Tensor backward;  // P_b: same for A^T
};

/// Throws ConfigError for non-square or negative adjacency.
TransitionMatrices transition_matrices(const Tensor& adjacency);

/// Row-softmax(relu(E1 * E2^T)); differentiable in both embeddings.
Tensor adaptive_adjacency(const Tensor& source_embedding, const Tensor& target_embedding);

/// [P^0 = I, P^1, ..., P^order].
std::vector<Tensor> matrix_power_series(const Tensor& p, std::size_t order);

/// Reads an N x N dense CSV or a "src,dst,weight" edge list (detected by a
/// header whose first cell is "src"). Edge endpoints are node ids from
/// `node_ids` or 0-based indices.
Tensor load_adjacency(const std::filesystem::path& path, const std::vector<std::string>& node_ids);

}  // namespace knnmts
