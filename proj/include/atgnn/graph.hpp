#pragma once

#include <string>
#include <vector>

#include "atgnn/tensor.hpp"

namespace atgnn {

// Directed neighbor lists over a node set. Lists are ordered by ascending
// distance rank; every node has exactly min(k, N-1) neighbors and no
// self-loop.
struct FeatureGraph {
  int node_count = 0;
  int k = 0;
  int dilation = 1;
  std::vector<std::vector<int>> neighbors;
};

// Squared Euclidean distances between rows; symmetric, zero diagonal.
Tensor pairwise_sq_dist(const Tensor& nodes);

// k nearest neighbors per node by squared distance plus optional bias,
// excluding self, ties to the lower index. k is clamped to N-1.
FeatureGraph knn_graph(const Tensor& nodes, int k, const Tensor* bias = nullptr);

// Takes the k*d nearest candidates per node sorted ascending and keeps every
// d-th one. The candidate pool is clamped to N-1; when the pool is too small
// for the full stride pattern the stride shrinks so the selection stays
// inside the pool and still yields min(k, N-1) distinct neighbors.
FeatureGraph dilated_knn_graph(const Tensor& nodes, int k, int d, const Tensor* bias = nullptr);

// Pairwise dot products e_i . e_j of per-node encoding vectors, used as an
// additive bias on squared feature distances during ranking.
Tensor relative_bias(const Tensor& rel);

// For each query row, the k nearest key rows by squared Euclidean distance
// (no self-exclusion; the two sets are distinct). k is clamped to key count.
std::vector<std::vector<int>> nearest_keys(const Tensor& queries, const Tensor& keys, int k);

// Debug text form: one line per node, "i: j1 j2 ... jk".
std::string format_graph(const FeatureGraph& g);

}  // namespace atgnn
