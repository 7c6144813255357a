#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "atmgcn/autodiff.hpp"
#include "atmgcn/tensor.hpp"

namespace atmgcn {

// Directed edge (source, target) between node indices in [2, L]; messages
// flow from source to target.
using Edge = std::pair<std::size_t, std::size_t>;

// Temporal motion graph over nodes 2..L. Node v_1 (onset against itself) is
// absent. The apex node is the single global node.
class GraphTopology {
 public:
  std::size_t length() const noexcept { return length_; }
  std::size_t num_nodes() const noexcept { return length_ - 1; }
  std::size_t global_index() const noexcept { return global_; }
  std::size_t window() const noexcept { return window_; }

  // Sorted, duplicate-free.
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  // Outgoing edges of one node (E~_i for locals, E~_global for the apex).
  std::vector<Edge> edges_from(std::size_t node) const;
  bool has_edge(std::size_t from, std::size_t to) const;

  // N x N, 1 where a directed edge exists. Row/column r is node r + 2.
  Tensor mask() const;

  static std::size_t row_of(std::size_t node) { return node - 2; }

 private:
  friend GraphTopology build_topology(std::size_t, std::size_t, std::size_t, bool);
  std::size_t length_ = 0;
  std::size_t global_ = 0;
  std::size_t window_ = 0;
  std::vector<Edge> edges_;
};

// Window edges j in [max(2, i-w), min(L, i+w)] for every local i, plus
// local -> global, global -> every other node and a global self-loop.
// With local_self_loops = false the j = i window edge is skipped.
GraphTopology build_topology(std::size_t length, std::size_t apex_index, std::size_t window,
                             bool local_self_loops = true);

// 1 - arccos(cos(a, b)) / pi with the cosine clamped away from +-1.
double angular_similarity(std::span<const double> a, std::span<const double> b);

// similarity * exp(-|i - j| / tau)
double decayed_weight(double similarity, std::size_t i, std::size_t j, double tau);

struct EdgeWeighting {
  double tau = 10.0;
  double lambda_local = 1.0;
  double lambda_global = 2.0;

  void validate() const;
};

// Initial adjacency A~(0) (N x N) from node features (N x d, row r is node
// r + 2). Differentiable with respect to the features.
Var assemble_adjacency(const Var& node_features, const GraphTopology& topology,
                       const EdgeWeighting& weighting);

// Per-layer adjacency matrices produced by the GCN stack.
struct AdjacencyStack {
  Tensor mask;
  std::vector<Tensor> layers;  // layers[0] = A~(0), layers[l] = A~(l)
};

}  // namespace atmgcn
