#include "atmgcn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "atmgcn/errors.hpp"

namespace atmgcn {

GraphTopology build_topology(std::size_t length, std::size_t apex_index, std::size_t window,
                             bool local_self_loops) {
  if (length < 3) {
    throw InputError("build_topology: need L >= 3 for a non-degenerate graph, got " +
                     std::to_string(length));
  }
  if (apex_index < 2 || apex_index > length) {
    throw InputError("build_topology: apex index " + std::to_string(apex_index) +
                     " outside [2, " + std::to_string(length) + "]");
  }
  if (window < 1) throw InputError("build_topology: window must be >= 1");

  GraphTopology g;
  g.length_ = length;
  g.global_ = apex_index;
  g.window_ = window;
  for (std::size_t i = 2; i <= length; ++i) {
    if (i == apex_index) {
      for (std::size_t j = 2; j <= length; ++j) g.edges_.emplace_back(i, j);
      continue;
    }
    const std::size_t lo = std::max<std::size_t>(2, i > window ? i - window : 0);
    const std::size_t hi = std::min(length, i + window);
    for (std::size_t j = lo; j <= hi; ++j) {
      if (j == i && !local_self_loops) continue;
      g.edges_.emplace_back(i, j);
    }
    g.edges_.emplace_back(i, apex_index);
  }
  std::sort(g.edges_.begin(), g.edges_.end());
  g.edges_.erase(std::unique(g.edges_.begin(), g.edges_.end()), g.edges_.end());
  return g;
}

std::vector<Edge> GraphTopology::edges_from(std::size_t node) const {
  std::vector<Edge> out;
  for (const Edge& e : edges_) {
    if (e.first == node) out.push_back(e);
  }
  return out;
}

bool GraphTopology::has_edge(std::size_t from, std::size_t to) const {
  return std::binary_search(edges_.begin(), edges_.end(), Edge{from, to});
}

Tensor GraphTopology::mask() const {
  const std::size_t n = num_nodes();
  Tensor m({n, n});
  for (const auto& [from, to] : edges_) m.at(row_of(from), row_of(to)) = 1.0;
  return m;
}

double angular_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("angular_similarity: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " differ");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DomainError("angular_similarity: zero-norm vector");
  const double cos = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0 + ops::kArccosEps,
                                1.0 - ops::kArccosEps);
  return 1.0 - std::acos(cos) / std::numbers::pi;
}

double decayed_weight(double similarity, std::size_t i, std::size_t j, double tau) {
  if (!(tau > 0.0)) throw ConfigError("decayed_weight: tau must be positive");
  const double gap = i > j ? static_cast<double>(i - j) : static_cast<double>(j - i);
  return similarity * std::exp(-gap / tau);
}

void EdgeWeighting::validate() const {
  if (!(tau > 0.0)) throw ConfigError("edge weighting: tau must be positive");
  if (!(lambda_local < lambda_global)) {
    throw ConfigError("edge weighting: lambda_local (" + std::to_string(lambda_local) +
                      ") must be smaller than lambda_global (" +
                      std::to_string(lambda_global) + ")");
  }
  if (lambda_local < 0.0) throw ConfigError("edge weighting: lambda_local must be >= 0");
}

Var assemble_adjacency(const Var& node_features, const GraphTopology& topology,
                       const EdgeWeighting& weighting) {
  using namespace ops;
  weighting.validate();
  const std::size_t n = topology.num_nodes();
  if (node_features.shape().size() != 2 || node_features.shape()[0] != n) {
    throw DimensionError("assemble_adjacency: expected " + std::to_string(n) +
                         " node rows, got " + shape_string(node_features.shape()));
  }
  const std::size_t d = node_features.shape()[1];
  const Var norms = l2_norm_lastdim(node_features);
  for (double v : norms.value().values()) {
    if (v == 0.0) throw DomainError("assemble_adjacency: zero-norm node feature");
  }
  const Var unit = div(node_features, broadcast(reshape(norms, {n, 1}), {n, d}));
  const Var cosine = matmul(unit, transpose(unit));
  const Var similarity = add_scalar(scalar_mul(arccos_clamped(cosine), -1.0 / std::numbers::pi), 1.0);

  // Decay and node-type reweighting are constants per edge.
  Tensor scale({n, n});
  for (const auto& [from, to] : topology.edges()) {
    const double lambda =
        from == topology.global_index() ? weighting.lambda_global : weighting.lambda_local;
    scale.at(GraphTopology::row_of(from), GraphTopology::row_of(to)) =
        lambda * decayed_weight(1.0, from, to, weighting.tau);
  }
  return mul(similarity, constant(std::move(scale)));
}

}  // namespace atmgcn
