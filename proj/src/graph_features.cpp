#include "atomkit/graph_features.hpp"

#include "atomkit/errors.hpp"

namespace atomkit {

std::vector<std::vector<std::size_t>> RadiusGraph::adjacency() const {
  std::vector<std::vector<std::size_t>> adj(n_nodes);
  for (auto [i, j] : edges) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  return adj;
}

bool RadiusGraph::connected() const {
  if (n_nodes == 0) return false;
  const auto adj = adjacency();
  std::vector<bool> seen(n_nodes, false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  std::size_t count = 1;
  while (!stack.empty()) {
    const std::size_t u = stack.back();
    stack.pop_back();
    for (std::size_t v : adj[u])
      if (!seen[v]) {
        seen[v] = true;
        ++count;
        stack.push_back(v);
      }
  }
  return count == n_nodes;
}

RadiusGraph radius_graph(std::span<const Vec3> positions, double epsilon) {
  if (!(epsilon > 0.0)) throw ContractError("radius_graph: epsilon must be positive");
  RadiusGraph g;
  g.n_nodes = positions.size();
  g.epsilon = epsilon;
  for (std::size_t i = 0; i < positions.size(); ++i)
    for (std::size_t j = i + 1; j < positions.size(); ++j)
      if (norm(positions[i] - positions[j]) < epsilon) g.edges.emplace_back(i, j);
  return g;
}

RwpeMatrix rwpe(const RadiusGraph& graph, std::size_t walk_length) {
  if (walk_length == 0) throw ContractError("rwpe: walk length must be >= 1");
  const std::size_t n = graph.n_nodes;
  const auto adj = graph.adjacency();
  // Dense transition matrix; rows of isolated nodes stay zero.
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (adj[i].empty()) continue;
    const double w = 1.0 / static_cast<double>(adj[i].size());
    for (std::size_t j : adj[i]) m[i * n + j] += w;
  }
  RwpeMatrix out{n, walk_length, std::vector<double>(n * walk_length, 0.0)};
  std::vector<double> power = m;
  std::vector<double> next(n * n);
  for (std::size_t k = 0; k < walk_length; ++k) {
    for (std::size_t i = 0; i < n; ++i) out.values[i * walk_length + k] = power[i * n + i];
    if (k + 1 == walk_length) break;
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t l = 0; l < n; ++l) {
        const double a = power[i * n + l];
        if (a == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) next[i * n + j] += a * m[l * n + j];
      }
    std::swap(power, next);
  }
  return out;
}

}  // namespace atomkit
