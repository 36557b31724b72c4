#pragma once

#include <span>
#include <utility>
#include <vector>

#include "atomkit/geometry.hpp"

namespace atomkit {

inline constexpr double kCovalentRadius = 1.6;  // Angstrom
inline constexpr std::size_t kDefaultWalkLength = 8;

/// Undirected epsilon-neighbourhood graph; edges stored once with i < j.
struct RadiusGraph {
  std::size_t n_nodes = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  double epsilon = kCovalentRadius;

  std::vector<std::vector<std::size_t>> adjacency() const;
  bool connected() const;
};

/// Edge (i, j) iff |x_i - x_j| < epsilon.
RadiusGraph radius_graph(std::span<const Vec3> positions, double epsilon = kCovalentRadius);

/// p[i][k] = (M^(k+1))_ii with M = D^-1 A; isolated nodes give zero rows.
struct RwpeMatrix {
  std::size_t n_nodes = 0;
  std::size_t walk_length = 0;
  std::vector<double> values;  // row-major [n_nodes, walk_length]

  double operator()(std::size_t node, std::size_t k) const {
    return values[node * walk_length + k];
  }
};

RwpeMatrix rwpe(const RadiusGraph& graph, std::size_t walk_length = kDefaultWalkLength);

}  // namespace atomkit
