#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "atomkit/errors.hpp"
#include "atomkit/graph_features.hpp"
#include "atomkit/lifting.hpp"

using namespace atomkit;

namespace {

std::vector<Vec3> cloud(std::size_t n, std::mt19937_64& rng, double spread = 1.5) {
  std::uniform_real_distribution<double> u(-spread, spread);
  std::vector<Vec3> x(n);
  for (auto& p : x) p = {u(rng), u(rng), u(rng)};
  return x;
}

}  // namespace

TEST_CASE("radius_graph examples") {
  const std::vector<Vec3> near{{0, 0, 0}, {1, 0, 0}};
  CHECK(radius_graph(near, 1.6).edges.size() == 1);
  const std::vector<Vec3> far{{0, 0, 0}, {2, 0, 0}};
  CHECK(radius_graph(far, 1.6).edges.empty());
  const std::vector<Vec3> one{{3, 3, 3}};
  CHECK(radius_graph(one).edges.empty());
  // Strict inequality at the threshold.
  const std::vector<Vec3> edge{{0, 0, 0}, {1.5, 0, 0}};
  CHECK(radius_graph(edge, 1.5).edges.empty());
}

TEST_CASE("radius_graph matches brute force and is rigid-motion invariant") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = cloud(7, rng);
    const auto g = radius_graph(x);
    std::vector<std::pair<std::size_t, std::size_t>> expect;
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = i + 1; j < x.size(); ++j)
        if (norm(x[i] - x[j]) < kCovalentRadius) expect.push_back({i, j});
    auto got = g.edges;
    std::sort(got.begin(), got.end());
    CHECK(got == expect);

    const Mat3 r = random_rotation(rng);
    std::vector<Vec3> moved;
    for (const auto& p : x) moved.push_back(apply(r, p) + Vec3{4, -2, 1});
    CHECK(rwpe(radius_graph(moved)).values == rwpe(g).values);
  }
}

TEST_CASE("rwpe examples") {
  RadiusGraph path;
  path.n_nodes = 2;
  path.edges = {{0, 1}};
  const auto p = rwpe(path, 2);
  CHECK(p.values == std::vector<double>{0, 1, 0, 1});

  RadiusGraph tri;
  tri.n_nodes = 3;
  tri.edges = {{0, 1}, {0, 2}, {1, 2}};
  const auto t = rwpe(tri, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(t(i, 0) == 0.0);
    CHECK(t(i, 1) == doctest::Approx(0.5).epsilon(1e-15));
  }

  RadiusGraph lonely;
  lonely.n_nodes = 3;
  lonely.edges = {{0, 1}};
  const auto l = rwpe(lonely, 5);
  for (std::size_t k = 0; k < 5; ++k) CHECK(l(2, k) == 0.0);
}

TEST_CASE("rwpe entries are probabilities and permute with the nodes") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = cloud(6, rng);
    const auto base = rwpe(radius_graph(x), 8);
    for (double v : base.values) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0 + 1e-15);
    }
    std::vector<std::size_t> perm(x.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Vec3> px(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) px[i] = x[perm[i]];
    const auto permuted = rwpe(radius_graph(px), 8);
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t k = 0; k < 8; ++k)
        CHECK(std::abs(permuted(i, k) - base(perm[i], k)) < 1e-14);
  }
}

TEST_CASE("rwpe agrees with a small random-walk simulation") {
  // A 5-cycle with a chord; 2e5 walks per node keeps the test quick.
  RadiusGraph g;
  g.n_nodes = 5;
  g.edges = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 4}, {0, 2}};
  const auto p = rwpe(g, 6);
  const auto adj = g.adjacency();
  std::mt19937_64 rng(11);
  const int walks = 200000;
  for (std::size_t start = 0; start < 5; ++start) {
    std::vector<int> hits(6, 0);
    for (int w = 0; w < walks; ++w) {
      std::size_t at = start;
      for (std::size_t k = 0; k < 6; ++k) {
        std::uniform_int_distribution<std::size_t> pick(0, adj[at].size() - 1);
        at = adj[at][pick(rng)];
        if (at == start) ++hits[k];
      }
    }
    for (std::size_t k = 0; k < 6; ++k) {
      const double q = p(start, k);
      const double se = std::sqrt(std::max(q * (1 - q), 1e-12) / walks);
      CHECK(std::abs(hits[k] / double(walks) - q) < 4 * se + 1e-12);
    }
  }
}

TEST_CASE("attach_rwpe layout") {
  std::mt19937_64 rng(7);
  const auto layout = make_channel_layout(48, 8);
  const auto params = LiftingParams::init(layout, LiftingKind::equivariant, rng);
  MoleculeState s;
  s.positions = {{0, 0, 0}, {1, 0, 0}, {0, 1.2, 0}};
  s.velocities = {{0.1, 0, 0}, {0, 0.2, 0}, {0, 0, 0.3}};
  s.atomic_numbers = {6, 1, 8};
  const auto lifted = equivariant_lift(s, 2, params);
  const auto enc = rwpe(radius_graph(s.positions), 8);
  const auto out = attach_rwpe(lifted, enc.values, 8);
  const std::size_t first = 48 - 8;
  for (std::size_t p = 0; p < 2; ++p)
    for (std::size_t i = 0; i < 3; ++i) {
      const std::size_t row = p * 3 + i;
      for (std::size_t k = 0; k < 8; ++k)
        CHECK(out.phase.data()[row * 48 + first + k] == enc(i, k));
      for (std::size_t c = 0; c < first; ++c)
        CHECK(out.phase.data()[row * 48 + c] == lifted.phase.data()[row * 48 + c]);
    }
  CHECK(out.positions.data()[5] == lifted.positions.data()[5]);

  const std::vector<double> zeros(3 * 8, 0.0);
  const auto z = attach_rwpe(lifted, zeros, 8);
  for (std::size_t row = 0; row < 6; ++row)
    for (std::size_t k = 0; k < 8; ++k) CHECK(z.phase.data()[row * 48 + first + k] == 0.0);

  CHECK_THROWS_AS(attach_rwpe(lifted, std::vector<double>(3 * 4, 0.0), 4), ConfigError);
}
