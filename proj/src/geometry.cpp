#include "atomkit/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "atomkit/errors.hpp"

namespace atomkit {

void MoleculeState::validate() const {
  if (positions.empty()) throw ContractError("MoleculeState: at least one atom required");
  if (velocities.size() != positions.size() || atomic_numbers.size() != positions.size())
    throw ContractError("MoleculeState: positions, velocities and atomic numbers differ in length");
  for (int z : atomic_numbers)
    if (z < 1) throw ContractError("MoleculeState: atomic numbers must be >= 1");
}

Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

Mat3 identity3() { return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }

Mat3 transpose(const Mat3& m) {
  Mat3 t{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i][j] = m[j][i];
  return t;
}

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

double determinant(const Mat3& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

Vec3 apply(const Mat3& m, const Vec3& v) {
  return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
          m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
          m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

std::array<double, 4> augment_with_norm(const Vec3& v) { return {v[0], v[1], v[2], norm(v)}; }

Mat3 random_rotation(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_rotation(rng);
}

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  double w, x, y, z, n;
  do {
    w = normal(rng);
    x = normal(rng);
    y = normal(rng);
    z = normal(rng);
    n = std::sqrt(w * w + x * x + y * y + z * z);
  } while (n < 1e-12);
  w /= n;
  x /= n;
  y /= n;
  z /= n;
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
           {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
           {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

MoleculeState rigid_motion(const MoleculeState& state, const Mat3& rotation,
                           const Vec3& translation) {
  MoleculeState out = state;
  for (std::size_t i = 0; i < state.size(); ++i) {
    out.positions[i] = apply(rotation, state.positions[i]) + translation;
    out.velocities[i] = apply(rotation, state.velocities[i]);
  }
  return out;
}

SymmetricEigen3 symmetric_eigen(const Mat3& s) {
  Mat3 a = s;
  Mat3 v = identity3();
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = std::abs(a[0][1]) + std::abs(a[0][2]) + std::abs(a[1][2]);
    double scale = std::abs(a[0][0]) + std::abs(a[1][1]) + std::abs(a[2][2]);
    if (off <= 1e-300 || off <= 1e-17 * scale) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        // a <- J^T a J for the rotation J in the (p, q) plane.
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - sn * akq;
          a[k][q] = sn * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - sn * aqk;
          a[q][k] = sn * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - sn * vkq;
          v[k][q] = sn * vkp + c * vkq;
        }
      }
  }
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int i, int j) { return a[i][i] > a[j][j]; });
  SymmetricEigen3 out{};
  for (int k = 0; k < 3; ++k) {
    out.values[k] = a[order[k]][order[k]];
    out.vectors[k] = {v[0][order[k]], v[1][order[k]], v[2][order[k]]};
  }
  return out;
}

namespace {

// +1 / -1 orientation for axis e: angular momentum first, positional skew as
// the fallback when the pseudoscalar is orthogonal to e.
double axis_sign(const Vec3& e, const Vec3& c0, std::span<const Vec3> centered,
                 const CanonicalizeOptions& options, const char* axis_name) {
  const double proj = dot(e, c0);
  if (std::abs(proj) > options.chirality_floor * std::max(1.0, norm(c0)))
    return proj >= 0 ? 1.0 : -1.0;
  double skew = 0.0, scale = 0.0;
  for (const auto& x : centered) {
    const double s = dot(e, x);
    skew += s * s * s;
    scale += std::abs(s * s * s);
  }
  if (std::abs(skew) > 1e-12 * scale && scale > 0.0) return skew >= 0 ? 1.0 : -1.0;
  throw CanonicalizationDegenerate(std::string("cannot orient ") + axis_name +
                                   ": both angular momentum and skew vanish along it");
}

}  // namespace

CanonicalFrame canonicalize(const MoleculeState& state, const CanonicalizeOptions& options) {
  state.validate();
  const std::size_t n = state.size();
  if (n < 3) throw CanonicalizationDegenerate("canonicalization needs at least 3 atoms");

  Vec3 mu{0, 0, 0};
  for (const auto& x : state.positions) mu = mu + x;
  mu = (1.0 / static_cast<double>(n)) * mu;

  std::vector<Vec3> centered(n);
  Mat3 cov{};
  Vec3 c0{0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    centered[i] = state.positions[i] - mu;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) cov[a][b] += centered[i][a] * centered[i][b];
    c0 = c0 + cross(centered[i], state.velocities[i]);
  }
  for (auto& row : cov)
    for (double& x : row) x /= static_cast<double>(n);

  const auto eig = symmetric_eigen(cov);
  if (eig.values[0] - eig.values[1] < options.eigen_gap ||
      eig.values[1] - eig.values[2] < options.eigen_gap)
    throw CanonicalizationDegenerate("position covariance has repeated eigenvalues");
  if (norm(c0) <= options.chirality_floor)
    throw CanonicalizationDegenerate("chirality pseudoscalar vanishes");

  Vec3 e1 = eig.vectors[0];
  e1 = (1.0 / norm(e1)) * e1;
  e1 = axis_sign(e1, c0, centered, options, "e1") * e1;
  Vec3 e2 = eig.vectors[1];
  e2 = e2 - dot(e2, e1) * e1;
  e2 = (1.0 / norm(e2)) * e2;
  e2 = axis_sign(e2, c0, centered, options, "e2") * e2;
  const Vec3 e3 = cross(e1, e2);

  CanonicalFrame frame;
  frame.centroid = mu;
  for (int r = 0; r < 3; ++r) {
    frame.rotation[r][0] = e1[r];
    frame.rotation[r][1] = e2[r];
    frame.rotation[r][2] = e3[r];
  }
  frame.positions.resize(n);
  frame.velocities.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    frame.positions[i] = {dot(centered[i], e1), dot(centered[i], e2), dot(centered[i], e3)};
    const auto& v = state.velocities[i];
    frame.velocities[i] = {dot(v, e1), dot(v, e2), dot(v, e3)};
  }
  return frame;
}

std::vector<Vec3> decanonicalize(std::span<const Vec3> y, const CanonicalFrame& frame) {
  std::vector<Vec3> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = apply(frame.rotation, y[i]) + frame.centroid;
  return out;
}

}  // namespace atomkit
