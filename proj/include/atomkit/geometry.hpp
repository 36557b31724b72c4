#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace atomkit {

using Vec3 = std::array<double, 3>;
// Row-major 3x3.
using Mat3 = std::array<std::array<double, 3>, 3>;

/// One snapshot of a molecular system. Positions in Angstrom, velocities in
/// Angstrom/fs, time in fs.
struct MoleculeState {
  std::vector<Vec3> positions;
  std::vector<Vec3> velocities;
  std::vector<int> atomic_numbers;
  double time = 0.0;

  std::size_t size() const { return positions.size(); }
  // Throws ContractError when the arrays disagree or N == 0.
  void validate() const;
};

Vec3 operator+(const Vec3& a, const Vec3& b);
Vec3 operator-(const Vec3& a, const Vec3& b);
Vec3 operator*(double s, const Vec3& a);
double dot(const Vec3& a, const Vec3& b);
Vec3 cross(const Vec3& a, const Vec3& b);
double norm(const Vec3& a);

Mat3 identity3();
Mat3 transpose(const Mat3& m);
Mat3 matmul(const Mat3& a, const Mat3& b);
double determinant(const Mat3& m);
Vec3 apply(const Mat3& m, const Vec3& v);

/// (x, y, z, |v|)
std::array<double, 4> augment_with_norm(const Vec3& v);

/// Uniform SO(3) sample drawn from a unit quaternion.
Mat3 random_rotation(std::uint64_t seed);
Mat3 random_rotation(std::mt19937_64& rng);

/// Positions -> R x + t, velocities -> R v.
MoleculeState rigid_motion(const MoleculeState& state, const Mat3& rotation,
                           const Vec3& translation);

struct SymmetricEigen3 {
  std::array<double, 3> values;   // descending
  std::array<Vec3, 3> vectors;    // vectors[k] pairs with values[k]
};

/// Cyclic Jacobi eigen-decomposition of a symmetric 3x3 matrix.
SymmetricEigen3 symmetric_eigen(const Mat3& s);

class CanonicalizationDegenerate : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CanonicalFrame {
  Mat3 rotation{};   // columns e1, e2, e3
  Vec3 centroid{};
  std::vector<Vec3> positions;
  std::vector<Vec3> velocities;
};

struct CanonicalizeOptions {
  double eigen_gap = 1e-8;
  double chirality_floor = 1e-10;
};

/// Removes translation and rotation: centre on the centroid, align to the
/// descending eigenbasis of the position covariance, fix axis signs with the
/// angular-momentum pseudoscalar. Throws CanonicalizationDegenerate when any
/// of those steps is ill-defined.
CanonicalFrame canonicalize(const MoleculeState& state, const CanonicalizeOptions& options = {});

/// y Q^T + mu per row.
std::vector<Vec3> decanonicalize(std::span<const Vec3> y, const CanonicalFrame& frame);

}  // namespace atomkit
