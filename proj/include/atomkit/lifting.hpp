#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "atomkit/geometry.hpp"
#include "atomkit/optim.hpp"
#include "atomkit/tensor.hpp"

namespace atomkit {

/// Split of the d_v embedding axis. Columns [0, vector_columns) hold
/// `vector_channels` stacked 3-vectors (channel c at 3c..3c+2) that rotate
/// with the input; the remaining columns are rotation-invariant scalars. When
/// RWPE is enabled the last `rwpe_channels` scalar columns of Z carry it.
struct ChannelLayout {
  std::size_t width = 0;
  std::size_t vector_channels = 0;
  std::size_t vector_columns = 0;
  std::size_t scalar_columns = 0;
  std::size_t rwpe_channels = 0;
};

ChannelLayout make_channel_layout(std::size_t width, std::size_t rwpe_channels = 0);

enum class LiftingKind { equivariant, linear };

inline constexpr std::size_t kMaxAtomicNumber = 118;
inline constexpr std::size_t kAtomicEmbeddingWidth = 16;

/// Learned weights of the lifting stage. The `linear` kind replaces the
/// equivariant maps with dense layers over raw coordinates (ablation only).
struct LiftingParams {
  LiftingKind kind = LiftingKind::equivariant;
  ChannelLayout layout;
  Tensor embedding;  // [119, 16], row = atomic number

  // equivariant
  Tensor x_vector, v_vector, z_vector;  // [1,C], [1,C], [2,C]
  Tensor x_scalar, v_scalar, z_scalar;  // [1+E,S], [1+E,S], [2+E,S-K]
  Tensor x_scalar_bias, v_scalar_bias, z_scalar_bias;

  // linear
  Tensor x_dense, v_dense, z_dense;  // [8+E, d_v] (z: d_v-K)
  Tensor x_dense_bias, v_dense_bias, z_dense_bias;

  static LiftingParams init(const ChannelLayout& layout, LiftingKind kind, std::mt19937_64& rng);
  void append_parameters(ParameterList& out, const std::string& prefix) const;
};

/// Lifted features for P timestep copies of N atoms, rows atom-major within
/// each timestep block (row = p * N + i).
struct LiftedEmbedding {
  Tensor positions;   // X
  Tensor velocities;  // V
  Tensor phase;       // Z
  ChannelLayout layout;
  std::size_t n_atoms = 0;
  std::size_t n_steps = 0;
};

/// Lifts pre-duplicated node-time rows.
/// rows: [T, 6] flattened (x y z vx vy vz), atomic_numbers: one per row.
LiftedEmbedding lift_rows(std::span<const double> rows, std::span<const int> atomic_numbers,
                          const LiftingParams& params);

/// Duplicates the state P times along the node-time axis and lifts it.
LiftedEmbedding equivariant_lift(const MoleculeState& state, std::size_t n_steps,
                                 const LiftingParams& params);

/// Self-return probabilities (rows = atoms, cols = walk lengths) written into
/// the RWPE columns of Z for every timestep copy of each atom. `rwpe` holds
/// one [N, K] block per group of N*P rows.
LiftedEmbedding attach_rwpe(const LiftedEmbedding& embedding, std::span<const double> rwpe,
                            std::size_t walk_length);

}  // namespace atomkit
