#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "atomkit/geometry.hpp"
#include "atomkit/lifting.hpp"
#include "atomkit/optim.hpp"
#include "atomkit/tensor.hpp"

namespace atomkit {

enum class SymmetryMode { quasi_equivariant, canonicalized };

struct AtomModelConfig {
  std::size_t embedding_dim = 128;
  std::size_t n_layers = 5;
  std::size_t n_heads = 8;
  double rope_base = 1000.0;
  double rope_timescale = 1.0;
  double attention_dropout = 0.2;
  std::size_t mlp_hidden_multiple = 4;
  bool delta_prediction = false;
  SymmetryMode mode = SymmetryMode::quasi_equivariant;
  LiftingKind lifting = LiftingKind::equivariant;
  bool rwpe_enabled = false;
  std::size_t rwpe_length = 8;
  double rwpe_radius = 1.6;
  std::size_t output_heads = 1;
  bool zero_init_output = true;
  double norm_eps = 1e-6;

  std::size_t head_dim() const { return embedding_dim / n_heads; }
  void validate() const;
};

/// theta[p][k] = (omega_k / tau) * (t_p - t_0), omega_k = base^(-2k/d_h).
struct TropeAngles {
  std::size_t n_steps = 0;
  std::size_t half = 0;
  std::vector<double> theta;  // [n_steps, half]

  double operator()(std::size_t p, std::size_t k) const { return theta[p * half + k]; }
};

TropeAngles trope_angles(std::span<const double> timestamps, std::size_t head_dim, double base,
                         double timescale, double t0);

/// Rotates every row of a [(N*P), d_h] block with the angles of its timestep
/// (row = p * N + i), the same rotation for all N atoms of a timestep.
Tensor apply_trope(const Tensor& x, const TropeAngles& angles, std::size_t n_atoms);

/// lambda * v + (1 - lambda) * v1 with lambda = sigmoid(alpha), or 0.5 on the
/// first block regardless of alpha.
Tensor value_residual_mix(const Tensor& v, const Tensor& v1, const Tensor& alpha,
                          bool is_first_layer);

struct AttentionLayer {
  Tensor norm_z, norm_x, norm_v;
  Tensor query;                 // [d_v, d_v], shared across streams
  std::array<Tensor, 3> key;    // X, V, Z
  std::array<Tensor, 3> value;  // X, V, Z
  std::array<Tensor, 3> gate;   // gamma_X, gamma_V, gamma_Z
  Tensor output;                // [d_v, d_v]
  Tensor value_alpha;           // undefined on the first layer
  Tensor norm_mlp;
  Tensor mlp_in;   // [d_v, hidden]
  Tensor mlp_out;  // [hidden / 2, d_v]
};

/// Records post-softmax attention weights ([g*h, t, t] per stream per layer).
struct AttentionProbe {
  std::vector<Tensor> weights;
};

/// Rotary tables for a block of `groups` samples, each N atoms x P steps.
struct RopeTables {
  std::vector<double> cos, sin;
};

RopeTables make_rope_tables(std::span<const TropeAngles> per_group, std::size_t n_atoms);

struct AttentionContext {
  std::size_t n_heads = 1;
  std::size_t groups = 1;
  const RopeTables* rope = nullptr;
  double dropout = 0.0;
  bool training = false;
  std::mt19937_64* rng = nullptr;
  AttentionProbe* probe = nullptr;
  double norm_eps = 1e-6;
};

/// One heterogeneous temporal attention block: queries from Z, keys/values
/// from each of X, V, Z, gated sum, output projection. `first_values` holds
/// the first block's per-stream values; it is filled on the first layer.
Tensor heterogeneous_attention(const Tensor& z, const Tensor& x, const Tensor& v,
                               const AttentionLayer& layer, const AttentionContext& ctx,
                               std::array<Tensor, 3>& first_values, bool is_first_layer);

/// Samples sharing N and P laid out as duplicated node-time rows.
struct ModelBatch {
  std::size_t n_atoms = 0;
  std::size_t n_steps = 0;
  std::size_t n_samples = 0;
  std::vector<double> rows;           // [S * P * N * 6]
  std::vector<int> atomic_numbers;    // [S * P * N]
  std::vector<double> lags;           // [S * P], t_p - t_0

  std::size_t n_rows() const { return n_samples * n_steps * n_atoms; }
  void validate() const;
  // Copy p = 0 of sample s.
  MoleculeState input_state(std::size_t s) const;
};

/// Duplicates each state P times along the node-time axis. All states must
/// share N; `lags` (length P) apply to every sample.
ModelBatch make_model_batch(std::span<const MoleculeState> states, std::span<const double> lags);

using Frames = std::vector<std::vector<Vec3>>;  // [P][N]

class AtomModel {
 public:
  AtomModel(AtomModelConfig config, std::uint64_t seed);

  const AtomModelConfig& config() const { return config_; }
  ParameterList named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  /// Copies values in; names and shapes must match exactly.
  void load_parameters(const ParameterList& params);

  LiftingParams& lifting() { return lifting_; }
  std::vector<AttentionLayer>& layers() { return layers_; }
  Tensor& output_weight() { return out_weight_; }

  /// Predicted positions [S * P * N, 3], row (s * P + p) * N + i.
  Tensor forward(const ModelBatch& batch, bool training, std::mt19937_64* rng = nullptr,
                 AttentionProbe* probe = nullptr) const;

 private:
  Tensor trunk(const ModelBatch& batch, std::span<const double> rows, bool training,
               std::mt19937_64* rng, AttentionProbe* probe) const;

  AtomModelConfig config_;
  LiftingParams lifting_;
  std::vector<AttentionLayer> layers_;
  Tensor out_norm_, out_weight_, out_bias_;
};

/// F_theta(state)(t_p) for absolute timestamps t_p > state.time; returns P x N positions.
Frames atom_forward(const MoleculeState& state, std::span<const double> timestamps,
                    const AtomModel& model, bool training = false,
                    std::mt19937_64* rng = nullptr);

/// Reshapes a [S * P * N, 3] prediction into per-sample frames.
std::vector<Frames> unpack_frames(const Tensor& prediction, std::size_t n_samples,
                                  std::size_t n_steps, std::size_t n_atoms);

}  // namespace atomkit
