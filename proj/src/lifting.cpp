#include "atomkit/lifting.hpp"

#include <cmath>
#include <string>

namespace atomkit {

ChannelLayout make_channel_layout(std::size_t width, std::size_t rwpe_channels) {
  ChannelLayout layout;
  layout.width = width;
  layout.vector_columns = (width / 2) / 3 * 3;
  layout.vector_channels = layout.vector_columns / 3;
  layout.scalar_columns = width - layout.vector_columns;
  layout.rwpe_channels = rwpe_channels;
  if (layout.vector_channels == 0)
    throw ConfigError("embedding width " + std::to_string(width) +
                      " leaves no room for vector channels (need >= 6)");
  if (layout.scalar_columns <= rwpe_channels)
    throw ConfigError("embedding width " + std::to_string(width) + " has " +
                      std::to_string(layout.scalar_columns) +
                      " scalar channels, not enough for " + std::to_string(rwpe_channels) +
                      " RWPE channels plus learned features");
  return layout;
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = normal(rng);
  return Tensor::from(std::move(shape), std::move(values), true);
}

Tensor fan_in_tensor(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  return normal_tensor({fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

}  // namespace

LiftingParams LiftingParams::init(const ChannelLayout& layout, LiftingKind kind,
                                  std::mt19937_64& rng) {
  LiftingParams p;
  p.kind = kind;
  p.layout = layout;
  const std::size_t e = kAtomicEmbeddingWidth;
  const std::size_t c = layout.vector_channels;
  const std::size_t s = layout.scalar_columns;
  const std::size_t sz = s - layout.rwpe_channels;
  p.embedding = normal_tensor({kMaxAtomicNumber + 1, e}, 1.0, rng);
  if (kind == LiftingKind::equivariant) {
    p.x_vector = fan_in_tensor(1, c, rng);
    p.v_vector = fan_in_tensor(1, c, rng);
    p.z_vector = fan_in_tensor(2, c, rng);
    p.x_scalar = fan_in_tensor(1 + e, s, rng);
    p.v_scalar = fan_in_tensor(1 + e, s, rng);
    p.z_scalar = fan_in_tensor(2 + e, sz, rng);
    p.x_scalar_bias = Tensor::zeros({s}, true);
    p.v_scalar_bias = Tensor::zeros({s}, true);
    p.z_scalar_bias = Tensor::zeros({sz}, true);
  } else {
    const std::size_t w = layout.width;
    const std::size_t wz = w - layout.rwpe_channels;
    p.x_dense = fan_in_tensor(8 + e, w, rng);
    p.v_dense = fan_in_tensor(8 + e, w, rng);
    p.z_dense = fan_in_tensor(8 + e, wz, rng);
    p.x_dense_bias = Tensor::zeros({w}, true);
    p.v_dense_bias = Tensor::zeros({w}, true);
    p.z_dense_bias = Tensor::zeros({wz}, true);
  }
  return p;
}

void LiftingParams::append_parameters(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + "embedding", embedding});
  if (kind == LiftingKind::equivariant) {
    out.push_back({prefix + "x_vector", x_vector});
    out.push_back({prefix + "v_vector", v_vector});
    out.push_back({prefix + "z_vector", z_vector});
    out.push_back({prefix + "x_scalar", x_scalar});
    out.push_back({prefix + "v_scalar", v_scalar});
    out.push_back({prefix + "z_scalar", z_scalar});
    out.push_back({prefix + "x_scalar_bias", x_scalar_bias});
    out.push_back({prefix + "v_scalar_bias", v_scalar_bias});
    out.push_back({prefix + "z_scalar_bias", z_scalar_bias});
  } else {
    out.push_back({prefix + "x_dense", x_dense});
    out.push_back({prefix + "v_dense", v_dense});
    out.push_back({prefix + "z_dense", z_dense});
    out.push_back({prefix + "x_dense_bias", x_dense_bias});
    out.push_back({prefix + "v_dense_bias", v_dense_bias});
    out.push_back({prefix + "z_dense_bias", z_dense_bias});
  }
}

LiftedEmbedding lift_rows(std::span<const double> rows, std::span<const int> atomic_numbers,
                          const LiftingParams& params) {
  const std::size_t t = atomic_numbers.size();
  if (t == 0 || rows.size() != 6 * t)
    throw DimensionError("lift_rows: expected 6 values per row for " + std::to_string(t) +
                         " rows, got " + std::to_string(rows.size()));
  std::vector<double> pos(3 * t), vel(3 * t), both(6 * t), pos_norm(t), vel_norm(t);
  std::vector<std::size_t> species(t);
  for (std::size_t r = 0; r < t; ++r) {
    const double* row = rows.data() + 6 * r;
    for (int a = 0; a < 3; ++a) {
      pos[3 * r + a] = row[a];
      vel[3 * r + a] = row[3 + a];
      both[6 * r + a] = row[a];
      both[6 * r + 3 + a] = row[3 + a];
    }
    pos_norm[r] = augment_with_norm({row[0], row[1], row[2]})[3];
    vel_norm[r] = augment_with_norm({row[3], row[4], row[5]})[3];
    if (atomic_numbers[r] < 1 || static_cast<std::size_t>(atomic_numbers[r]) > kMaxAtomicNumber)
      throw ContractError("atomic number out of range [1, 118]: " +
                          std::to_string(atomic_numbers[r]));
    species[r] = static_cast<std::size_t>(atomic_numbers[r]);
  }
  const Tensor emb = gather_rows(params.embedding, species);
  const Tensor xn = Tensor::from({t, 1}, pos_norm);
  const Tensor vn = Tensor::from({t, 1}, vel_norm);

  LiftedEmbedding out;
  out.layout = params.layout;
  const std::size_t k = params.layout.rwpe_channels;
  auto pad_rwpe = [&](const Tensor& z) {
    return k == 0 ? z : concat_cols({z, Tensor::zeros({t, k})});
  };

  if (params.kind == LiftingKind::equivariant) {
    const Tensor xv = Tensor::from({t, 3}, std::move(pos));
    const Tensor vv = Tensor::from({t, 3}, std::move(vel));
    const Tensor zv = Tensor::from({t, 6}, std::move(both));
    const Tensor x_s = add_bias(matmul(concat_cols({xn, emb}), params.x_scalar), params.x_scalar_bias);
    const Tensor v_s = add_bias(matmul(concat_cols({vn, emb}), params.v_scalar), params.v_scalar_bias);
    const Tensor z_s =
        add_bias(matmul(concat_cols({xn, vn, emb}), params.z_scalar), params.z_scalar_bias);
    out.positions = concat_cols({vector_mix(xv, params.x_vector), x_s});
    out.velocities = concat_cols({vector_mix(vv, params.v_vector), v_s});
    out.phase = pad_rwpe(concat_cols({vector_mix(zv, params.z_vector), z_s}));
  } else {
    std::vector<double> raw(8 * t);
    for (std::size_t r = 0; r < t; ++r) {
      for (int a = 0; a < 6; ++a) raw[8 * r + a] = rows[6 * r + a];
      raw[8 * r + 6] = pos_norm[r];
      raw[8 * r + 7] = vel_norm[r];
    }
    const Tensor features = concat_cols({Tensor::from({t, 8}, std::move(raw)), emb});
    out.positions = add_bias(matmul(features, params.x_dense), params.x_dense_bias);
    out.velocities = add_bias(matmul(features, params.v_dense), params.v_dense_bias);
    out.phase = pad_rwpe(add_bias(matmul(features, params.z_dense), params.z_dense_bias));
  }
  return out;
}

LiftedEmbedding equivariant_lift(const MoleculeState& state, std::size_t n_steps,
                                 const LiftingParams& params) {
  state.validate();
  if (n_steps == 0) throw ContractError("equivariant_lift: P must be >= 1");
  const std::size_t n = state.size();
  std::vector<double> rows;
  std::vector<int> species;
  rows.reserve(6 * n * n_steps);
  for (std::size_t p = 0; p < n_steps; ++p)
    for (std::size_t i = 0; i < n; ++i) {
      rows.insert(rows.end(), state.positions[i].begin(), state.positions[i].end());
      rows.insert(rows.end(), state.velocities[i].begin(), state.velocities[i].end());
      species.push_back(state.atomic_numbers[i]);
    }
  auto out = lift_rows(rows, species, params);
  out.n_atoms = n;
  out.n_steps = n_steps;
  return out;
}

LiftedEmbedding attach_rwpe(const LiftedEmbedding& embedding, std::span<const double> rwpe,
                            std::size_t walk_length) {
  const std::size_t k = embedding.layout.rwpe_channels;
  if (walk_length != k || k == 0)
    throw ConfigError("RWPE length " + std::to_string(walk_length) +
                      " does not match the configured " + std::to_string(k) + " channels");
  const std::size_t n = embedding.n_atoms, p = embedding.n_steps;
  const std::size_t rows = embedding.phase.dim(0);
  if (n == 0 || p == 0 || rows % (n * p) != 0)
    throw DimensionError("attach_rwpe: embedding has no atom/timestep layout");
  const std::size_t groups = rows / (n * p);
  if (rwpe.size() != groups * n * k)
    throw DimensionError("attach_rwpe: expected " + std::to_string(groups * n * k) +
                         " RWPE values, got " + std::to_string(rwpe.size()));
  std::vector<double> block(rows * k);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t s = 0; s < p; ++s)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < k; ++c)
          block[((g * p + s) * n + i) * k + c] = rwpe[(g * n + i) * k + c];
  LiftedEmbedding out = embedding;
  const std::size_t w = embedding.layout.width;
  out.phase = concat_cols({slice_cols(embedding.phase, 0, w - k), Tensor::from({rows, k}, block)});
  return out;
}

}  // namespace atomkit
