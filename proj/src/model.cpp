#include "atomkit/model.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "atomkit/graph_features.hpp"

namespace atomkit {

void AtomModelConfig::validate() const {
  if (n_heads == 0 || embedding_dim % n_heads != 0)
    throw ConfigError("embedding_dim " + std::to_string(embedding_dim) +
                      " is not divisible by n_heads " + std::to_string(n_heads));
  if (head_dim() % 2 != 0)
    throw ConfigError("per-head width d_h = " + std::to_string(head_dim()) + " must be even");
  if (n_layers == 0) throw ConfigError("n_layers must be >= 1");
  if (!(attention_dropout >= 0.0 && attention_dropout < 1.0))
    throw ConfigError("attention_dropout must lie in [0, 1)");
  if (!(rope_base > 0.0) || !(rope_timescale > 0.0))
    throw ConfigError("rope_base and rope_timescale must be positive");
  if (mlp_hidden_multiple == 0 || (mlp_hidden_multiple * embedding_dim) % 2 != 0)
    throw ConfigError("mlp hidden width must be a positive even number");
  if (rwpe_enabled && rwpe_length == 0) throw ConfigError("rwpe_length must be >= 1");
  if (!(rwpe_radius > 0.0)) throw ConfigError("rwpe_radius must be positive");
  if (output_heads != 1)
    throw ConfigError("output_heads = " + std::to_string(output_heads) +
                      " is not supported; only a single output projection is implemented");
  make_channel_layout(embedding_dim, rwpe_enabled ? rwpe_length : 0);
}

// ---- T-RoPE ---------------------------------------------------------------

TropeAngles trope_angles(std::span<const double> timestamps, std::size_t head_dim, double base,
                         double timescale, double t0) {
  if (head_dim == 0 || head_dim % 2 != 0) throw ContractError("trope_angles: d_h must be even");
  if (!(timescale > 0.0) || !(base > 0.0))
    throw ContractError("trope_angles: base and timescale must be positive");
  TropeAngles a;
  a.n_steps = timestamps.size();
  a.half = head_dim / 2;
  a.theta.resize(a.n_steps * a.half);
  for (std::size_t k = 0; k < a.half; ++k) {
    const double omega =
        std::pow(base, -2.0 * static_cast<double>(k) / static_cast<double>(head_dim));
    for (std::size_t p = 0; p < a.n_steps; ++p)
      a.theta[p * a.half + k] = omega / timescale * (timestamps[p] - t0);
  }
  return a;
}

RopeTables make_rope_tables(std::span<const TropeAngles> per_group, std::size_t n_atoms) {
  RopeTables t;
  for (const auto& a : per_group)
    for (std::size_t p = 0; p < a.n_steps; ++p)
      for (std::size_t i = 0; i < n_atoms; ++i)
        for (std::size_t k = 0; k < a.half; ++k) {
          t.cos.push_back(std::cos(a(p, k)));
          t.sin.push_back(std::sin(a(p, k)));
        }
  return t;
}

Tensor apply_trope(const Tensor& x, const TropeAngles& angles, std::size_t n_atoms) {
  if (x.rank() != 2 || x.dim(1) != 2 * angles.half || x.dim(0) != n_atoms * angles.n_steps)
    throw DimensionError("apply_trope: expected [" + std::to_string(n_atoms * angles.n_steps) +
                         "," + std::to_string(2 * angles.half) + "], got " +
                         shape_string(x.shape()));
  const RopeTables tables = make_rope_tables(std::span(&angles, 1), n_atoms);
  const Tensor shaped = reshape(x, {1, x.dim(0), x.dim(1)});
  return reshape(rotate_pairs(shaped, tables.cos, tables.sin, 1), x.shape());
}

Tensor value_residual_mix(const Tensor& v, const Tensor& v1, const Tensor& alpha,
                          bool is_first_layer) {
  if (v.shape() != v1.shape())
    throw DimensionError("value_residual_mix: shape mismatch " + shape_string(v.shape()) +
                         " vs " + shape_string(v1.shape()));
  if (is_first_layer) return scale(add(v, v1), 0.5);
  return add(v1, mul_scalar(sub(v, v1), sigmoid(alpha)));
}

// ---- attention --------------------------------------------------------------

Tensor heterogeneous_attention(const Tensor& z, const Tensor& x, const Tensor& v,
                               const AttentionLayer& layer, const AttentionContext& ctx,
                               std::array<Tensor, 3>& first_values, bool is_first_layer) {
  if (!ctx.rope) throw ContractError("heterogeneous_attention: missing rotary tables");
  const std::size_t h = ctx.n_heads;
  const std::size_t d_h = z.dim(1) / h;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_h));
  const Tensor nz = rms_norm(z, layer.norm_z, ctx.norm_eps);
  const std::array<Tensor, 3> streams{rms_norm(x, layer.norm_x, ctx.norm_eps),
                                      rms_norm(v, layer.norm_v, ctx.norm_eps), nz};
  const Tensor q =
      rotate_pairs(split_heads(matmul(nz, layer.query), h, ctx.groups), ctx.rope->cos,
                   ctx.rope->sin, h);
  Tensor acc;
  for (std::size_t f = 0; f < 3; ++f) {
    const Tensor k = rotate_pairs(split_heads(matmul(streams[f], layer.key[f]), h, ctx.groups),
                                  ctx.rope->cos, ctx.rope->sin, h);
    Tensor val = split_heads(matmul(streams[f], layer.value[f]), h, ctx.groups);
    if (is_first_layer) first_values[f] = val;
    val = value_residual_mix(val, first_values[f], layer.value_alpha, is_first_layer);
    Tensor w = softmax(scale(matmul_nt(q, k), inv_sqrt), 2);
    if (ctx.probe) ctx.probe->weights.push_back(w);
    if (ctx.training && ctx.dropout > 0.0) {
      if (!ctx.rng) throw ContractError("attention dropout in training mode needs an rng");
      w = dropout(w, ctx.dropout, true, *ctx.rng);
    }
    const Tensor o = mul_scalar(matmul(w, val), layer.gate[f]);
    acc = acc.defined() ? add(acc, o) : o;
  }
  return matmul(merge_heads(acc, h), layer.output);
}

// ---- batches --------------------------------------------------------------

void ModelBatch::validate() const {
  if (n_atoms == 0 || n_steps == 0 || n_samples == 0)
    throw ContractError("ModelBatch: N, P and sample count must be >= 1");
  if (rows.size() != 6 * n_rows() || atomic_numbers.size() != n_rows() ||
      lags.size() != n_samples * n_steps)
    throw DimensionError("ModelBatch: buffer sizes do not match N=" + std::to_string(n_atoms) +
                         " P=" + std::to_string(n_steps) + " S=" + std::to_string(n_samples));
}

MoleculeState ModelBatch::input_state(std::size_t s) const {
  MoleculeState st;
  const std::size_t base = s * n_steps * n_atoms;
  for (std::size_t i = 0; i < n_atoms; ++i) {
    const double* r = rows.data() + 6 * (base + i);
    st.positions.push_back({r[0], r[1], r[2]});
    st.velocities.push_back({r[3], r[4], r[5]});
    st.atomic_numbers.push_back(atomic_numbers[base + i]);
  }
  return st;
}

ModelBatch make_model_batch(std::span<const MoleculeState> states, std::span<const double> lags) {
  if (states.empty()) throw ContractError("make_model_batch: no states");
  if (lags.empty()) throw ContractError("make_model_batch: no timesteps");
  ModelBatch b;
  b.n_atoms = states[0].size();
  b.n_steps = lags.size();
  b.n_samples = states.size();
  b.rows.reserve(6 * b.n_rows());
  b.atomic_numbers.reserve(b.n_rows());
  for (const auto& st : states) {
    st.validate();
    if (st.size() != b.n_atoms) throw ContractError("make_model_batch: states differ in N");
    for (std::size_t p = 0; p < b.n_steps; ++p)
      for (std::size_t i = 0; i < b.n_atoms; ++i) {
        b.rows.insert(b.rows.end(), st.positions[i].begin(), st.positions[i].end());
        b.rows.insert(b.rows.end(), st.velocities[i].begin(), st.velocities[i].end());
        b.atomic_numbers.push_back(st.atomic_numbers[i]);
      }
    b.lags.insert(b.lags.end(), lags.begin(), lags.end());
  }
  return b;
}

// ---- model ------------------------------------------------------------------

namespace {

Tensor init_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(rows)));
  std::vector<double> values(rows * cols);
  for (double& x : values) x = normal(rng);
  return Tensor::from({rows, cols}, std::move(values), true);
}

}  // namespace

AtomModel::AtomModel(AtomModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config_.embedding_dim;
  const auto layout = make_channel_layout(d, config_.rwpe_enabled ? config_.rwpe_length : 0);
  lifting_ = LiftingParams::init(layout, config_.lifting, rng);
  const std::size_t hidden = config_.mlp_hidden_multiple * d;
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    AttentionLayer layer;
    layer.norm_z = Tensor::full({d}, 1.0, true);
    layer.norm_x = Tensor::full({d}, 1.0, true);
    layer.norm_v = Tensor::full({d}, 1.0, true);
    layer.query = init_matrix(d, d, rng);
    for (std::size_t f = 0; f < 3; ++f) {
      layer.key[f] = init_matrix(d, d, rng);
      layer.value[f] = init_matrix(d, d, rng);
      layer.gate[f] = Tensor::scalar(1.0 / 3.0, true);
    }
    layer.output = init_matrix(d, d, rng);
    if (l > 0) layer.value_alpha = Tensor::scalar(0.0, true);
    layer.norm_mlp = Tensor::full({d}, 1.0, true);
    layer.mlp_in = init_matrix(d, hidden, rng);
    layer.mlp_out = init_matrix(hidden / 2, d, rng);
    layers_.push_back(std::move(layer));
  }
  out_norm_ = Tensor::full({d}, 1.0, true);
  out_weight_ = config_.zero_init_output ? Tensor::zeros({d, 3}, true) : init_matrix(d, 3, rng);
  out_bias_ = Tensor::zeros({3}, true);
}

ParameterList AtomModel::named_parameters() const {
  ParameterList out;
  lifting_.append_parameters(out, "lift.");
  static const char* streams[3] = {"x", "v", "z"};
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    out.push_back({p + "norm_z", L.norm_z});
    out.push_back({p + "norm_x", L.norm_x});
    out.push_back({p + "norm_v", L.norm_v});
    out.push_back({p + "query", L.query});
    for (std::size_t f = 0; f < 3; ++f) {
      out.push_back({p + "key_" + streams[f], L.key[f]});
      out.push_back({p + "value_" + streams[f], L.value[f]});
      out.push_back({p + "gate_" + streams[f], L.gate[f]});
    }
    out.push_back({p + "output", L.output});
    if (L.value_alpha.defined()) out.push_back({p + "value_alpha", L.value_alpha});
    out.push_back({p + "norm_mlp", L.norm_mlp});
    out.push_back({p + "mlp_in", L.mlp_in});
    out.push_back({p + "mlp_out", L.mlp_out});
  }
  out.push_back({"out.norm", out_norm_});
  out.push_back({"out.weight", out_weight_});
  out.push_back({"out.bias", out_bias_});
  return out;
}

std::vector<Tensor> AtomModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& np : named_parameters()) out.push_back(np.value);
  return out;
}

std::size_t AtomModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

void AtomModel::load_parameters(const ParameterList& params) {
  auto mine = named_parameters();
  std::map<std::string, const Tensor*> incoming;
  for (const auto& np : params) incoming[np.name] = &np.value;
  std::ostringstream diff;
  for (const auto& np : mine) {
    auto it = incoming.find(np.name);
    if (it == incoming.end()) {
      diff << "  missing " << np.name << " " << shape_string(np.value.shape()) << "\n";
    } else if (it->second->shape() != np.value.shape()) {
      diff << "  " << np.name << ": checkpoint " << shape_string(it->second->shape())
           << " vs model " << shape_string(np.value.shape()) << "\n";
    }
    incoming.erase(np.name);
  }
  for (const auto& [name, t] : incoming)
    diff << "  unexpected " << name << " " << shape_string(t->shape()) << "\n";
  if (!diff.str().empty())
    throw ConfigError("checkpoint does not match model configuration:\n" + diff.str());
  std::map<std::string, const Tensor*> lookup;
  for (const auto& np : params) lookup[np.name] = &np.value;
  for (auto& np : mine) {
    auto src = lookup[np.name]->data();
    auto dst = np.value.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

Tensor AtomModel::trunk(const ModelBatch& batch, std::span<const double> rows, bool training,
                        std::mt19937_64* rng, AttentionProbe* probe) const {
  const std::size_t n = batch.n_atoms, p = batch.n_steps, s = batch.n_samples;
  LiftedEmbedding lifted = lift_rows(rows, batch.atomic_numbers, lifting_);
  lifted.n_atoms = n;
  lifted.n_steps = p;
  if (config_.rwpe_enabled) {
    std::vector<double> walk;
    walk.reserve(s * n * config_.rwpe_length);
    std::vector<Vec3> pos(n);
    for (std::size_t g = 0; g < s; ++g) {
      const double* base = rows.data() + 6 * g * p * n;
      for (std::size_t i = 0; i < n; ++i) pos[i] = {base[6 * i], base[6 * i + 1], base[6 * i + 2]};
      const auto enc = rwpe(radius_graph(pos, config_.rwpe_radius), config_.rwpe_length);
      walk.insert(walk.end(), enc.values.begin(), enc.values.end());
    }
    lifted = attach_rwpe(lifted, walk, config_.rwpe_length);
  }

  std::vector<TropeAngles> angles;
  angles.reserve(s);
  for (std::size_t g = 0; g < s; ++g)
    angles.push_back(trope_angles(std::span(batch.lags).subspan(g * p, p), config_.head_dim(),
                                  config_.rope_base, config_.rope_timescale, 0.0));
  const RopeTables tables = make_rope_tables(angles, n);

  AttentionContext ctx;
  ctx.n_heads = config_.n_heads;
  ctx.groups = s;
  ctx.rope = &tables;
  ctx.dropout = config_.attention_dropout;
  ctx.training = training;
  ctx.rng = rng;
  ctx.probe = probe;
  ctx.norm_eps = config_.norm_eps;

  Tensor z = lifted.phase;
  std::array<Tensor, 3> first_values;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    z = add(z, heterogeneous_attention(z, lifted.positions, lifted.velocities, L, ctx,
                                       first_values, l == 0));
    const Tensor h = matmul(swiglu(matmul(rms_norm(z, L.norm_mlp, config_.norm_eps), L.mlp_in)),
                            L.mlp_out);
    z = add(z, h);
  }
  return add_bias(matmul(rms_norm(z, out_norm_, config_.norm_eps), out_weight_), out_bias_);
}

Tensor AtomModel::forward(const ModelBatch& batch, bool training, std::mt19937_64* rng,
                          AttentionProbe* probe) const {
  batch.validate();
  const std::size_t n = batch.n_atoms, p = batch.n_steps, s = batch.n_samples;
  const std::size_t total = batch.n_rows();

  const bool canonical = config_.mode == SymmetryMode::canonicalized;
  std::vector<double> rows;
  std::vector<Mat3> frames(s, identity3());
  std::vector<Vec3> centroids(s, Vec3{0, 0, 0});
  if (canonical) {
    rows = batch.rows;
    for (std::size_t g = 0; g < s; ++g) {
      try {
        const CanonicalFrame cf = canonicalize(batch.input_state(g));
        frames[g] = cf.rotation;
        centroids[g] = cf.centroid;
        for (std::size_t step = 0; step < p; ++step)
          for (std::size_t i = 0; i < n; ++i) {
            double* r = rows.data() + 6 * ((g * p + step) * n + i);
            for (int a = 0; a < 3; ++a) {
              r[a] = cf.positions[i][a];
              r[3 + a] = cf.velocities[i][a];
            }
          }
      } catch (const CanonicalizationDegenerate&) {
        // Degenerate geometry: this sample goes through the quasi-equivariant path.
      }
    }
  }
  const std::span<const double> used = canonical ? std::span<const double>(rows) : batch.rows;

  Tensor out = trunk(batch, used, training, rng, probe);
  if (config_.delta_prediction) {
    std::vector<double> base(3 * total);
    for (std::size_t r = 0; r < total; ++r)
      for (int a = 0; a < 3; ++a) base[3 * r + a] = used[6 * r + a];
    out = add(out, Tensor::from({total, 3}, std::move(base)));
  }
  if (canonical) {
    std::vector<double> qt(9 * s), mu(3 * total);
    for (std::size_t g = 0; g < s; ++g) {
      // y Q^T: right-multiply row vectors by Q^T.
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) qt[9 * g + 3 * i + j] = frames[g][j][i];
      for (std::size_t r = 0; r < p * n; ++r)
        for (int a = 0; a < 3; ++a) mu[3 * (g * p * n + r) + a] = centroids[g][a];
    }
    out = reshape(matmul(reshape(out, {s, p * n, 3}), Tensor::from({s, 3, 3}, std::move(qt))),
                  {total, 3});
    out = add(out, Tensor::from({total, 3}, std::move(mu)));
  }
  return out;
}

std::vector<Frames> unpack_frames(const Tensor& prediction, std::size_t n_samples,
                                  std::size_t n_steps, std::size_t n_atoms) {
  if (prediction.rank() != 2 || prediction.dim(1) != 3 ||
      prediction.dim(0) != n_samples * n_steps * n_atoms)
    throw DimensionError("unpack_frames: unexpected prediction shape " +
                         shape_string(prediction.shape()));
  auto d = prediction.data();
  std::vector<Frames> out(n_samples, Frames(n_steps, std::vector<Vec3>(n_atoms)));
  for (std::size_t s = 0; s < n_samples; ++s)
    for (std::size_t p = 0; p < n_steps; ++p)
      for (std::size_t i = 0; i < n_atoms; ++i) {
        const std::size_t r = (s * n_steps + p) * n_atoms + i;
        out[s][p][i] = {d[3 * r], d[3 * r + 1], d[3 * r + 2]};
      }
  return out;
}

Frames atom_forward(const MoleculeState& state, std::span<const double> timestamps,
                    const AtomModel& model, bool training, std::mt19937_64* rng) {
  state.validate();
  if (timestamps.empty()) throw ContractError("atom_forward: no query timestamps");
  std::vector<double> lags;
  for (std::size_t k = 0; k < timestamps.size(); ++k) {
    if (timestamps[k] < state.time)
      throw ContractError("atom_forward: timestamp precedes the input state's time");
    if (k > 0 && !(timestamps[k] > timestamps[k - 1]))
      throw ContractError("atom_forward: timestamps must be strictly increasing");
    lags.push_back(timestamps[k] - state.time);
  }
  const ModelBatch batch = make_model_batch(std::span(&state, 1), lags);
  if (training) return unpack_frames(model.forward(batch, true, rng), 1, lags.size(), state.size())[0];
  NoGradGuard guard;
  return unpack_frames(model.forward(batch, false), 1, lags.size(), state.size())[0];
}

}  // namespace atomkit
