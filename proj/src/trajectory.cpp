#include "atomkit/trajectory.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>

#include "atomkit/errors.hpp"

namespace atomkit {

static_assert(std::endian::native == std::endian::little, "ATRJ payload assumes a little-endian host");

void Trajectory::validate() const {
  if (atomic_numbers.empty()) throw ContractError("trajectory has no atoms");
  if (frames.empty()) throw ContractError("trajectory has no frames");
  if (!(dt > 0.0)) throw ContractError("trajectory dt must be positive");
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto& s = frames[f];
    s.validate();
    if (s.size() != n_atoms() || s.atomic_numbers != atomic_numbers)
      throw ContractError("frame " + std::to_string(f) + " disagrees with the trajectory's atoms");
  }
}

// ---- ATRJ -----------------------------------------------------------------

std::string encode_trajectory(const Trajectory& traj) {
  traj.validate();
  if (traj.name.empty() || traj.name.find('\n') != std::string::npos)
    throw ContractError("trajectory name must be a non-empty single line");
  char dt_text[64];
  std::snprintf(dt_text, sizeof dt_text, "%.17g", traj.dt);
  std::ostringstream head;
  head << "ATRJ 1\n" << traj.n_atoms() << ' ' << traj.n_frames() << ' ' << dt_text << ' '
       << traj.name << '\n';
  for (std::size_t i = 0; i < traj.n_atoms(); ++i)
    head << (i ? " " : "") << traj.atomic_numbers[i];
  head << '\n';
  std::string out = head.str();
  const std::size_t header = out.size();
  out.resize(header + traj.n_frames() * traj.n_atoms() * 6 * sizeof(double));
  char* p = out.data() + header;
  for (const auto& frame : traj.frames)
    for (std::size_t i = 0; i < traj.n_atoms(); ++i) {
      std::memcpy(p, frame.positions[i].data(), 3 * sizeof(double));
      std::memcpy(p + 3 * sizeof(double), frame.velocities[i].data(), 3 * sizeof(double));
      p += 6 * sizeof(double);
    }
  return out;
}

namespace {

std::string next_line(std::span<const char> bytes, std::size_t& pos, int line_no) {
  const auto begin = bytes.begin() + static_cast<std::ptrdiff_t>(pos);
  const auto nl = std::find(begin, bytes.end(), '\n');
  if (nl == bytes.end())
    throw FormatError("ATRJ line " + std::to_string(line_no) + ": unexpected end of header");
  std::string line(begin, nl);
  pos += line.size() + 1;
  return line;
}

}  // namespace

Trajectory decode_trajectory(std::span<const char> bytes) {
  std::size_t pos = 0;
  if (next_line(bytes, pos, 1) != "ATRJ 1")
    throw FormatError("ATRJ line 1: expected magic 'ATRJ 1'");

  const std::string meta = next_line(bytes, pos, 2);
  std::istringstream ms(meta);
  long long n = -1, t = -1;
  double dt = 0.0;
  if (!(ms >> n >> t >> dt) || n < 1 || t < 1 || !(dt > 0.0))
    throw FormatError("ATRJ line 2: expected 'N T dt name' with N, T >= 1 and dt > 0, got '" +
                      meta + "'");
  std::string name;
  std::getline(ms >> std::ws, name);
  if (name.empty()) throw FormatError("ATRJ line 2: missing trajectory name");

  const std::string species = next_line(bytes, pos, 3);
  std::istringstream ss(species);
  std::vector<int> numbers;
  for (long long z; ss >> z;) {
    if (z < 1 || z > 118) throw FormatError("ATRJ line 3: atomic number out of range: " + std::to_string(z));
    numbers.push_back(static_cast<int>(z));
  }
  if (!ss.eof()) throw FormatError("ATRJ line 3: non-integer atomic number");
  if (numbers.size() != static_cast<std::size_t>(n))
    throw FormatError("ATRJ line 3: header declares N = " + std::to_string(n) + " but lists " +
                      std::to_string(numbers.size()) + " atomic numbers");

  const std::size_t frame_bytes = static_cast<std::size_t>(n) * 6 * sizeof(double);
  const std::size_t expected = frame_bytes * static_cast<std::size_t>(t);
  const std::size_t available = bytes.size() - pos;
  if (available != expected)
    throw FormatError("ATRJ byte offset " + std::to_string(pos) + ": payload holds " +
                      std::to_string(available) + " bytes, header T = " + std::to_string(t) +
                      " needs " + std::to_string(expected) +
                      (available < expected ? " (truncated after frame " +
                                                  std::to_string(available / frame_bytes) + ")"
                                            : " (trailing data)"));

  Trajectory traj;
  traj.name = name;
  traj.atomic_numbers = numbers;
  traj.dt = dt;
  traj.frames.resize(static_cast<std::size_t>(t));
  const char* p = bytes.data() + pos;
  for (std::size_t f = 0; f < traj.frames.size(); ++f) {
    auto& s = traj.frames[f];
    s.atomic_numbers = numbers;
    s.time = traj.t0 + static_cast<double>(f) * dt;
    s.positions.resize(numbers.size());
    s.velocities.resize(numbers.size());
    for (std::size_t i = 0; i < numbers.size(); ++i) {
      std::memcpy(s.positions[i].data(), p, 3 * sizeof(double));
      std::memcpy(s.velocities[i].data(), p + 3 * sizeof(double), 3 * sizeof(double));
      p += 6 * sizeof(double);
    }
  }
  return traj;
}

void save_trajectory(const Trajectory& traj, const std::filesystem::path& path) {
  const std::string bytes = encode_trajectory(traj);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Trajectory load_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_trajectory(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---- toy MD ---------------------------------------------------------------

double ToySystem::potential_energy(std::span<const Vec3> x) const {
  double e = 0.0;
  const std::size_t n = size();
  if (potential == ToyPotential::harmonic) {
    for (std::size_t i = 0; i < n; ++i) e += 0.5 * stiffness * dot(x[i] - sites[i], x[i] - sites[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double d = norm(x[i] - x[j]) - rest_lengths[i * n + j];
        e += 0.5 * stiffness * d * d;
      }
  }
  return e;
}

double ToySystem::energy(const MoleculeState& s) const {
  double kinetic = 0.0;
  for (const auto& v : s.velocities) kinetic += 0.5 * dot(v, v);
  return kinetic + potential_energy(s.positions);
}

std::vector<Vec3> ToySystem::forces(std::span<const Vec3> x) const {
  const std::size_t n = size();
  std::vector<Vec3> f(n, Vec3{0, 0, 0});
  if (potential == ToyPotential::harmonic) {
    for (std::size_t i = 0; i < n; ++i) f[i] = -stiffness * (x[i] - sites[i]);
    return f;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const Vec3 r = x[i] - x[j];
      const double len = norm(r);
      if (len == 0.0) continue;
      const Vec3 fij = (-stiffness * (len - rest_lengths[i * n + j]) / len) * r;
      f[i] = f[i] + fij;
      f[j] = f[j] - fij;
    }
  return f;
}

ToySystem make_toy_system(ToyPotential potential, std::size_t n_atoms, double stiffness,
                          std::mt19937_64& rng, bool center) {
  if (n_atoms < 2) throw ContractError("toy system needs at least 2 atoms");
  ToySystem sys;
  sys.potential = potential;
  sys.stiffness = stiffness;
  std::uniform_real_distribution<double> bond(1.2, 1.5);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> element(0, 2);
  static constexpr int kElements[3] = {6, 7, 8};
  sys.sites.push_back({0, 0, 0});
  while (sys.sites.size() < n_atoms) {
    Vec3 dir{normal(rng), normal(rng), normal(rng)};
    const double len = norm(dir);
    if (len < 1e-6) continue;
    const Vec3 candidate = sys.sites.back() + (bond(rng) / len) * dir;
    bool clash = false;
    for (std::size_t k = 0; k + 1 < sys.sites.size(); ++k)
      clash = clash || norm(candidate - sys.sites[k]) < 1.0;
    if (!clash) sys.sites.push_back(candidate);
  }
  if (center) {
    Vec3 centre{0, 0, 0};
    for (const auto& x : sys.sites) centre = centre + (1.0 / static_cast<double>(n_atoms)) * x;
    for (auto& x : sys.sites) x = x - centre;
  }
  for (std::size_t i = 0; i < n_atoms; ++i) sys.atomic_numbers.push_back(kElements[element(rng)]);
  sys.rest_lengths.assign(n_atoms * n_atoms, 0.0);
  for (std::size_t i = 0; i < n_atoms; ++i)
    for (std::size_t j = 0; j < n_atoms; ++j)
      sys.rest_lengths[i * n_atoms + j] = norm(sys.sites[i] - sys.sites[j]);
  return sys;
}

void verlet_step(const ToySystem& sys, MoleculeState& state, double h) {
  const auto f0 = sys.forces(state.positions);
  for (std::size_t i = 0; i < state.size(); ++i) {
    state.velocities[i] = state.velocities[i] + (0.5 * h) * f0[i];
    state.positions[i] = state.positions[i] + h * state.velocities[i];
  }
  const auto f1 = sys.forces(state.positions);
  for (std::size_t i = 0; i < state.size(); ++i)
    state.velocities[i] = state.velocities[i] + (0.5 * h) * f1[i];
  state.time += h;
}

Trajectory integrate(const ToySystem& sys, MoleculeState initial, std::size_t frames, double dt,
                     std::size_t substeps, const std::string& name) {
  if (frames < 1 || !(dt > 0.0) || substeps < 1)
    throw ContractError("integrate: need frames >= 1, dt > 0, substeps >= 1");
  initial.validate();
  Trajectory traj;
  traj.name = name;
  traj.atomic_numbers = initial.atomic_numbers;
  traj.dt = dt;
  traj.t0 = initial.time;
  traj.frames.reserve(frames);
  MoleculeState s = std::move(initial);
  const double h = dt / static_cast<double>(substeps);
  for (std::size_t f = 0; f < frames; ++f) {
    if (f > 0)
      for (std::size_t k = 0; k < substeps; ++k) verlet_step(sys, s, h);
    s.time = traj.t0 + static_cast<double>(f) * dt;
    traj.frames.push_back(s);
  }
  return traj;
}

namespace {

// Subtracts the rigid-body angular velocity about the centroid (unit masses).
void remove_rotation(MoleculeState& s) {
  const double inv_n = 1.0 / static_cast<double>(s.size());
  Vec3 c{0, 0, 0};
  for (const auto& x : s.positions) c = c + inv_n * x;
  Vec3 l{0, 0, 0};
  Mat3 inertia{};
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Vec3 r = s.positions[i] - c;
    l = l + cross(r, s.velocities[i]);
    const double rr = dot(r, r);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) inertia[a][b] += (a == b ? rr : 0.0) - r[a] * r[b];
  }
  const double det = determinant(inertia);
  if (std::abs(det) < 1e-12) return;
  Mat3 inv{};
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      const int a1 = (b + 1) % 3, a2 = (b + 2) % 3, b1 = (a + 1) % 3, b2 = (a + 2) % 3;
      inv[a][b] = (inertia[a1][b1] * inertia[a2][b2] - inertia[a1][b2] * inertia[a2][b1]) / det;
    }
  const Vec3 omega = atomkit::apply(inv, l);
  for (std::size_t i = 0; i < s.size(); ++i)
    s.velocities[i] = s.velocities[i] - cross(omega, s.positions[i] - c);
}

}  // namespace

Trajectory generate_toy_trajectory(const ToyConfig& config) {
  if (config.n_atoms < 2 || config.steps < 2 || !(config.dt > 0.0))
    throw ContractError("toy trajectory needs N >= 2, steps >= 2, dt > 0");
  std::mt19937_64 rng(config.seed);
  const ToySystem sys = make_toy_system(config.potential, config.n_atoms, config.stiffness,
                                        rng, config.center);
  std::normal_distribution<double> normal(0.0, 1.0);
  MoleculeState s;
  s.atomic_numbers = sys.atomic_numbers;
  Vec3 mean_v{0, 0, 0};
  for (std::size_t i = 0; i < config.n_atoms; ++i) {
    s.positions.push_back(sys.sites[i] + config.displacement * Vec3{normal(rng), normal(rng), normal(rng)});
    s.velocities.push_back(config.velocity * Vec3{normal(rng), normal(rng), normal(rng)});
    mean_v = mean_v + (1.0 / static_cast<double>(config.n_atoms)) * s.velocities.back();
  }
  for (auto& v : s.velocities) v = v - mean_v;
  if (config.potential == ToyPotential::pairwise_spring) remove_rotation(s);
  const std::string name =
      config.potential == ToyPotential::harmonic ? "toy-harmonic" : "toy-pairwise-spring";
  return integrate(sys, std::move(s), config.steps, config.dt, config.substeps, name);
}

// ---- stability ----------------------------------------------------------------

StabilityReport stability_metrics(const Trajectory& traj) {
  if (traj.n_frames() < 2) throw ContractError("stability_metrics needs at least 2 frames");
  const double inv_n = 1.0 / static_cast<double>(traj.n_atoms());
  auto com = [&](const MoleculeState& s) {
    Vec3 c{0, 0, 0};
    for (const auto& x : s.positions) c = c + inv_n * x;
    return c;
  };
  StabilityReport r;
  const Vec3 c0 = com(traj.frames[0]);
  double motion = 0.0;
  for (std::size_t f = 1; f < traj.n_frames(); ++f) {
    r.com_drift = std::max(r.com_drift, norm(com(traj.frames[f]) - c0));
    double step = 0.0;
    for (std::size_t i = 0; i < traj.n_atoms(); ++i)
      step += norm(traj.frames[f].positions[i] - traj.frames[f - 1].positions[i]);
    motion += step * inv_n;
  }
  r.per_step_motion = motion / static_cast<double>(traj.n_frames() - 1);
  return r;
}

void write_stability_csv(std::ostream& out,
                         std::span<const std::pair<std::string, StabilityReport>> rows) {
  out << "name,com_drift,per_step_motion\n";
  char buf[128];
  for (const auto& [name, r] : rows) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", r.com_drift, r.per_step_motion);
    out << name << buf;
  }
}

// ---- loader -----------------------------------------------------------------

std::vector<std::size_t> frame_offsets(std::span<const double> lags, double dt) {
  if (!(dt > 0.0)) throw ContractError("frame_offsets: dt must be positive");
  std::vector<std::size_t> out;
  out.reserve(lags.size());
  for (double lag : lags) {
    if (lag < 0.0) throw ContractError("frame_offsets: negative lag");
    out.push_back(static_cast<std::size_t>(std::llround(lag / dt)));
  }
  return out;
}

FrameLoader::FrameLoader(const Trajectory& traj, std::size_t n_steps, std::size_t horizon_frames,
                         std::size_t begin, std::size_t end, std::size_t stride)
    : traj_(&traj), n_steps_(n_steps), n_atoms_(traj.n_atoms()), horizon_(horizon_frames) {
  if (n_steps == 0 || stride == 0) throw ContractError("FrameLoader: P and stride must be >= 1");
  end = std::min(end, traj.n_frames());
  for (std::size_t s = begin; s + horizon_frames < end; s += stride) starts_.push_back(s);
  if (starts_.empty())
    throw ContractError("trajectory '" + traj.name + "' frames [" + std::to_string(begin) + ", " +
                        std::to_string(end) + ") are too short for a horizon of " +
                        std::to_string(horizon_frames) + " frames");
  order_.resize(starts_.size());
  for (std::size_t w = 0; w < order_.size(); ++w) order_[w] = w;

  const std::size_t block = n_steps_ * n_atoms_ * 6;
  rows_.resize(starts_.size() * block);
  for (std::size_t w = 0; w < starts_.size(); ++w) {
    const auto& frame = traj.frames[starts_[w]];
    double* dst = rows_.data() + w * block;
    for (std::size_t p = 0; p < n_steps_; ++p)
      for (std::size_t i = 0; i < n_atoms_; ++i, dst += 6) {
        std::copy(frame.positions[i].begin(), frame.positions[i].end(), dst);
        std::copy(frame.velocities[i].begin(), frame.velocities[i].end(), dst + 3);
      }
  }
  for (std::size_t p = 0; p < n_steps_; ++p)
    species_.insert(species_.end(), traj.atomic_numbers.begin(), traj.atomic_numbers.end());
}

std::size_t FrameLoader::n_batches(std::size_t batch_size) const {
  if (batch_size == 0) throw ContractError("batch size must be >= 1");
  return (starts_.size() + batch_size - 1) / batch_size;
}

std::size_t FrameLoader::allocated_bytes() const {
  return rows_.capacity() * sizeof(double) + species_.capacity() * sizeof(int) +
         (starts_.capacity() + order_.capacity()) * sizeof(std::size_t);
}

void FrameLoader::shuffle(std::mt19937_64& rng) {
  // Fisher-Yates with an explicit draw so the order is portable across standard libraries.
  for (std::size_t i = order_.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order_[i - 1], order_[j]);
  }
}

void FrameLoader::fill(std::size_t index, std::size_t batch_size,
                       std::span<const std::size_t> offsets, ModelBatch& batch,
                       std::vector<double>& targets) const {
  const std::size_t first = index * batch_size;
  if (batch_size == 0 || first >= order_.size())
    throw ContractError("FrameLoader::fill: batch index out of range");
  const std::size_t count = std::min(batch_size, order_.size() - first);
  fill_windows(std::span(order_).subspan(first, count), offsets, batch, targets);
}

void FrameLoader::fill_windows(std::span<const std::size_t> windows,
                               std::span<const std::size_t> offsets, ModelBatch& batch,
                               std::vector<double>& targets) const {
  if (offsets.size() != n_steps_)
    throw ContractError("FrameLoader::fill: expected " + std::to_string(n_steps_) + " offsets");
  for (auto o : offsets)
    if (o > horizon_) throw ContractError("FrameLoader::fill: offset beyond the loader horizon");
  if (windows.empty()) throw ContractError("FrameLoader::fill: empty batch");
  const std::size_t count = windows.size();
  const std::size_t block = n_steps_ * n_atoms_ * 6;

  batch.n_atoms = n_atoms_;
  batch.n_steps = n_steps_;
  batch.n_samples = count;
  batch.rows.resize(count * block);
  batch.atomic_numbers.resize(count * species_.size());
  batch.lags.resize(count * n_steps_);
  targets.resize(count * n_steps_ * n_atoms_ * 3);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t w = windows[s];
    if (w >= starts_.size()) throw ContractError("FrameLoader::fill: window index out of range");
    std::copy_n(rows_.data() + w * block, block, batch.rows.data() + s * block);
    std::copy(species_.begin(), species_.end(), batch.atomic_numbers.begin() + s * species_.size());
    for (std::size_t p = 0; p < n_steps_; ++p) {
      batch.lags[s * n_steps_ + p] = static_cast<double>(offsets[p]) * traj_->dt;
      const auto& frame = traj_->frames[starts_[w] + offsets[p]];
      double* dst = targets.data() + ((s * n_steps_ + p) * n_atoms_) * 3;
      for (std::size_t i = 0; i < n_atoms_; ++i)
        std::copy(frame.positions[i].begin(), frame.positions[i].end(), dst + 3 * i);
    }
  }
}

}  // namespace atomkit
