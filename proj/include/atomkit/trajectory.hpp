#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "atomkit/geometry.hpp"
#include "atomkit/model.hpp"

namespace atomkit {

/// Frames at times t0 + i * dt sharing one set of atomic numbers.
struct Trajectory {
  std::string name;
  std::vector<int> atomic_numbers;
  double dt = 1.0;
  double t0 = 0.0;
  std::vector<MoleculeState> frames;

  std::size_t n_atoms() const { return atomic_numbers.size(); }
  std::size_t n_frames() const { return frames.size(); }
  void validate() const;
};

// ATRJ v1: "ATRJ 1\n", "N T dt name\n", atomic numbers line, then
// T * N * 6 little-endian f64 (x y z vx vy vz).
std::string encode_trajectory(const Trajectory& traj);
Trajectory decode_trajectory(std::span<const char> bytes);
void save_trajectory(const Trajectory& traj, const std::filesystem::path& path);
Trajectory load_trajectory(const std::filesystem::path& path);

// ---- toy molecular dynamics ------------------------------------------------

enum class ToyPotential { harmonic, pairwise_spring };

struct ToyConfig {
  ToyPotential potential = ToyPotential::harmonic;
  std::size_t n_atoms = 5;
  std::size_t steps = 5000;     // frames written
  double dt = 1.0;              // fs between frames
  std::size_t substeps = 10;    // integrator steps per frame
  double stiffness = 1e-3;      // spring constant, unit masses
  double displacement = 0.1;    // initial position perturbation std (Angstrom)
  double velocity = 0.01;       // initial velocity std (Angstrom/fs)
  bool center = false;          // translate the sites so their centroid is the origin
  std::uint64_t seed = 0;
};

/// Fixed parameters of the toy force field.
struct ToySystem {
  ToyPotential potential = ToyPotential::harmonic;
  double stiffness = 1.0;
  std::vector<Vec3> sites;           // equilibrium positions
  std::vector<double> rest_lengths;  // pairwise_spring: [N * N]
  std::vector<int> atomic_numbers;

  std::size_t size() const { return sites.size(); }
  double potential_energy(std::span<const Vec3> x) const;
  double energy(const MoleculeState& s) const;  // kinetic + potential, unit masses
  std::vector<Vec3> forces(std::span<const Vec3> x) const;
};

ToySystem make_toy_system(ToyPotential potential, std::size_t n_atoms, double stiffness,
                          std::mt19937_64& rng, bool center = false);

/// One velocity-Verlet step of size h.
void verlet_step(const ToySystem& sys, MoleculeState& state, double h);

/// Integrates from `initial`, writing a frame every `substeps` steps of dt / substeps.
Trajectory integrate(const ToySystem& sys, MoleculeState initial, std::size_t frames, double dt,
                     std::size_t substeps, const std::string& name);

Trajectory generate_toy_trajectory(const ToyConfig& config);

// ---- stability ----------------------------------------------------------------

struct StabilityReport {
  double com_drift = 0.0;
  double per_step_motion = 0.0;
};

StabilityReport stability_metrics(const Trajectory& traj);
void write_stability_csv(std::ostream& out,
                         std::span<const std::pair<std::string, StabilityReport>> rows);

// ---- windows and batches -------------------------------------------------------

/// Frame offsets (t_p - t) / dt, rounded to the nearest frame.
std::vector<std::size_t> frame_offsets(std::span<const double> lags, double dt);

/// Training windows over a frame range. Every window's input frame is duplicated
/// P times once at construction; batches copy out of that buffer into caller
/// storage, so iterating epochs allocates nothing once the buffers have grown.
class FrameLoader {
 public:
  /// Windows start at frames begin, begin + stride, ... with start + horizon_frames < end.
  FrameLoader(const Trajectory& traj, std::size_t n_steps, std::size_t horizon_frames,
              std::size_t begin, std::size_t end, std::size_t stride = 1);

  std::size_t n_windows() const { return starts_.size(); }
  std::size_t n_steps() const { return n_steps_; }
  std::size_t n_atoms() const { return n_atoms_; }
  std::size_t horizon_frames() const { return horizon_; }
  std::size_t n_batches(std::size_t batch_size) const;
  const Trajectory& trajectory() const { return *traj_; }
  std::span<const std::size_t> order() const { return order_; }

  /// Bytes reserved for the duplicated input frames.
  std::size_t allocated_bytes() const;

  void shuffle(std::mt19937_64& rng);

  /// Fills batch `index` of the current order. `offsets` (length P, each
  /// <= horizon_frames) select the targets; targets are [S * P * N * 3].
  void fill(std::size_t index, std::size_t batch_size, std::span<const std::size_t> offsets,
            ModelBatch& batch, std::vector<double>& targets) const;
  /// Same as fill() for an explicit list of window indices.
  void fill_windows(std::span<const std::size_t> windows, std::span<const std::size_t> offsets,
                    ModelBatch& batch, std::vector<double>& targets) const;

 private:
  const Trajectory* traj_;
  std::size_t n_steps_, n_atoms_, horizon_;
  std::vector<std::size_t> starts_;
  std::vector<std::size_t> order_;
  std::vector<double> rows_;  // [W * P * N * 6]
  std::vector<int> species_;  // [P * N]
};

}  // namespace atomkit
