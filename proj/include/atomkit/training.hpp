#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "atomkit/model.hpp"
#include "atomkit/optim.hpp"
#include "atomkit/trajectory.hpp"

namespace atomkit {

// ---- discretization -----------------------------------------------------------

enum class DiscretizationStrategy { uniform, tail };

struct DiscretizationPlan {
  DiscretizationStrategy strategy = DiscretizationStrategy::uniform;
  double t = 0.0;
  double horizon = 0.0;   // Delta T
  std::size_t n_steps = 0;
  double tail_lag = 0.0;  // Delta-bar, tail only
  std::vector<double> timestamps;

  /// t_p - t for every query.
  std::vector<double> lags() const;
};

/// uniform: t_p = t + (p/P) dT; tail: t_p = t + dbar + (p/P)(dT - dbar), p = 1..P.
DiscretizationPlan discretize(DiscretizationStrategy strategy, double t, double horizon,
                              std::size_t n_steps, double tail_lag = 0.0);

/// exp(U), U ~ Uniform[ln lo, ln hi].
double sample_loguniform(double lo, double hi, std::mt19937_64& rng);

// ---- label noise and metrics ---------------------------------------------------

struct NoisedSample {
  MoleculeState state;
  Frames targets;
};

/// Independent N(0, sigma^2) perturbations on the input positions and
/// velocities and on every target frame.
NoisedSample add_label_noise(const MoleculeState& state, const Frames& targets, double sigma,
                             std::mt19937_64& rng);

/// Batch form: one draw per input atom (shared by its P copies), one per
/// target frame and atom.
void add_label_noise(ModelBatch& batch, std::vector<double>& targets, double sigma,
                     std::mt19937_64& rng);

/// (1/P) sum_p |x_hat_p - x_p|^2, squared norm over the whole frame.
double s2t_mse(const Frames& pred, const Frames& truth);
/// |x_hat_P - x_P|^2
double s2s_mse(const Frames& pred, const Frames& truth);

/// Mean over samples of the S2T error of a [S*P*N, 3] prediction.
Tensor s2t_loss(const Tensor& prediction, std::span<const double> targets, std::size_t n_samples,
                std::size_t n_steps);

// ---- runs -------------------------------------------------------------------

struct TrainRunConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 200;
  double label_noise = 0.1;
  double horizon = 3000.0;  // Delta T, same units as the trajectory dt
  std::size_t n_steps = 8;
  DiscretizationStrategy strategy = DiscretizationStrategy::uniform;
  double tail_lag = 0.0;
  double min_lag = 8.0;     // multitask lower bound of the log-uniform horizon
  std::uint64_t seed = 0;
  AdamWConfig optimizer;
  double max_grad_norm = 1.0;
  std::size_t train_frames = 0;  // 0: first 80% of the trajectory
  std::size_t val_frames = 0;    // 0: the remainder
  std::size_t window_stride = 1;
  std::size_t val_stride = 1;
  std::size_t eval_batch_size = 64;

  void validate() const;
};

struct EvalResult {
  double s2s = 0.0;
  double s2t = 0.0;
  double static_s2s = 0.0;  // prediction = input positions
  double static_s2t = 0.0;
  std::size_t windows = 0;
};

struct MetricsReport {
  std::string name;
  double s2s = 0.0;  // best-checkpoint validation metrics
  double s2t = 0.0;
  double static_s2s = 0.0;
  double static_s2t = 0.0;
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_s2s;
  std::vector<double> val_s2t;
  std::size_t best_epoch = 0;  // 0-based
  double wall_seconds = 0.0;
  std::uint64_t steps = 0;
};

/// Per-epoch hook; the report holds the curves so far.
using EpochCallback = std::function<void(std::size_t epoch, const MetricsReport&)>;

/// Index of the minimum, earliest on ties.
std::size_t best_epoch_index(std::span<const double> val_s2s);

/// Contiguous [train, val) frame split for a trajectory.
struct FrameSplit {
  std::size_t train_end = 0;
  std::size_t val_begin = 0;
  std::size_t val_end = 0;
};
FrameSplit split_frames(const Trajectory& traj, const TrainRunConfig& config);

/// Worker count from ATOMKIT_THREADS, else hardware concurrency (>= 1).
std::size_t worker_threads();

/// Evaluates on every loader window with fixed frame offsets. Batches may
/// run on several threads; the reduction order is fixed.
EvalResult evaluate(const AtomModel& model, const FrameLoader& loader,
                    std::span<const std::size_t> offsets, std::size_t batch_size,
                    std::size_t threads = 1);

MetricsReport train_single_task(const Trajectory& traj, AtomModel& model,
                                const TrainRunConfig& config, const EpochCallback& on_epoch = {});

struct MultitaskReport {
  MetricsReport overall;                  // validation metrics averaged across molecules
  std::vector<MetricsReport> molecules;   // best-checkpoint metrics per molecule
  bool single_task_fallback = false;
  // Molecule index of every sample in epoch 0, in batch order.
  std::vector<std::size_t> first_epoch_molecules;
};

MultitaskReport train_multitask(std::span<const Trajectory> trajs, AtomModel& model,
                                const TrainRunConfig& config, const EpochCallback& on_epoch = {});

// ---- sweeps -------------------------------------------------------------------

struct SweepRow {
  double horizon = 0.0;
  std::size_t n_steps = 0;
  EvalResult result;
};

/// Evaluates the frame range [begin, end) for each P at fixed horizon.
std::vector<SweepRow> sweep_steps(const AtomModel& model, const Trajectory& traj,
                                  std::span<const std::size_t> steps, double horizon,
                                  std::size_t begin, std::size_t end, std::size_t stride,
                                  std::size_t batch_size, std::size_t threads = 1);
/// Evaluates each horizon at fixed P.
std::vector<SweepRow> sweep_horizons(const AtomModel& model, const Trajectory& traj,
                                     std::span<const double> horizons, std::size_t n_steps,
                                     std::size_t begin, std::size_t end, std::size_t stride,
                                     std::size_t batch_size, std::size_t threads = 1);

void write_metrics_csv(std::ostream& out, const MetricsReport& report);
void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows);

}  // namespace atomkit
