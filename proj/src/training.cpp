#include "atomkit/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <ostream>
#include <thread>

#include "atomkit/errors.hpp"

namespace atomkit {

// ---- discretization -----------------------------------------------------------

std::vector<double> DiscretizationPlan::lags() const {
  std::vector<double> out;
  out.reserve(timestamps.size());
  for (double tp : timestamps) out.push_back(tp - t);
  return out;
}

DiscretizationPlan discretize(DiscretizationStrategy strategy, double t, double horizon,
                              std::size_t n_steps, double tail_lag) {
  if (n_steps == 0) throw ContractError("discretize: P must be >= 1");
  if (!(horizon > 0.0)) throw ContractError("discretize: horizon must be positive");
  if (strategy == DiscretizationStrategy::uniform) tail_lag = 0.0;
  if (tail_lag < 0.0 || tail_lag >= horizon)
    throw ContractError("discretize: tail lag must satisfy 0 <= lag < horizon");
  DiscretizationPlan plan;
  plan.strategy = strategy;
  plan.t = t;
  plan.horizon = horizon;
  plan.n_steps = n_steps;
  plan.tail_lag = tail_lag;
  const double span = horizon - tail_lag;
  for (std::size_t p = 1; p <= n_steps; ++p)
    plan.timestamps.push_back(t + tail_lag +
                              static_cast<double>(p) / static_cast<double>(n_steps) * span);
  return plan;
}

double sample_loguniform(double lo, double hi, std::mt19937_64& rng) {
  if (!(lo > 0.0) || !(lo <= hi)) throw ContractError("sample_loguniform: need 0 < lo <= hi");
  if (lo == hi) return lo;
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  return std::clamp(std::exp(u(rng)), lo, hi);
}

// ---- label noise and metrics ---------------------------------------------------

NoisedSample add_label_noise(const MoleculeState& state, const Frames& targets, double sigma,
                             std::mt19937_64& rng) {
  if (sigma < 0.0) throw ContractError("label noise sigma must be >= 0");
  NoisedSample out{state, targets};
  if (sigma == 0.0) return out;
  std::normal_distribution<double> normal(0.0, sigma);
  for (std::size_t i = 0; i < out.state.size(); ++i)
    for (int a = 0; a < 3; ++a) {
      out.state.positions[i][a] += normal(rng);
      out.state.velocities[i][a] += normal(rng);
    }
  for (auto& frame : out.targets)
    for (auto& x : frame)
      for (int a = 0; a < 3; ++a) x[a] += normal(rng);
  return out;
}

void add_label_noise(ModelBatch& batch, std::vector<double>& targets, double sigma,
                     std::mt19937_64& rng) {
  if (sigma < 0.0) throw ContractError("label noise sigma must be >= 0");
  if (sigma == 0.0) return;
  std::normal_distribution<double> normal(0.0, sigma);
  const std::size_t n = batch.n_atoms, p = batch.n_steps;
  double xi[6];
  for (std::size_t s = 0; s < batch.n_samples; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      for (double& v : xi) v = normal(rng);
      for (std::size_t c = 0; c < p; ++c) {
        double* row = batch.rows.data() + 6 * ((s * p + c) * n + i);
        for (int a = 0; a < 6; ++a) row[a] += xi[a];
      }
    }
    double* t = targets.data() + s * p * n * 3;
    for (std::size_t k = 0; k < p * n * 3; ++k) t[k] += normal(rng);
  }
}

namespace {

void check_frames(const Frames& pred, const Frames& truth) {
  if (pred.empty() || pred.size() != truth.size())
    throw DimensionError("metric: frame counts differ or are zero");
  for (std::size_t p = 0; p < pred.size(); ++p)
    if (pred[p].size() != truth[p].size())
      throw DimensionError("metric: atom counts differ at frame " + std::to_string(p));
}

double frame_error(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) e += dot(a[i] - b[i], a[i] - b[i]);
  return e;
}

void fisher_yates(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

}  // namespace

double s2t_mse(const Frames& pred, const Frames& truth) {
  check_frames(pred, truth);
  double total = 0.0;
  for (std::size_t p = 0; p < pred.size(); ++p) total += frame_error(pred[p], truth[p]);
  return total / static_cast<double>(pred.size());
}

double s2s_mse(const Frames& pred, const Frames& truth) {
  check_frames(pred, truth);
  return frame_error(pred.back(), truth.back());
}

Tensor s2t_loss(const Tensor& prediction, std::span<const double> targets, std::size_t n_samples,
                std::size_t n_steps) {
  if (prediction.numel() != targets.size() || n_samples * n_steps == 0)
    throw DimensionError("s2t_loss: prediction " + shape_string(prediction.shape()) + " vs " +
                         std::to_string(targets.size()) + " target values");
  const Tensor truth = Tensor::from(prediction.shape(), {targets.begin(), targets.end()});
  return scale(sum(square(sub(prediction, truth))),
               1.0 / static_cast<double>(n_samples * n_steps));
}

// ---- runs -------------------------------------------------------------------

void TrainRunConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (!(label_noise >= 0.0)) throw ConfigError("label_noise must be >= 0");
  if (n_steps == 0) throw ConfigError("n_steps must be >= 1");
  if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
  if (!(min_lag > 0.0) || min_lag > horizon) throw ConfigError("need 0 < min_lag <= horizon");
  if (tail_lag < 0.0 || (strategy == DiscretizationStrategy::tail && tail_lag >= horizon))
    throw ConfigError("tail_lag must satisfy 0 <= tail_lag < horizon");
  if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be positive");
  if (window_stride == 0 || val_stride == 0 || eval_batch_size == 0)
    throw ConfigError("strides and eval_batch_size must be >= 1");
  if (!(optimizer.lr >= 0.0) || !(optimizer.eps > 0.0))
    throw ConfigError("optimizer lr must be >= 0 and eps > 0");
}

std::size_t best_epoch_index(std::span<const double> val_s2s) {
  if (val_s2s.empty()) throw ContractError("best_epoch_index: no epochs recorded");
  std::size_t best = 0;
  for (std::size_t e = 1; e < val_s2s.size(); ++e)
    if (val_s2s[e] < val_s2s[best]) best = e;
  return best;
}

FrameSplit split_frames(const Trajectory& traj, const TrainRunConfig& config) {
  const std::size_t t = traj.n_frames();
  FrameSplit s;
  s.train_end = config.train_frames ? config.train_frames : t * 4 / 5;
  if (s.train_end >= t)
    throw ConfigError("train_frames " + std::to_string(s.train_end) + " leaves no validation frames in '" +
                      traj.name + "' (" + std::to_string(t) + " frames)");
  s.val_begin = s.train_end;
  s.val_end = config.val_frames ? std::min(t, s.val_begin + config.val_frames) : t;
  return s;
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("ATOMKIT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

EvalResult evaluate(const AtomModel& model, const FrameLoader& loader,
                    std::span<const std::size_t> offsets, std::size_t batch_size,
                    std::size_t threads) {
  const std::size_t w = loader.n_windows();
  const std::size_t n = loader.n_atoms(), p = loader.n_steps();
  // Per-window results indexed by window id; summed in id order afterwards.
  std::vector<double> s2s(w), s2t(w), st_s2s(w), st_s2t(w);
  std::vector<std::size_t> ids(w);
  for (std::size_t i = 0; i < w; ++i) ids[i] = i;
  const std::size_t n_batches = (w + batch_size - 1) / batch_size;

  auto work = [&](std::size_t worker, std::size_t stride) {
    NoGradGuard guard;
    ModelBatch batch;
    std::vector<double> targets;
    for (std::size_t b = worker; b < n_batches; b += stride) {
      const std::size_t first = b * batch_size;
      const std::size_t count = std::min(batch_size, w - first);
      loader.fill_windows(std::span(ids).subspan(first, count), offsets, batch, targets);
      const Tensor pred = model.forward(batch, false);
      auto d = pred.data();
      for (std::size_t s = 0; s < count; ++s) {
        double total = 0.0, last = 0.0, st_total = 0.0, st_last = 0.0;
        for (std::size_t c = 0; c < p; ++c) {
          double e = 0.0, es = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t r = (s * p + c) * n + i;
            const std::size_t r0 = s * p * n + i;
            for (int a = 0; a < 3; ++a) {
              const double truth = targets[3 * r + a];
              e += (d[3 * r + a] - truth) * (d[3 * r + a] - truth);
              const double x0 = batch.rows[6 * r0 + a];
              es += (x0 - truth) * (x0 - truth);
            }
          }
          total += e;
          st_total += es;
          if (c + 1 == p) {
            last = e;
            st_last = es;
          }
        }
        const std::size_t id = first + s;
        s2t[id] = total / static_cast<double>(p);
        s2s[id] = last;
        st_s2t[id] = st_total / static_cast<double>(p);
        st_s2s[id] = st_last;
      }
    }
  };

  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, n_batches));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& th : pool) th.join();
  }

  EvalResult r;
  r.windows = w;
  for (std::size_t i = 0; i < w; ++i) {
    r.s2s += s2s[i];
    r.s2t += s2t[i];
    r.static_s2s += st_s2s[i];
    r.static_s2t += st_s2t[i];
  }
  const double inv = 1.0 / static_cast<double>(w);
  r.s2s *= inv;
  r.s2t *= inv;
  r.static_s2s *= inv;
  r.static_s2t *= inv;
  return r;
}

namespace {

std::vector<std::size_t> plan_offsets(const TrainRunConfig& config, double horizon, double dt) {
  const auto plan = discretize(config.strategy, 0.0, horizon, config.n_steps, config.tail_lag);
  const auto offsets = frame_offsets(plan.lags(), dt);
  for (std::size_t p = 0; p < offsets.size(); ++p)
    if (offsets[p] == 0 || (p > 0 && offsets[p] <= offsets[p - 1]))
      throw ConfigError("horizon " + std::to_string(horizon) + " with P = " +
                        std::to_string(config.n_steps) + " does not give distinct frame offsets at dt = " +
                        std::to_string(dt));
  return offsets;
}

using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(const AtomModel& model) {
  Snapshot s;
  for (const auto& t : model.parameters()) s.emplace_back(t.data().begin(), t.data().end());
  return s;
}

void restore(AtomModel& model, const Snapshot& s) {
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].mutable_data();
    std::copy(s[i].begin(), s[i].end(), dst.begin());
  }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void optimizer_step(AdamWAmsgrad& opt, std::vector<Tensor>& params, const Tensor& loss,
                    double max_grad_norm, std::size_t epoch, std::uint64_t step) {
  if (!std::isfinite(loss.item()))
    throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch + 1) +
                         ", step " + std::to_string(step + 1));
  opt.zero_grad();
  backward(loss);
  clip_grad_norm(params, max_grad_norm);
  opt.step();
}

}  // namespace

MetricsReport train_single_task(const Trajectory& traj, AtomModel& model,
                                const TrainRunConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  traj.validate();
  const auto start = std::chrono::steady_clock::now();
  const auto split = split_frames(traj, config);
  const auto offsets = plan_offsets(config, config.horizon, traj.dt);
  FrameLoader train(traj, config.n_steps, offsets.back(), 0, split.train_end, config.window_stride);
  FrameLoader val(traj, config.n_steps, offsets.back(), split.val_begin, split.val_end,
                  config.val_stride);

  std::mt19937_64 rng(config.seed);
  auto params = model.parameters();
  AdamWAmsgrad opt(params, config.optimizer);
  const std::size_t threads = worker_threads();

  MetricsReport report;
  report.name = traj.name;
  Snapshot best;
  double best_s2s = 0.0;
  ModelBatch batch;
  std::vector<double> targets;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    train.shuffle(rng);
    double total = 0.0;
    for (std::size_t b = 0; b < train.n_batches(config.batch_size); ++b) {
      train.fill(b, config.batch_size, offsets, batch, targets);
      add_label_noise(batch, targets, config.label_noise, rng);
      const Tensor pred = model.forward(batch, true, &rng);
      const Tensor loss = s2t_loss(pred, targets, batch.n_samples, batch.n_steps);
      optimizer_step(opt, params, loss, config.max_grad_norm, epoch, report.steps);
      ++report.steps;
      total += loss.item() * static_cast<double>(batch.n_samples);
    }
    report.train_loss.push_back(total / static_cast<double>(train.n_windows()));
    const EvalResult ev = evaluate(model, val, offsets, config.eval_batch_size, threads);
    report.val_s2s.push_back(ev.s2s);
    report.val_s2t.push_back(ev.s2t);
    report.static_s2s = ev.static_s2s;
    report.static_s2t = ev.static_s2t;
    if (epoch == 0 || ev.s2s < best_s2s) {
      best_s2s = ev.s2s;
      best = snapshot(model);
    }
    report.wall_seconds = seconds_since(start);
    if (on_epoch) on_epoch(epoch, report);
  }
  restore(model, best);
  report.best_epoch = best_epoch_index(report.val_s2s);
  report.s2s = report.val_s2s[report.best_epoch];
  report.s2t = report.val_s2t[report.best_epoch];
  report.wall_seconds = seconds_since(start);
  return report;
}

MultitaskReport train_multitask(std::span<const Trajectory> trajs, AtomModel& model,
                                const TrainRunConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (trajs.empty()) throw ContractError("train_multitask: no trajectories");
  for (const auto& t : trajs) {
    t.validate();
    if (std::abs(t.dt - trajs[0].dt) > 1e-12 * std::abs(trajs[0].dt))
      throw ConfigError("trajectory '" + t.name + "' has dt = " + std::to_string(t.dt) +
                        " but '" + trajs[0].name + "' has dt = " + std::to_string(trajs[0].dt));
  }
  MultitaskReport out;
  if (trajs.size() == 1) {
    out.single_task_fallback = true;
    out.overall = train_single_task(trajs[0], model, config, on_epoch);
    out.molecules.push_back(out.overall);
    return out;
  }
  if (!model.config().rwpe_enabled)
    throw ConfigError("multitask training needs rwpe_enabled in the model configuration");

  const auto start = std::chrono::steady_clock::now();
  const double dt = trajs[0].dt;
  if (config.min_lag < static_cast<double>(config.n_steps) * dt)
    throw ConfigError("min_lag must be at least P * dt so sampled offsets stay distinct");
  const auto val_offsets = plan_offsets(config, config.horizon, dt);
  const std::size_t horizon_frames = static_cast<std::size_t>(std::llround(config.horizon / dt));

  std::vector<FrameLoader> train, val;
  train.reserve(trajs.size());
  val.reserve(trajs.size());
  for (const auto& t : trajs) {
    const auto split = split_frames(t, config);
    train.emplace_back(t, config.n_steps, std::max(horizon_frames, val_offsets.back()), 0,
                       split.train_end, config.window_stride);
    val.emplace_back(t, config.n_steps, val_offsets.back(), split.val_begin, split.val_end,
                     config.val_stride);
  }

  // Entries encode (molecule, window) as molecule + M * window.
  const std::size_t m = trajs.size();
  std::vector<std::size_t> entries;
  std::size_t longest = 0;
  for (const auto& l : train) longest = std::max(longest, l.n_windows());
  for (std::size_t w = 0; w < longest; ++w)
    for (std::size_t k = 0; k < m; ++k)
      if (w < train[k].n_windows()) entries.push_back(k + m * w);

  std::mt19937_64 rng(config.seed);
  auto params = model.parameters();
  AdamWAmsgrad opt(params, config.optimizer);
  const std::size_t threads = worker_threads();

  out.overall.name = "multitask";
  out.molecules.resize(m);
  for (std::size_t k = 0; k < m; ++k) out.molecules[k].name = trajs[k].name;
  Snapshot best;
  double best_s2s = 0.0;
  std::vector<ModelBatch> batches(m);
  std::vector<std::vector<double>> targets(m);
  std::vector<std::vector<std::size_t>> windows(m);
  std::vector<std::size_t> order = entries;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    order = entries;
    fisher_yates(order, rng);
    if (epoch == 0)
      for (auto e : order) out.first_epoch_molecules.push_back(e % m);
    double total = 0.0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - first);
      const double lag = sample_loguniform(config.min_lag, config.horizon, rng);
      const auto plan = discretize(DiscretizationStrategy::uniform, 0.0, lag, config.n_steps);
      const auto offsets = frame_offsets(plan.lags(), dt);
      for (auto& w : windows) w.clear();
      for (std::size_t s = 0; s < count; ++s)
        windows[order[first + s] % m].push_back(order[first + s] / m);
      Tensor loss;
      for (std::size_t k = 0; k < m; ++k) {
        if (windows[k].empty()) continue;
        train[k].fill_windows(windows[k], offsets, batches[k], targets[k]);
        add_label_noise(batches[k], targets[k], config.label_noise, rng);
        const Tensor pred = model.forward(batches[k], true, &rng);
        // Group mean weighted by its share of the batch.
        const Tensor part =
            scale(s2t_loss(pred, targets[k], batches[k].n_samples, config.n_steps),
                  static_cast<double>(windows[k].size()) / static_cast<double>(count));
        loss = loss.defined() ? add(loss, part) : part;
      }
      optimizer_step(opt, params, loss, config.max_grad_norm, epoch, out.overall.steps);
      ++out.overall.steps;
      total += loss.item() * static_cast<double>(count);
    }
    out.overall.train_loss.push_back(total / static_cast<double>(order.size()));
    double s2s = 0.0, s2t = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const EvalResult ev = evaluate(model, val[k], val_offsets, config.eval_batch_size, threads);
      auto& r = out.molecules[k];
      r.val_s2s.push_back(ev.s2s);
      r.val_s2t.push_back(ev.s2t);
      r.static_s2s = ev.static_s2s;
      r.static_s2t = ev.static_s2t;
      s2s += ev.s2s / static_cast<double>(m);
      s2t += ev.s2t / static_cast<double>(m);
    }
    out.overall.val_s2s.push_back(s2s);
    out.overall.val_s2t.push_back(s2t);
    if (epoch == 0 || s2s < best_s2s) {
      best_s2s = s2s;
      best = snapshot(model);
    }
    out.overall.wall_seconds = seconds_since(start);
    if (on_epoch) on_epoch(epoch, out.overall);
  }
  restore(model, best);
  const std::size_t be = best_epoch_index(out.overall.val_s2s);
  out.overall.best_epoch = be;
  out.overall.s2s = out.overall.val_s2s[be];
  out.overall.s2t = out.overall.val_s2t[be];
  for (auto& r : out.molecules) {
    r.best_epoch = be;
    r.s2s = r.val_s2s[be];
    r.s2t = r.val_s2t[be];
    r.steps = out.overall.steps;
    r.train_loss = out.overall.train_loss;
  }
  out.overall.wall_seconds = seconds_since(start);
  for (auto& r : out.molecules) r.wall_seconds = out.overall.wall_seconds;
  return out;
}

// ---- sweeps -------------------------------------------------------------------

std::vector<SweepRow> sweep_steps(const AtomModel& model, const Trajectory& traj,
                                  std::span<const std::size_t> steps, double horizon,
                                  std::size_t begin, std::size_t end, std::size_t stride,
                                  std::size_t batch_size, std::size_t threads) {
  std::vector<SweepRow> rows;
  for (std::size_t p : steps) {
    TrainRunConfig c;
    c.n_steps = p;
    const auto offsets = plan_offsets(c, horizon, traj.dt);
    const FrameLoader loader(traj, p, offsets.back(), begin, end, stride);
    rows.push_back({horizon, p, evaluate(model, loader, offsets, batch_size, threads)});
  }
  return rows;
}

std::vector<SweepRow> sweep_horizons(const AtomModel& model, const Trajectory& traj,
                                     std::span<const double> horizons, std::size_t n_steps,
                                     std::size_t begin, std::size_t end, std::size_t stride,
                                     std::size_t batch_size, std::size_t threads) {
  std::vector<SweepRow> rows;
  TrainRunConfig c;
  c.n_steps = n_steps;
  for (double h : horizons) {
    const auto offsets = plan_offsets(c, h, traj.dt);
    const FrameLoader loader(traj, n_steps, offsets.back(), begin, end, stride);
    rows.push_back({h, n_steps, evaluate(model, loader, offsets, batch_size, threads)});
  }
  return rows;
}

void write_metrics_csv(std::ostream& out, const MetricsReport& report) {
  out << "epoch,train_loss,val_s2s,val_s2t\n";
  char buf[160];
  for (std::size_t e = 0; e < report.train_loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", e + 1, report.train_loss[e],
                  report.val_s2s[e], report.val_s2t[e]);
    out << buf;
  }
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
  out << "horizon,n_steps,s2s,s2t,static_s2s,static_s2t,windows\n";
  char buf[200];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%zu,%.17g,%.17g,%.17g,%.17g,%zu\n", r.horizon, r.n_steps,
                  r.result.s2s, r.result.s2t, r.result.static_s2s, r.result.static_s2t,
                  r.result.windows);
    out << buf;
  }
}

}  // namespace atomkit
