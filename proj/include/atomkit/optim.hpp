#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "atomkit/tensor.hpp"

namespace atomkit {

struct NamedParameter {
  std::string name;
  Tensor value;
};

using ParameterList = std::vector<NamedParameter>;

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-5;
  // 1e-10 for single-task runs, 1e-5 for multitask runs.
  double eps = 1e-10;
};

/// AdamW with decoupled weight decay and the AMSGrad max-second-moment rule.
class AdamWAmsgrad {
 public:
  AdamWAmsgrad(std::vector<Tensor> params, AdamWConfig config);

  /// Applies one update from the parameters' accumulated gradients.
  void step();
  void zero_grad();

  std::uint64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }

  std::span<const double> first_moment(std::size_t i) const { return m_[i]; }
  std::span<const double> second_moment(std::size_t i) const { return v_[i]; }
  std::span<const double> max_second_moment(std::size_t i) const { return vmax_[i]; }

 private:
  std::vector<Tensor> params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_, v_, vmax_;
  std::uint64_t step_ = 0;
};

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm measured before scaling.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

// Checkpoint container: "ATOMCKPT1", then per parameter
// u64 name_len, name bytes, u64 rank, u64 dims[rank], f64 values (all little-endian).
void save_checkpoint(const std::filesystem::path& path, const ParameterList& params);
ParameterList load_checkpoint(const std::filesystem::path& path);
std::vector<char> encode_checkpoint(const ParameterList& params);
ParameterList decode_checkpoint(std::span<const char> bytes);

}  // namespace atomkit
