#include "atomkit/optim.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace atomkit {

AdamWAmsgrad::AdamWAmsgrad(std::vector<Tensor> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  if (config_.lr < 0.0 || config_.eps <= 0.0 || config_.beta1 < 0.0 || config_.beta1 >= 1.0 ||
      config_.beta2 < 0.0 || config_.beta2 >= 1.0 || config_.weight_decay < 0.0)
    throw ConfigError("AdamW hyperparameters out of range");
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
    vmax_.emplace_back(p.numel(), 0.0);
  }
}

void AdamWAmsgrad::step() {
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2_sqrt = std::sqrt(1.0 - std::pow(config_.beta2, t));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    auto data = p.mutable_data();
    // Parameters that never received a gradient are left untouched.
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    auto& vmax = vmax_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      data[j] -= config_.lr * config_.weight_decay * data[j];
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      vmax[j] = std::max(vmax[j], v[j]);
      const double denom = std::sqrt(vmax[j]) / bc2_sqrt + config_.eps;
      data[j] -= config_.lr * (m[j] / bc1) / denom;
    }
  }
}

void AdamWAmsgrad::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractError("clip_grad_norm: max_norm must be positive");
  double ss = 0.0;
  for (const auto& p : params)
    if (p.has_grad())
      for (double g : p.grad()) ss += g * g;
  const double norm = std::sqrt(ss);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params)
      if (p.has_grad())
        for (double& g : p.mutable_grad()) g *= factor;
  }
  return norm;
}

// ---- checkpoint -----------------------------------------------------------

namespace {

constexpr std::string_view kMagic = "ATOMCKPT1";

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void put_u64(std::vector<char>& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.insert(out.end(), buf, buf + 8);
}

struct Reader {
  std::span<const char> bytes;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (bytes.size() - pos < n)
      throw FormatError("checkpoint truncated while reading " + std::string(what) +
                        " at byte offset " + std::to_string(pos));
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v;
    std::memcpy(&v, bytes.data() + pos, 8);
    pos += 8;
    return v;
  }
};

}  // namespace

std::vector<char> encode_checkpoint(const ParameterList& params) {
  std::vector<char> out(kMagic.begin(), kMagic.end());
  for (const auto& [name, value] : params) {
    put_u64(out, name.size());
    out.insert(out.end(), name.begin(), name.end());
    put_u64(out, value.rank());
    for (auto d : value.shape()) put_u64(out, d);
    auto data = value.data();
    const char* raw = reinterpret_cast<const char*>(data.data());
    out.insert(out.end(), raw, raw + data.size() * sizeof(double));
  }
  return out;
}

ParameterList decode_checkpoint(std::span<const char> bytes) {
  if (bytes.size() < kMagic.size() ||
      std::string_view(bytes.data(), kMagic.size()) != kMagic)
    throw FormatError("not an ATOMCKPT1 checkpoint (bad magic)");
  Reader r{bytes, kMagic.size()};
  ParameterList params;
  while (r.pos < bytes.size()) {
    const std::uint64_t name_len = r.u64("name length");
    r.need(name_len, "name");
    std::string name(bytes.data() + r.pos, name_len);
    r.pos += name_len;
    const std::uint64_t rank = r.u64("rank");
    if (rank == 0 || rank > 8)
      throw FormatError("checkpoint parameter '" + name + "' has invalid rank " +
                        std::to_string(rank));
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(r.u64("dimension"));
    const std::size_t n = shape_numel(shape);
    r.need(n * sizeof(double), "values");
    std::vector<double> values(n);
    std::memcpy(values.data(), bytes.data() + r.pos, n * sizeof(double));
    r.pos += n * sizeof(double);
    params.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values))});
  }
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterList& params) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

ParameterList load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace atomkit
