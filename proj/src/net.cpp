#include "abh/net.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "abh/binary_io.hpp"
#include "abh/economy.hpp"
#include "abh/errors.hpp"

namespace abh {

namespace {

constexpr std::string_view kMagic = "ABHPINN1";

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

void check_sizes(const std::vector<std::size_t>& sizes) {
  if (sizes.size() < 2) throw ConfigError("mlp: need at least an input and an output layer");
  for (std::size_t s : sizes) {
    if (s == 0) throw ConfigError("mlp: layer sizes must be positive");
  }
}

}  // namespace

MlpParams::MlpParams(std::vector<std::size_t> layer_sizes, OutputHead head)
    : layer_sizes_(std::move(layer_sizes)), head_(head) {
  check_sizes(layer_sizes_);
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
    weight_offset_.push_back(offset);
    offset += layer_sizes_[l + 1] * layer_sizes_[l];
    bias_offset_.push_back(offset);
    offset += layer_sizes_[l + 1];
  }
  values_.assign(offset, 0.0);
}

Eigen::Map<const RowMatrix> MlpParams::weight(std::size_t layer) const {
  return {values_.data() + weight_offset_.at(layer), static_cast<Eigen::Index>(layer_sizes_[layer + 1]),
          static_cast<Eigen::Index>(layer_sizes_[layer])};
}

Eigen::Map<RowMatrix> MlpParams::weight(std::size_t layer) {
  return {values_.data() + weight_offset_.at(layer), static_cast<Eigen::Index>(layer_sizes_[layer + 1]),
          static_cast<Eigen::Index>(layer_sizes_[layer])};
}

Eigen::Map<const Eigen::VectorXd> MlpParams::bias(std::size_t layer) const {
  return {values_.data() + bias_offset_.at(layer), static_cast<Eigen::Index>(layer_sizes_[layer + 1])};
}

Eigen::Map<Eigen::VectorXd> MlpParams::bias(std::size_t layer) {
  return {values_.data() + bias_offset_.at(layer), static_cast<Eigen::Index>(layer_sizes_[layer + 1])};
}

bool MlpParams::operator==(const MlpParams& other) const {
  if (layer_sizes_ != other.layer_sizes_ || head_ != other.head_) return false;
  if (values_.size() != other.values_.size()) return false;
  return std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(double)) == 0;
}

MlpParams init_mlp(std::uint64_t seed, const std::vector<std::size_t>& layer_sizes, OutputHead head) {
  check_sizes(layer_sizes);
  if (layer_sizes.front() != 3 || layer_sizes.back() != 1) {
    throw ConfigError("mlp: layer sizes must start with 3 inputs and end with 1 output");
  }
  MlpParams params(layer_sizes, head);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    const double fan_in = static_cast<double>(layer_sizes[l]);
    const double fan_out = static_cast<double>(layer_sizes[l + 1]);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto w = params.weight(l);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = dist(rng);
    }
  }
  return params;
}

InputScaler::InputScaler(std::array<double, 3> lower, std::array<double, 3> upper) : lower_(lower), upper_(upper) {
  for (std::size_t d = 0; d < 3; ++d) {
    if (!(lower_[d] < upper_[d])) throw ConfigError("input scaler: lower bound must be below upper bound");
  }
}

InputScaler InputScaler::for_model(const ModelParams& model) {
  return InputScaler({model.a_min, model.z_min, 0.0}, {model.a_max, model.z_max, model.horizon});
}

double InputScaler::scale(std::size_t dim, double x) const {
  return 2.0 * ((x - lower_[dim]) / (upper_[dim] - lower_[dim])) - 1.0;
}

double InputScaler::unscale(std::size_t dim, double s) const {
  if (s == -1.0) return lower_[dim];
  if (s == 1.0) return upper_[dim];
  return lower_[dim] + 0.5 * (s + 1.0) * (upper_[dim] - lower_[dim]);
}

bool InputScaler::contains(double a, double z, double t) const {
  const double x[3] = {a, z, t};
  for (std::size_t d = 0; d < 3; ++d) {
    if (!(x[d] >= lower_[d] && x[d] <= upper_[d])) return false;
  }
  return true;
}

double mlp_raw(const MlpParams& params, const InputScaler& scaler, double a, double z, double t) {
  Eigen::VectorXd x(3);
  x << scaler.scale(0, a), scaler.scale(1, z), scaler.scale(2, t);
  const std::size_t layers = params.layer_count();
  for (std::size_t l = 0; l < layers; ++l) {
    Eigen::VectorXd y = params.weight(l) * x + params.bias(l);
    if (l + 1 < layers) y = y.array().tanh();
    x = std::move(y);
  }
  return x(0);
}

double mlp_eval(const MlpParams& params, const InputScaler& scaler, double a, double z, double t) {
  const double raw = mlp_raw(params, scaler, a, z, t);
  return params.head() == OutputHead::softplus ? softplus(raw) : raw;
}

ad::Var record_raw(ad::Tape& tape, const MlpParams& params, const InputScaler& scaler, ad::Var a, ad::Var z,
                   ad::Var t, std::vector<ad::Var>* param_leaves) {
  if (!scaler.contains(a.value(), z.value(), t.value())) {
    throw DomainError("network input outside the domain box");
  }
  std::vector<ad::Var> x{(a - scaler.lower(0)) * scaler.slope(0) - 1.0, (z - scaler.lower(1)) * scaler.slope(1) - 1.0,
                         (t - scaler.lower(2)) * scaler.slope(2) - 1.0};
  const std::size_t layers = params.layer_count();
  for (std::size_t l = 0; l < layers; ++l) {
    const auto w = params.weight(l);
    const auto b = params.bias(l);
    std::vector<ad::Var> w_leaf(static_cast<std::size_t>(w.size()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        w_leaf[static_cast<std::size_t>(i * w.cols() + j)] = tape.constant(w(i, j));
      }
    }
    std::vector<ad::Var> b_leaf(static_cast<std::size_t>(b.size()));
    for (Eigen::Index i = 0; i < b.size(); ++i) b_leaf[static_cast<std::size_t>(i)] = tape.constant(b(i));
    if (param_leaves) {
      param_leaves->insert(param_leaves->end(), w_leaf.begin(), w_leaf.end());
      param_leaves->insert(param_leaves->end(), b_leaf.begin(), b_leaf.end());
    }
    std::vector<ad::Var> y;
    y.reserve(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      ad::Var s = b_leaf[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        s = s + w_leaf[static_cast<std::size_t>(i * w.cols() + j)] * x[static_cast<std::size_t>(j)];
      }
      y.push_back(l + 1 < layers ? ad::tanh(s) : s);
    }
    x = std::move(y);
  }
  return x.front();
}

ad::Var eval_value(ad::Tape& tape, const MlpParams& params, const InputScaler& scaler, ad::Var a, ad::Var z,
                   ad::Var t, std::vector<ad::Var>* param_leaves) {
  return record_raw(tape, params, scaler, a, z, t, param_leaves);
}

ad::Var eval_density(ad::Tape& tape, const MlpParams& params, const InputScaler& scaler, ad::Var a, ad::Var z,
                     ad::Var t, std::vector<ad::Var>* param_leaves) {
  return ad::softplus(record_raw(tape, params, scaler, a, z, t, param_leaves));
}

std::vector<std::uint8_t> serialize(const MlpParams& params) {
  io::ByteWriter out;
  out.bytes(kMagic);
  out.u32(static_cast<std::uint32_t>(params.layer_count()));
  for (std::size_t s : params.layer_sizes()) out.u32(static_cast<std::uint32_t>(s));
  out.u8(static_cast<std::uint8_t>(params.head()));
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    const auto w = params.weight(l);
    out.f64s(std::span<const double>(w.data(), static_cast<std::size_t>(w.size())));
  }
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    const auto b = params.bias(l);
    out.f64s(std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
  }
  return out.take();
}

MlpParams deserialize(std::span<const std::uint8_t> bytes) {
  io::ByteReader in(bytes);
  if (in.remaining() < kMagic.size() || in.bytes(kMagic.size()) != kMagic) {
    throw FormatError("network checkpoint: bad magic");
  }
  const std::uint32_t layers = in.u32();
  if (layers == 0 || layers > 1024) throw FormatError("network checkpoint: implausible layer count");
  std::vector<std::size_t> sizes(layers + 1);
  std::uint64_t count = 0;
  for (auto& s : sizes) {
    s = in.u32();
    if (s == 0) throw FormatError("network checkpoint: zero layer size");
  }
  for (std::size_t l = 0; l < layers; ++l) count += static_cast<std::uint64_t>(sizes[l + 1]) * (sizes[l] + 1);
  const std::uint8_t tag = in.u8();
  if (tag > 1) throw FormatError("network checkpoint: unknown output head tag");
  if (in.remaining() != count * 8) {
    throw FormatError("network checkpoint: payload length " + std::to_string(in.remaining()) + " does not match header (" +
                      std::to_string(count * 8) + ")");
  }
  MlpParams params(std::move(sizes), static_cast<OutputHead>(tag));
  for (std::size_t l = 0; l < layers; ++l) {
    auto w = params.weight(l);
    in.f64s(std::span<double>(w.data(), static_cast<std::size_t>(w.size())));
  }
  for (std::size_t l = 0; l < layers; ++l) {
    auto b = params.bias(l);
    in.f64s(std::span<double>(b.data(), static_cast<std::size_t>(b.size())));
  }
  return params;
}

}  // namespace abh
