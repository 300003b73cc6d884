#pragma once

// Fully connected tanh networks for the value function and the density.
//
// Parameters live in one flat vector in canonical order: layer by layer, the
// weight matrix row-major followed by its bias vector. Optimizers and the jet
// kernel operate on that vector directly; `weight()`/`bias()` are views.

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "abh/autodiff.hpp"

namespace abh {

struct ModelParams;

enum class OutputHead : std::uint8_t { identity = 0, softplus = 1 };

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class MlpParams {
 public:
  MlpParams() = default;
  MlpParams(std::vector<std::size_t> layer_sizes, OutputHead head);

  const std::vector<std::size_t>& layer_sizes() const noexcept { return layer_sizes_; }
  std::size_t layer_count() const noexcept { return layer_sizes_.empty() ? 0 : layer_sizes_.size() - 1; }
  OutputHead head() const noexcept { return head_; }

  std::size_t parameter_count() const noexcept { return values_.size(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  std::size_t weight_offset(std::size_t layer) const { return weight_offset_.at(layer); }
  std::size_t bias_offset(std::size_t layer) const { return bias_offset_.at(layer); }

  Eigen::Map<const RowMatrix> weight(std::size_t layer) const;
  Eigen::Map<RowMatrix> weight(std::size_t layer);
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;
  Eigen::Map<Eigen::VectorXd> bias(std::size_t layer);

  bool operator==(const MlpParams& other) const;

 private:
  std::vector<std::size_t> layer_sizes_;
  OutputHead head_ = OutputHead::identity;
  std::vector<double> values_;
  std::vector<std::size_t> weight_offset_;
  std::vector<std::size_t> bias_offset_;
};

inline const std::vector<std::size_t> kDefaultLayerSizes{3, 128, 128, 128, 1};

/// Glorot-uniform weights, zero biases, deterministic in `seed`.
MlpParams init_mlp(std::uint64_t seed, const std::vector<std::size_t>& layer_sizes, OutputHead head);

/// Affine map of each input (a, z, t) from [lower, upper] onto [-1, 1].
class InputScaler {
 public:
  InputScaler() = default;
  InputScaler(std::array<double, 3> lower, std::array<double, 3> upper);
  static InputScaler for_model(const ModelParams& model);

  double scale(std::size_t dim, double x) const;
  double unscale(std::size_t dim, double s) const;
  /// d scale / dx
  double slope(std::size_t dim) const { return 2.0 / (upper_[dim] - lower_[dim]); }
  bool contains(double a, double z, double t) const;
  double lower(std::size_t dim) const { return lower_[dim]; }
  double upper(std::size_t dim) const { return upper_[dim]; }

 private:
  std::array<double, 3> lower_{-1.0, -1.0, -1.0};
  std::array<double, 3> upper_{1.0, 1.0, 1.0};
};

/// Raw network output (before the head) in plain double arithmetic.
double mlp_raw(const MlpParams& params, const InputScaler& scaler, double a, double z, double t);
/// Value-net output, or softplus of the raw output for a density net.
double mlp_eval(const MlpParams& params, const InputScaler& scaler, double a, double z, double t);

/// Records the network on `tape` with inputs (a, z, t). Parameters become tape
/// leaves; when `param_leaves` is given they are appended in canonical order.
/// Throws DomainError when the point is outside the scaler's box.
ad::Var record_raw(ad::Tape& tape, const MlpParams& params, const InputScaler& scaler, ad::Var a, ad::Var z,
                   ad::Var t, std::vector<ad::Var>* param_leaves = nullptr);

/// v(a, z, t) on a tape.
ad::Var eval_value(ad::Tape& tape, const MlpParams& params, const InputScaler& scaler, ad::Var a, ad::Var z,
                   ad::Var t, std::vector<ad::Var>* param_leaves = nullptr);

/// softplus(phi(a, z, t)) on a tape; strictly positive.
ad::Var eval_density(ad::Tape& tape, const MlpParams& params, const InputScaler& scaler, ad::Var a, ad::Var z,
                     ad::Var t, std::vector<ad::Var>* param_leaves = nullptr);

/// Binary checkpoint: "ABHPINN1", u32 layer count L, L+1 u32 sizes, u8 head,
/// all weight matrices (row-major) then all bias vectors, float64; all
/// little-endian, no padding.
std::vector<std::uint8_t> serialize(const MlpParams& params);
MlpParams deserialize(std::span<const std::uint8_t> bytes);

}  // namespace abh
