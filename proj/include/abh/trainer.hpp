#pragma once

// Two-phase training loop: the value network alone on its HJB-side losses,
// then alternating value and density updates with a damped refresh of the
// capital path every few steps.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "abh/economy.hpp"
#include "abh/losses.hpp"
#include "abh/net.hpp"
#include "abh/sampler.hpp"

namespace abh {

enum class OptimizerKind : std::uint8_t { adam = 0, sgd = 1 };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step_count = 0;

  static OptimizerState fresh(std::size_t n);
  bool operator==(const OptimizerState&) const = default;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// Bias-corrected Adam. Non-finite gradients leave everything untouched and
/// raise NumericError carrying `step_index`.
void adam_step(std::span<double> params, std::span<const double> grads, OptimizerState& state, double lr,
               std::size_t step_index = 0);
void sgd_step(std::span<double> params, std::span<const double> grads, double lr, std::size_t step_index = 0);
/// Rescales to at most `max_norm` in the 2-norm; returns the norm before clipping.
double clip_gradients(std::span<double> grads, double max_norm);

struct TrainConfig {
  std::size_t total_steps = 25000;
  std::size_t pretrain_steps = 2500;
  std::size_t adam_steps = 7500;
  double adam_lr = 1e-3;
  double sgd_lr = 1e-4;
  double clip_norm = 1.0;
  std::size_t equilibrium_update_every = 5;
  double price_damping = 0.1;
  std::uint64_t seed = 0;
  LossWeights weights;
  std::size_t path_nodes = 11;
  SamplerConfig sampler;
  std::vector<std::size_t> layer_sizes = kDefaultLayerSizes;
  /// Quadrature used inside the loop for the mass loss and capital updates.
  std::size_t train_mesh_a = 21;
  std::size_t train_mesh_z = 11;
  std::size_t checkpoint_every = 1000;

  std::vector<std::string> violations() const;
};

struct TrainState {
  MlpParams value;
  MlpParams density;
  OptimizerState value_opt;
  OptimizerState density_opt;
  std::uint64_t step = 0;  // completed steps
  EquilibriumPath path;
  Rng rng;
  std::vector<LossBreakdown> history;
};

/// Fresh networks from the seed; capital path flat at the mean of g0.
TrainState initial_state(const ModelParams& model, const TrainConfig& config);

/// Measures K on `mesh` at each node of `previous` and blends:
/// K = (1 - damping) K_previous + damping K_measured.
EquilibriumPath compute_equilibrium_path(const ModelParams& model, const MlpParams& density_net,
                                         const QuadratureMesh& mesh, const EquilibriumPath& previous,
                                         double damping);

/// Everything derived from the config that a step needs.
struct TrainContext {
  ModelParams model;
  TrainConfig config;
  InputScaler scaler;
  MassGrid mass_grid;

  TrainContext(const ModelParams& model, const TrainConfig& config);
};

/// Advances `state` by exactly one step.
void train_step(const TrainContext& ctx, TrainState& state);

using StepObserver = std::function<void(const TrainState&)>;

/// Steps until `state.step == until`; `observer` runs after every step.
void train_until(const TrainContext& ctx, TrainState& state, std::size_t until, const StepObserver& observer = {});

inline constexpr std::uint32_t kStateFormatVersion = 1;

std::vector<std::uint8_t> serialize_state(const TrainState& state);
TrainState deserialize_state(std::span<const std::uint8_t> bytes);
void save_state(const std::string& path, const TrainState& state);
TrainState load_state(const std::string& path);

}  // namespace abh
