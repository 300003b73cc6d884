#pragma once

// Closed-form pieces of the continuous-time incomplete-markets economy:
// CRRA preferences, Cobb-Douglas technology, the savings drift and the
// mesh-based aggregation of household wealth into capital.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "abh/sampler.hpp"

namespace abh {

/// Productivity diffusion dz = mu(z) dt + sigma(z) dW. The Kolmogorov
/// operator needs the variance sigma^2 and a few derivatives, so they are
/// carried explicitly rather than differentiated numerically.
struct ProductivityProcess {
  std::function<double(double)> drift;
  std::function<double(double)> drift_dz;
  std::function<double(double)> variance;
  std::function<double(double)> variance_dz;
  std::function<double(double)> variance_dzz;

  static ProductivityProcess constant(double mu, double sigma);
};

struct ModelParams {
  double gamma = 2.0;
  double rho = 0.05;
  double sigma_z = 0.02;
  double mu_z = 0.0;
  double alpha = 0.3;
  double delta = 0.05;
  double a_min = 0.0;
  double a_max = 5.0;
  double z_min = 0.5;
  double z_max = 1.5;
  double horizon = 10.0;
  double ic_wealth_mean = 1.0;
  double ic_wealth_sd = 0.2;
  double consumption_floor = 1e-6;

  /// Replaces the constant (mu_z, sigma_z) diffusion when set.
  std::function<ProductivityProcess()> custom_process;

  ProductivityProcess productivity() const;

  /// Every violated constraint, one message each. Empty when valid.
  std::vector<std::string> violations() const;
  /// Throws ConfigError listing all violations.
  void validate() const;
};

struct Prices {
  double r = 0.0;
  double w = 0.0;
  double K = 0.0;
};

/// Capital, output and prices on a model-time grid; prices between nodes are
/// linear interpolants.
struct EquilibriumPath {
  std::vector<double> t_nodes;
  std::vector<double> K;
  std::vector<double> Y;
  std::vector<double> r;
  std::vector<double> w;

  std::size_t size() const noexcept { return t_nodes.size(); }
  Prices prices_at(double t) const;
  double capital_at(double t) const;

  /// Path with every node at capital K.
  static EquilibriumPath constant(const ModelParams& model, std::span<const double> t_nodes, double K);
  /// Fills Y, r, w from K.
  void refresh_prices(const ModelParams& model);
};

double utility(const ModelParams& model, double c);
double marginal_utility(const ModelParams& model, double c);

/// c* = max(v_a, eps)^(-1/gamma): total, always positive.
double optimal_consumption(const ModelParams& model, double v_a);

/// mu_a = w z + r a - c
double savings_drift(double a, double z, double c, const Prices& prices);

Prices prices_from_capital(const ModelParams& model, double K);

/// Heuristic value at t = 0: log(1 + a + z^2).
double initial_value_guess(double a, double z);

/// Truncated Gaussian in wealth times uniform in productivity, unit mass on the box.
double initial_density(const ModelParams& model, double a, double z);

/// Mean wealth under the mesh-normalized density. `density` holds values on
/// the mesh nodes in the mesh's row-major order.
double aggregate_capital(const QuadratureMesh& mesh, std::span<const double> density);
double aggregate_capital(const QuadratureMesh& mesh, const std::function<double(double, double)>& density);

}  // namespace abh
