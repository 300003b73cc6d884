#include "abh/economy.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "abh/errors.hpp"

namespace abh {

ProductivityProcess ProductivityProcess::constant(double mu, double sigma) {
  const double var = sigma * sigma;
  ProductivityProcess p;
  p.drift = [mu](double) { return mu; };
  p.drift_dz = [](double) { return 0.0; };
  p.variance = [var](double) { return var; };
  p.variance_dz = [](double) { return 0.0; };
  p.variance_dzz = [](double) { return 0.0; };
  return p;
}

ProductivityProcess ModelParams::productivity() const {
  if (custom_process) return custom_process();
  return ProductivityProcess::constant(mu_z, sigma_z);
}

std::vector<std::string> ModelParams::violations() const {
  std::vector<std::string> out;
  auto need = [&](bool ok, const char* what) {
    if (!ok) out.emplace_back(what);
  };
  need(std::isfinite(gamma) && gamma > 0.0, "gamma must be > 0");
  need(std::isfinite(rho) && rho >= 0.0, "rho must be >= 0");
  need(std::isfinite(sigma_z) && sigma_z >= 0.0, "sigma_z must be >= 0");
  need(std::isfinite(mu_z), "mu_z must be finite");
  need(std::isfinite(alpha) && alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  need(std::isfinite(delta) && delta >= 0.0, "delta must be >= 0");
  need(std::isfinite(a_min) && std::isfinite(a_max) && a_min < a_max, "a_min must be < a_max");
  need(std::isfinite(z_min) && std::isfinite(z_max) && z_min < z_max, "z_min must be < z_max");
  need(std::isfinite(horizon) && horizon > 0.0, "horizon must be > 0");
  need(std::isfinite(ic_wealth_sd) && ic_wealth_sd > 0.0, "ic_wealth_sd must be > 0");
  need(std::isfinite(ic_wealth_mean), "ic_wealth_mean must be finite");
  need(std::isfinite(consumption_floor) && consumption_floor > 0.0, "consumption_floor must be > 0");
  return out;
}

void ModelParams::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::ostringstream msg;
  msg << "invalid model parameters:";
  for (const auto& s : v) msg << "\n  " << s;
  throw ConfigError(msg.str());
}

double utility(const ModelParams& model, double c) {
  if (!(c >= model.consumption_floor)) throw DomainError("utility: consumption below floor");
  if (model.gamma == 1.0) return std::log(c);
  return std::pow(c, 1.0 - model.gamma) / (1.0 - model.gamma);
}

double marginal_utility(const ModelParams& model, double c) {
  if (!(c >= model.consumption_floor)) throw DomainError("marginal_utility: consumption below floor");
  return std::pow(c, -model.gamma);
}

double optimal_consumption(const ModelParams& model, double v_a) {
  return std::pow(std::max(v_a, model.consumption_floor), -1.0 / model.gamma);
}

double savings_drift(double a, double z, double c, const Prices& prices) {
  return prices.w * z + prices.r * a - c;
}

Prices prices_from_capital(const ModelParams& model, double K) {
  if (!(K > 0.0) || !std::isfinite(K)) {
    throw EquilibriumError("prices_from_capital: capital must be positive and finite, got " + std::to_string(K));
  }
  Prices p;
  p.K = K;
  p.r = model.alpha * std::pow(K, model.alpha - 1.0) - model.delta;
  p.w = (1.0 - model.alpha) * std::pow(K, model.alpha);
  return p;
}

double initial_value_guess(double a, double z) { return std::log(1.0 + a + z * z); }

double initial_density(const ModelParams& model, double a, double /*z*/) {
  const double m = model.ic_wealth_mean;
  const double s = model.ic_wealth_sd;
  const double x = (a - m) / s;
  const double pdf = std::exp(-0.5 * x * x) / (s * std::sqrt(2.0 * M_PI));
  auto cdf = [](double u) { return 0.5 * std::erfc(-u / std::sqrt(2.0)); };
  const double mass = cdf((model.a_max - m) / s) - cdf((model.a_min - m) / s);
  return pdf / mass / (model.z_max - model.z_min);
}

double aggregate_capital(const QuadratureMesh& mesh, std::span<const double> density) {
  if (density.size() != mesh.size()) throw ConfigError("aggregate_capital: density size does not match mesh");
  const std::size_t nz = mesh.z_nodes.size();
  double mass = 0.0;
  double first_moment = 0.0;
  for (std::size_t i = 0; i < mesh.a_nodes.size(); ++i) {
    for (std::size_t j = 0; j < nz; ++j) {
      const std::size_t k = i * nz + j;
      mass += mesh.weights[k] * density[k];
      first_moment += mesh.weights[k] * mesh.a_nodes[i] * density[k];
    }
  }
  if (!(mass >= 1e-8) || !std::isfinite(first_moment)) {
    throw EquilibriumError("aggregate_capital: degenerate density (mesh mass " + std::to_string(mass) + ")");
  }
  return first_moment / mass;
}

double aggregate_capital(const QuadratureMesh& mesh, const std::function<double(double, double)>& density) {
  std::vector<double> values(mesh.size());
  const std::size_t nz = mesh.z_nodes.size();
  for (std::size_t i = 0; i < mesh.a_nodes.size(); ++i) {
    for (std::size_t j = 0; j < nz; ++j) values[i * nz + j] = density(mesh.a_nodes[i], mesh.z_nodes[j]);
  }
  return aggregate_capital(mesh, values);
}

namespace {

double interpolate(std::span<const double> t_nodes, std::span<const double> y, double t) {
  if (t_nodes.empty()) throw ConfigError("equilibrium path is empty");
  if (t_nodes.size() == 1 || t <= t_nodes.front()) return y.front();
  if (t >= t_nodes.back()) return y.back();
  const auto it = std::upper_bound(t_nodes.begin(), t_nodes.end(), t);
  const std::size_t hi = static_cast<std::size_t>(it - t_nodes.begin());
  const std::size_t lo = hi - 1;
  const double s = (t - t_nodes[lo]) / (t_nodes[hi] - t_nodes[lo]);
  return (1.0 - s) * y[lo] + s * y[hi];
}

}  // namespace

Prices EquilibriumPath::prices_at(double t) const {
  Prices p;
  p.r = interpolate(t_nodes, r, t);
  p.w = interpolate(t_nodes, w, t);
  p.K = interpolate(t_nodes, K, t);
  return p;
}

double EquilibriumPath::capital_at(double t) const { return interpolate(t_nodes, K, t); }

EquilibriumPath EquilibriumPath::constant(const ModelParams& model, std::span<const double> t_nodes, double K) {
  EquilibriumPath path;
  path.t_nodes.assign(t_nodes.begin(), t_nodes.end());
  path.K.assign(t_nodes.size(), K);
  path.refresh_prices(model);
  return path;
}

void EquilibriumPath::refresh_prices(const ModelParams& model) {
  Y.resize(K.size());
  r.resize(K.size());
  w.resize(K.size());
  for (std::size_t j = 0; j < K.size(); ++j) {
    const Prices p = prices_from_capital(model, K[j]);
    r[j] = p.r;
    w[j] = p.w;
    Y[j] = std::pow(K[j], model.alpha);
  }
}

}  // namespace abh
