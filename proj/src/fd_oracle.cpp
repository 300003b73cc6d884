#include "abh/fd_oracle.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "abh/errors.hpp"

namespace abh::fd {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;

double flow_utility(const ModelParams& model, double c) {
  // Only the clamp differs from `utility`: a steep value slope can push c below the floor.
  return utility(model, std::max(c, model.consumption_floor));
}

/// Discrete generator: upwind wealth drift plus reflected productivity diffusion.
SpMat generator(const ModelParams& model, const Geometry& geo, const Policy& policy) {
  const ProductivityProcess proc = model.productivity();
  const std::size_t na = geo.a.size(), nz = geo.z.size();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(geo.cells() * 5);
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nz; ++j) {
      const auto k = static_cast<int>(geo.cell(i, j));
      const double mu = policy.mu[geo.cell(i, j)];
      double diag = 0.0;
      auto link = [&](std::size_t to, double rate) {
        if (rate == 0.0) return;
        trip.emplace_back(k, static_cast<int>(to), rate);
        diag -= rate;
      };
      if (mu > 0.0) link(geo.cell(i + 1, j), mu / geo.da);
      if (mu < 0.0) link(geo.cell(i - 1, j), -mu / geo.da);
      if (nz > 1) {
        const double half_var = 0.5 * proc.variance(geo.z[j]) / (geo.dz * geo.dz);
        const double drift = proc.drift(geo.z[j]);
        if (j + 1 < nz) link(geo.cell(i, j + 1), half_var + std::max(drift, 0.0) / geo.dz);
        if (j > 0) link(geo.cell(i, j - 1), half_var - std::min(drift, 0.0) / geo.dz);
      }
      trip.emplace_back(k, k, diag);
    }
  }
  SpMat A(static_cast<Eigen::Index>(geo.cells()), static_cast<Eigen::Index>(geo.cells()));
  A.setFromTriplets(trip.begin(), trip.end());
  return A;
}

Vec solve(const SpMat& M, const Vec& rhs, const char* what, std::size_t index) {
  Eigen::SparseLU<SpMat> lu;
  lu.compute(M);
  if (lu.info() != Eigen::Success) {
    throw OracleError(std::string(what) + ": factorization failed at time index " + std::to_string(index));
  }
  Vec x = lu.solve(rhs);
  if (lu.info() != Eigen::Success || !x.allFinite()) {
    throw OracleError(std::string(what) + ": solve failed at time index " + std::to_string(index));
  }
  return x;
}

SpMat identity(std::size_t n) {
  SpMat I(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  I.setIdentity();
  return I;
}

Vec utility_vector(const ModelParams& model, const Policy& p) {
  Vec u(static_cast<Eigen::Index>(p.c.size()));
  for (std::size_t k = 0; k < p.c.size(); ++k) u[static_cast<Eigen::Index>(k)] = flow_utility(model, p.c[k]);
  return u;
}

std::span<const double> slice(const std::vector<double>& field, std::size_t n, std::size_t cells) {
  return std::span<const double>(field).subspan(n * cells, cells);
}

}  // namespace

std::vector<std::string> FdGrid::violations(const ModelParams& model) const {
  std::vector<std::string> out;
  if (n_a < 3) out.emplace_back("fd n_a must be >= 3");
  if (n_t < 3) out.emplace_back("fd n_t must be >= 3");
  if (n_z == 1) {
    if (model.sigma_z != 0.0 || model.custom_process) out.emplace_back("fd n_z = 1 requires sigma_z = 0");
  } else if (n_z < 3) {
    out.emplace_back("fd n_z must be >= 3 (or 1 without productivity risk)");
  }
  return out;
}

Geometry::Geometry(const ModelParams& model, const FdGrid& grid) {
  a = lattice(model.a_min, model.a_max, grid.n_a);
  t = lattice(0.0, model.horizon, grid.n_t);
  da = a[1] - a[0];
  dt = t[1] - t[0];
  if (grid.n_z == 1) {
    z = {0.5 * (model.z_min + model.z_max)};
    dz = model.z_max - model.z_min;
  } else {
    z = lattice(model.z_min, model.z_max, grid.n_z);
    dz = z[1] - z[0];
  }
}

Policy upwind_policy(const ModelParams& model, const Geometry& geo, std::span<const double> v, double r, double w) {
  const std::size_t na = geo.a.size(), nz = geo.z.size();
  Policy p;
  p.c.resize(geo.cells());
  p.mu.resize(geo.cells());
  p.direction.resize(geo.cells());
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nz; ++j) {
      const std::size_t k = geo.cell(i, j);
      const double income = w * geo.z[j] + r * geo.a[i];
      double c = income, mu = 0.0;
      std::int8_t dir = 0;
      // The borrowing limit has no backward neighbour and the wealth cap no
      // forward one; there the only alternative is zero drift.
      if (i + 1 < na) {
        const double cf = optimal_consumption(model, (v[geo.cell(i + 1, j)] - v[k]) / geo.da);
        if (income - cf > 0.0) {
          c = cf;
          mu = income - cf;
          dir = 1;
        }
      }
      if (dir == 0 && i > 0) {
        const double cb = optimal_consumption(model, (v[k] - v[geo.cell(i - 1, j)]) / geo.da);
        if (income - cb < 0.0) {
          c = cb;
          mu = income - cb;
          dir = -1;
        }
      }
      p.c[k] = c;
      p.mu[k] = mu;
      p.direction[k] = dir;
    }
  }
  return p;
}

std::vector<double> stationary_value(const ModelParams& model, const Geometry& geo, double r, double w,
                                     const FdOptions& options) {
  const std::size_t n = geo.cells();
  Vec v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < geo.a.size(); ++i)
    for (std::size_t j = 0; j < geo.z.size(); ++j)
      v[static_cast<Eigen::Index>(geo.cell(i, j))] =
          flow_utility(model, w * geo.z[j] + r * geo.a[i]) / std::max(model.rho, 1e-3);
  const double inv_step = 1.0 / options.stationary_step;
  const SpMat I = identity(n);
  for (std::size_t it = 0; it < options.stationary_max_iter; ++it) {
    const Policy p = upwind_policy(model, geo, std::span<const double>(v.data(), n), r, w);
    const SpMat M = (inv_step + model.rho) * I - generator(model, geo, p);
    const Vec next = solve(M, utility_vector(model, p) + inv_step * v, "stationary HJB", it);
    const double change = (next - v).cwiseAbs().maxCoeff();
    v = next;
    if (change < options.stationary_tol) return {v.data(), v.data() + n};
  }
  throw OracleError("stationary HJB did not converge in " + std::to_string(options.stationary_max_iter) + " iterations");
}

HjbSweep hjb_backward_sweep(const ModelParams& model, const Geometry& geo, std::span<const double> r_path,
                            std::span<const double> w_path, std::span<const double> v_terminal) {
  const std::size_t nt = geo.t.size(), n = geo.cells();
  if (r_path.size() != nt || w_path.size() != nt || v_terminal.size() != n) {
    throw ConfigError("hjb_backward_sweep: path or terminal size does not match the grid");
  }
  HjbSweep out;
  out.v.resize(nt * n);
  out.policy.resize(nt);
  std::copy(v_terminal.begin(), v_terminal.end(), out.v.begin() + static_cast<std::ptrdiff_t>((nt - 1) * n));
  const SpMat I = identity(n);
  const double inv_dt = 1.0 / geo.dt;
  for (std::size_t step = nt - 1; step-- > 0;) {
    const auto next = slice(out.v, step + 1, n);
    Policy p = upwind_policy(model, geo, next, r_path[step], w_path[step]);
    const SpMat M = (inv_dt + model.rho) * I - generator(model, geo, p);
    const Vec rhs = utility_vector(model, p) + inv_dt * Eigen::Map<const Vec>(next.data(), static_cast<Eigen::Index>(n));
    const Vec v = solve(M, rhs, "HJB step", step);
    std::copy(v.data(), v.data() + n, out.v.begin() + static_cast<std::ptrdiff_t>(step * n));
    out.policy[step] = std::move(p);
  }
  out.policy[nt - 1] = upwind_policy(model, geo, slice(out.v, nt - 1, n), r_path[nt - 1], w_path[nt - 1]);
  return out;
}

std::vector<double> kf_forward_sweep(const ModelParams& model, const Geometry& geo, const HjbSweep& hjb,
                                     std::span<const double> g_initial) {
  const std::size_t nt = geo.t.size(), n = geo.cells();
  if (g_initial.size() != n) throw ConfigError("kf_forward_sweep: initial density size does not match the grid");
  std::vector<double> g(nt * n);
  std::copy(g_initial.begin(), g_initial.end(), g.begin());
  const SpMat I = identity(n);
  const double vol = geo.cell_volume();
  for (std::size_t step = 0; step + 1 < nt; ++step) {
    const SpMat At = SpMat(generator(model, geo, hjb.policy[step]).transpose());
    const SpMat M = I - geo.dt * At;
    const auto prev = slice(g, step, n);
    Vec next = solve(M, Eigen::Map<const Vec>(prev.data(), static_cast<Eigen::Index>(n)), "KF step", step);
    const double lowest = next.minCoeff();
    if (lowest < -1e-12 * next.cwiseAbs().maxCoeff()) {
      throw OracleError("KF step produced negative density at time index " + std::to_string(step + 1));
    }
    next = next.cwiseMax(0.0);
    // Columns of the generator sum to zero, so the implicit step conserves mass; a drift here is a bug.
    const double mass = next.sum() * vol;
    const double start = Eigen::Map<const Vec>(prev.data(), static_cast<Eigen::Index>(n)).sum() * vol;
    if (std::abs(mass - start) > 1e-10) {
      throw OracleError("KF step lost mass at time index " + std::to_string(step + 1));
    }
    std::copy(next.data(), next.data() + n, g.begin() + static_cast<std::ptrdiff_t>((step + 1) * n));
  }
  return g;
}

double FdSolution::mass(std::size_t n) const {
  const auto s = slice(g, n, geo.cells());
  double m = 0.0;
  for (double x : s) m += x;
  return m * geo.cell_volume();
}

double FdSolution::mean_wealth(std::size_t n) const {
  double m = 0.0, first = 0.0;
  for (std::size_t i = 0; i < geo.a.size(); ++i) {
    for (std::size_t j = 0; j < geo.z.size(); ++j) {
      const double x = g[index(n, i, j)];
      m += x;
      first += x * geo.a[i];
    }
  }
  return first / m;
}

double FdSolution::interpolate(const std::vector<double>& field, double a, double z, double t) const {
  auto locate = [](const std::vector<double>& nodes, double x, std::size_t& lo, double& s) {
    if (nodes.size() == 1) {
      lo = 0;
      s = 0.0;
      return;
    }
    x = std::clamp(x, nodes.front(), nodes.back());
    const auto it = std::upper_bound(nodes.begin(), nodes.end(), x);
    lo = std::min(static_cast<std::size_t>(it - nodes.begin()), nodes.size() - 1) - 1;
    s = (x - nodes[lo]) / (nodes[lo + 1] - nodes[lo]);
  };
  std::size_t ia, iz, it;
  double sa, sz, st;
  locate(geo.a, a, ia, sa);
  locate(geo.z, z, iz, sz);
  locate(geo.t, t, it, st);
  const std::size_t ja = std::min(ia + 1, geo.a.size() - 1), jz = std::min(iz + 1, geo.z.size() - 1),
                    jt = std::min(it + 1, geo.t.size() - 1);
  auto at = [&](std::size_t n, std::size_t i, std::size_t j) { return field[index(n, i, j)]; };
  auto plane = [&](std::size_t n) {
    return (1 - sa) * ((1 - sz) * at(n, ia, iz) + sz * at(n, ia, jz)) + sa * ((1 - sz) * at(n, ja, iz) + sz * at(n, ja, jz));
  };
  return (1 - st) * plane(it) + st * plane(jt);
}

std::vector<double> initial_density_on_grid(const ModelParams& model, const Geometry& geo) {
  std::vector<double> g(geo.cells());
  double mass = 0.0;
  for (std::size_t i = 0; i < geo.a.size(); ++i) {
    for (std::size_t j = 0; j < geo.z.size(); ++j) {
      g[geo.cell(i, j)] = initial_density(model, geo.a[i], geo.z[j]);
      mass += g[geo.cell(i, j)];
    }
  }
  mass *= geo.cell_volume();
  for (double& x : g) x /= mass;
  return g;
}

FdSolution solve_transition(const ModelParams& model, const FdGrid& grid, const FdOptions& options) {
  model.validate();
  if (const auto v = grid.violations(model); !v.empty()) {
    std::ostringstream msg;
    msg << "invalid FD grid:";
    for (const auto& s : v) msg << "\n  " << s;
    throw ConfigError(msg.str());
  }
  if (!(options.damping > 0.0 && options.damping <= 1.0)) throw ConfigError("fd damping must lie in (0, 1]");

  FdSolution sol{Geometry(model, grid), {}, {}, {}, {}, {}, {}, {}, {}, {}};
  const Geometry& geo = sol.geo;
  const std::size_t nt = geo.t.size(), n = geo.cells();
  const std::vector<double> g0 = initial_density_on_grid(model, geo);
  double k0 = 0.0;
  for (std::size_t i = 0; i < geo.a.size(); ++i)
    for (std::size_t j = 0; j < geo.z.size(); ++j) k0 += geo.a[i] * g0[geo.cell(i, j)] * geo.cell_volume();

  std::vector<double> K(nt, k0), r(nt), w(nt);
  for (std::size_t outer = 0; outer < options.max_outer; ++outer) {
    for (std::size_t m = 0; m < nt; ++m) {
      const Prices p = prices_from_capital(model, K[m]);
      r[m] = p.r;
      w[m] = p.w;
    }
    const std::vector<double> v_T = stationary_value(model, geo, r.back(), w.back(), options);
    HjbSweep hjb = hjb_backward_sweep(model, geo, r, w, v_T);
    std::vector<double> g = kf_forward_sweep(model, geo, hjb, g0);

    std::vector<double> measured(nt);
    double residual = 0.0;
    for (std::size_t m = 0; m < nt; ++m) {
      double first = 0.0;
      for (std::size_t i = 0; i < geo.a.size(); ++i)
        for (std::size_t j = 0; j < geo.z.size(); ++j) first += geo.a[i] * g[m * n + geo.cell(i, j)];
      measured[m] = first * geo.cell_volume();
      residual = std::max(residual, std::abs(measured[m] - K[m]) / K[m]);
    }
    sol.outer_residuals.push_back(residual);

    if (residual < options.tol) {
      sol.v = std::move(hjb.v);
      sol.g = std::move(g);
      sol.K = measured;
      sol.c.resize(nt * n);
      sol.mu.resize(nt * n);
      sol.direction.resize(nt * n);
      for (std::size_t m = 0; m < nt; ++m) {
        const Prices p = prices_from_capital(model, sol.K[m]);
        sol.r.push_back(p.r);
        sol.w.push_back(p.w);
        // Reported policy is read off the value on the same time slice.
        const Policy pol = upwind_policy(model, geo, slice(sol.v, m, n), r[m], w[m]);
        std::copy(pol.c.begin(), pol.c.end(), sol.c.begin() + static_cast<std::ptrdiff_t>(m * n));
        std::copy(pol.mu.begin(), pol.mu.end(), sol.mu.begin() + static_cast<std::ptrdiff_t>(m * n));
        std::copy(pol.direction.begin(), pol.direction.end(), sol.direction.begin() + static_cast<std::ptrdiff_t>(m * n));
      }
      return sol;
    }
    for (std::size_t m = 0; m < nt; ++m) K[m] = (1.0 - options.damping) * K[m] + options.damping * measured[m];
  }
  std::ostringstream msg;
  msg << "FD transition did not converge in " << options.max_outer << " outer iterations; residuals:";
  for (double x : sol.outer_residuals) msg << ' ' << x;
  throw OracleError(msg.str());
}

}  // namespace abh::fd
