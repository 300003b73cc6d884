#pragma once

// Finite-difference reference solver for the finite-horizon transition.
//
// The HJB is stepped backward with an implicit upwind scheme; the KF is
// stepped forward with the transpose of the same discrete generator, so mass
// is conserved to round-off. An outer damped fixed point makes the capital
// path consistent with the density it produces.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "abh/economy.hpp"

namespace abh::fd {

struct FdGrid {
  std::size_t n_a = 101;
  std::size_t n_z = 21;  // 1 is allowed only without productivity risk
  std::size_t n_t = 101;

  std::vector<std::string> violations(const ModelParams& model) const;
};

struct FdOptions {
  std::size_t max_outer = 200;
  double tol = 1e-5;
  double damping = 0.5;
  double stationary_step = 1000.0;
  double stationary_tol = 1e-10;
  std::size_t stationary_max_iter = 500;
};

/// Tensor grid geometry shared by the sweeps.
struct Geometry {
  std::vector<double> a, z, t;
  double da = 0.0, dz = 0.0, dt = 0.0;

  Geometry(const ModelParams& model, const FdGrid& grid);
  std::size_t cells() const noexcept { return a.size() * z.size(); }
  std::size_t cell(std::size_t i, std::size_t j) const noexcept { return i * z.size() + j; }
  double cell_volume() const noexcept { return da * dz; }
};

/// Policy on one time slice, per cell.
struct Policy {
  std::vector<double> c;
  std::vector<double> mu;                // selected savings drift
  std::vector<std::int8_t> direction;    // +1 forward difference, -1 backward, 0 zero-drift fallback
};

/// Upwind policy from value slice `v` at prices (r, w).
Policy upwind_policy(const ModelParams& model, const Geometry& geo, std::span<const double> v, double r, double w);

/// Stationary value at constant prices by implicit iteration.
std::vector<double> stationary_value(const ModelParams& model, const Geometry& geo, double r, double w,
                                     const FdOptions& options = {});

struct HjbSweep {
  std::vector<double> v;  // [n][cell]
  std::vector<Policy> policy;  // policy used on the step leaving time node n, n < n_t - 1; last entry from v at T
};

HjbSweep hjb_backward_sweep(const ModelParams& model, const Geometry& geo, std::span<const double> r_path,
                            std::span<const double> w_path, std::span<const double> v_terminal);

/// Density per unit area on every time node, starting from `g_initial`.
std::vector<double> kf_forward_sweep(const ModelParams& model, const Geometry& geo, const HjbSweep& hjb,
                                     std::span<const double> g_initial);

struct FdSolution {
  Geometry geo;
  std::vector<double> v, g, c, mu;  // [n][cell]
  std::vector<std::int8_t> direction;
  std::vector<double> K, r, w;      // per time node
  std::vector<double> outer_residuals;

  std::size_t index(std::size_t n, std::size_t i, std::size_t j) const noexcept {
    return n * geo.cells() + geo.cell(i, j);
  }
  double mass(std::size_t n) const;
  double mean_wealth(std::size_t n) const;
  /// Trilinear interpolation of an [n][cell] field.
  double interpolate(const std::vector<double>& field, double a, double z, double t) const;
};

/// Truncated Gaussian initial density on the grid, scaled to unit discrete mass.
std::vector<double> initial_density_on_grid(const ModelParams& model, const Geometry& geo);

FdSolution solve_transition(const ModelParams& model, const FdGrid& grid, const FdOptions& options = {});

}  // namespace abh::fd
