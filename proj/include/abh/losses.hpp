#pragma once

// Loss terms for the value (HJB) and density (KF) networks.
//
// Two implementations share the per-point residual heads below:
//  - the kernel path (`hjb_side`, `kf_side`) evaluates network jets with the
//    batched jet kernel and records only the cheap per-point head on a small
//    tape, whose adjoints are pulled back through the kernel;
//  - the reference path (`reference::evaluate`) records every network
//    evaluation and its input derivatives on scalar tapes. It is slow and
//    serial, and exists to check the kernel path.

#include <string>
#include <vector>

#include "abh/autodiff.hpp"
#include "abh/economy.hpp"
#include "abh/net.hpp"
#include "abh/sampler.hpp"

namespace abh {

struct LossWeights {
  double hjb_pde = 0.1;
  double kf_pde = 0.1;
  double ic_v = 1.0;
  double ic_g = 1.0;
  double bc = 0.1;  // shared by the four value-function faces
  double mass = 1.0;
  double phys = 0.1;
  double kf_flux = 0.0;  // optional zero-flux penalty for the density; off by default

  std::vector<std::string> violations() const;
};

/// Raw (unweighted) loss terms of one step.
struct LossBreakdown {
  std::size_t step = 0;
  double hjb_pde = 0.0;
  double ic_v = 0.0;
  double bc_a_min = 0.0;
  double bc_a_max = 0.0;
  double bc_z_min = 0.0;
  double bc_z_max = 0.0;
  double phys = 0.0;
  double kf_pde = 0.0;
  double ic_g = 0.0;
  double mass = 0.0;
  double kf_flux = 0.0;
  double total = 0.0;

  static const std::vector<std::string>& columns();
  /// Values in `columns()` order, step first.
  std::vector<double> row() const;
};

double weighted_total(const LossBreakdown& terms, const LossWeights& weights);

/// Copies the value-side terms of `hjb` and density-side terms of `kf` and
/// recomputes the total.
LossBreakdown combine(const LossBreakdown& hjb, const LossBreakdown& kf, const LossWeights& weights);

/// Mesh and times at which the density mass is measured.
struct MassGrid {
  QuadratureMesh mesh;
  std::vector<double> t_nodes;

  static MassGrid make(const ModelParams& model, std::size_t n_a, std::size_t n_z, std::size_t n_t);
  /// Mesh points at every time node, time-major.
  std::vector<Point3> points() const;
};

// ---- per-point heads -------------------------------------------------------

struct ValueJetVars {
  ad::Var v, v_a, v_z, v_t, v_zz;
};

struct DensityJetVars {
  ad::Var phi, phi_a, phi_z, phi_t, phi_zz;
};

ad::Var crra_utility(const ModelParams& model, ad::Var c);

/// rho v - u(c*) - v_a mu_a - v_z mu_z - sigma^2/2 v_zz - v_t with c* from the clamped v_a.
ad::Var hjb_residual(const ModelParams& model, const ProductivityProcess& process, const Point3& point,
                     const Prices& prices, const ValueJetVars& jets);

/// Target slope at the borrowing limit: u'(w z + r a_min), consumption clamped at the floor.
double borrowing_limit_slope(const ModelParams& model, double z, const Prices& prices);

/// KF residual for g = softplus(phi) with the product rule expanded by hand.
/// The frozen value field enters through v_a and v_aa.
ad::Var kf_residual(const ModelParams& model, const ProductivityProcess& process, const Point3& point,
                    const Prices& prices, const DensityJetVars& jets, double v_a, double v_aa);

// ---- kernel path -----------------------------------------------------------

struct SideResult {
  LossBreakdown terms;        // only this side's entries are filled
  double weighted = 0.0;      // this side's contribution to the total
  std::vector<double> grad;   // d weighted / d params of this side's network; empty if not requested
};

/// PDE, initial, boundary and shape terms of the value network.
SideResult hjb_side(const ModelParams& model, const LossWeights& weights, const MlpParams& value_net,
                    const InputScaler& scaler, const EquilibriumPath& path, const CollocationBatch& batch,
                    bool with_grad);

/// KF residual, initial density and mass terms of the density network. The
/// value network is read as a fixed field: no gradient flows to it.
SideResult kf_side(const ModelParams& model, const LossWeights& weights, const MlpParams& density_net,
                   const MlpParams& value_net, const InputScaler& scaler, const EquilibriumPath& path,
                   const CollocationBatch& batch, const MassGrid& mass_grid, bool with_grad);

// ---- reference path --------------------------------------------------------

namespace reference {

struct Result {
  LossBreakdown terms;
  std::vector<double> value_grad;    // of the value-side weighted terms
  std::vector<double> density_grad;  // of the density-side weighted terms
};

Result evaluate(const ModelParams& model, const LossWeights& weights, const MlpParams& value_net,
                const MlpParams& density_net, const InputScaler& scaler, const EquilibriumPath& path,
                const CollocationBatch& batch, const MassGrid& mass_grid);

}  // namespace reference

}  // namespace abh
