#include "abh/losses.hpp"

#include <cmath>

#include "abh/errors.hpp"
#include "abh/jet_kernel.hpp"

namespace abh {

using kernel::BatchJets;
using kernel::Channel;
using kernel::ChannelSet;

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_finite(double x, const char* what, std::size_t point) {
  if (!std::isfinite(x)) throw NumericError(std::string(what) + " is not finite", point);
}

std::vector<Point3> at_time_zero(const std::vector<Point2>& pts) {
  std::vector<Point3> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back({p.a, p.z, 0.0});
  return out;
}

/// Records the active channels of point `i` as constants on `tape`.
std::array<ad::Var, kernel::kChannelKinds> jet_leaves(ad::Tape& tape, const BatchJets& jets, std::size_t i) {
  std::array<ad::Var, kernel::kChannelKinds> leaves;
  const ChannelSet& ch = jets.channels();
  for (std::size_t k = 0; k < ch.count(); ++k) {
    leaves[static_cast<std::size_t>(ch.at(k))] = tape.constant(jets.outputs()[i * ch.count() + k]);
  }
  return leaves;
}

void pull_adjoints(const ad::Tape& tape, ad::Var root, const BatchJets& jets, std::size_t i,
                   const std::array<ad::Var, kernel::kChannelKinds>& leaves, std::vector<double>& adj) {
  const std::vector<double> a = tape.adjoints(root);
  const ChannelSet& ch = jets.channels();
  for (std::size_t k = 0; k < ch.count(); ++k) {
    adj[i * ch.count() + k] = a[leaves[static_cast<std::size_t>(ch.at(k))].id()];
  }
}

double consumption(const ModelParams& model, double v_a) { return optimal_consumption(model, v_a); }

/// Zero-flux residual on an a-face: mu_a g.
ad::Var flux_a(const ModelParams& model, const Point3& p, const Prices& prices, ad::Var g, double v_a) {
  return savings_drift(p.a, p.z, consumption(model, v_a), prices) * g;
}

/// Zero-flux residual on a z-face: mu_z g - d/dz(sigma^2 g) / 2.
ad::Var flux_z(const ProductivityProcess& proc, const Point3& p, ad::Var g, ad::Var g_z) {
  return proc.drift(p.z) * g - 0.5 * (proc.variance_dz(p.z) * g + proc.variance(p.z) * g_z);
}

}  // namespace

std::vector<std::string> LossWeights::violations() const {
  std::vector<std::string> out;
  auto need = [&](double w, const char* name) {
    if (!(std::isfinite(w) && w >= 0.0)) out.push_back(std::string(name) + " weight must be >= 0");
  };
  need(hjb_pde, "hjb_pde");
  need(kf_pde, "kf_pde");
  need(ic_v, "ic_v");
  need(ic_g, "ic_g");
  need(bc, "bc");
  need(mass, "mass");
  need(phys, "phys");
  need(kf_flux, "kf_flux");
  return out;
}

const std::vector<std::string>& LossBreakdown::columns() {
  static const std::vector<std::string> names{"step",   "hjb_pde", "ic_v",  "bc_a_min", "bc_a_max",
                                              "bc_z_min", "bc_z_max", "phys", "kf_pde",   "ic_g",
                                              "mass",   "kf_flux", "total"};
  return names;
}

std::vector<double> LossBreakdown::row() const {
  return {static_cast<double>(step), hjb_pde, ic_v, bc_a_min, bc_a_max, bc_z_min, bc_z_max,
          phys, kf_pde, ic_g, mass, kf_flux, total};
}

double weighted_total(const LossBreakdown& t, const LossWeights& w) {
  return w.hjb_pde * t.hjb_pde + w.ic_v * t.ic_v + w.bc * (t.bc_a_min + t.bc_a_max + t.bc_z_min + t.bc_z_max) +
         w.phys * t.phys + w.kf_pde * t.kf_pde + w.ic_g * t.ic_g + w.mass * t.mass + w.kf_flux * t.kf_flux;
}

LossBreakdown combine(const LossBreakdown& hjb, const LossBreakdown& kf, const LossWeights& weights) {
  LossBreakdown out = hjb;
  out.kf_pde = kf.kf_pde;
  out.ic_g = kf.ic_g;
  out.mass = kf.mass;
  out.kf_flux = kf.kf_flux;
  out.total = weighted_total(out, weights);
  return out;
}

MassGrid MassGrid::make(const ModelParams& model, std::size_t n_a, std::size_t n_z, std::size_t n_t) {
  return {build_mesh(model, n_a, n_z), lattice(0.0, model.horizon, n_t)};
}

std::vector<Point3> MassGrid::points() const {
  std::vector<Point3> pts;
  pts.reserve(t_nodes.size() * mesh.size());
  for (double t : t_nodes)
    for (double a : mesh.a_nodes)
      for (double z : mesh.z_nodes) pts.push_back({a, z, t});
  return pts;
}

ad::Var crra_utility(const ModelParams& model, ad::Var c) {
  if (model.gamma == 1.0) return log(c);
  return pow(c, 1.0 - model.gamma) / (1.0 - model.gamma);
}

ad::Var hjb_residual(const ModelParams& model, const ProductivityProcess& process, const Point3& p,
                     const Prices& prices, const ValueJetVars& j) {
  const ad::Var c = pow(max(j.v_a, model.consumption_floor), -1.0 / model.gamma);
  const ad::Var mu_a = (prices.w * p.z + prices.r * p.a) - c;
  return model.rho * j.v - crra_utility(model, c) - j.v_a * mu_a - process.drift(p.z) * j.v_z -
         0.5 * process.variance(p.z) * j.v_zz - j.v_t;
}

double borrowing_limit_slope(const ModelParams& model, double z, const Prices& prices) {
  const double c = std::max(prices.w * z + prices.r * model.a_min, model.consumption_floor);
  return marginal_utility(model, c);
}

ad::Var kf_residual(const ModelParams& model, const ProductivityProcess& process, const Point3& p,
                    const Prices& prices, const DensityJetVars& j, double v_a, double v_aa) {
  const double c = consumption(model, v_a);
  const double c_a = v_a >= model.consumption_floor
                         ? (-1.0 / model.gamma) * std::pow(v_a, -1.0 / model.gamma - 1.0) * v_aa
                         : 0.0;
  const double mu_a = savings_drift(p.a, p.z, c, prices);

  const ad::Var g = softplus(j.phi);
  const ad::Var s = exp(j.phi - g);  // sigmoid(phi)
  const ad::Var g_a = s * j.phi_a;
  const ad::Var g_z = s * j.phi_z;
  const ad::Var g_t = s * j.phi_t;
  const ad::Var g_zz = s * (1.0 - s) * square(j.phi_z) + s * j.phi_zz;

  const ad::Var transport = (prices.r - c_a) * g + mu_a * g_a;
  const ad::Var drift_z = process.drift_dz(p.z) * g + process.drift(p.z) * g_z;
  const ad::Var diffusion = 0.5 * (process.variance_dzz(p.z) * g + 2.0 * process.variance_dz(p.z) * g_z +
                                   process.variance(p.z) * g_zz);
  return g_t + transport + drift_z - diffusion;
}

// ---- kernel path -----------------------------------------------------------

SideResult hjb_side(const ModelParams& model, const LossWeights& weights, const MlpParams& net,
                    const InputScaler& scaler, const EquilibriumPath& path, const CollocationBatch& batch,
                    bool with_grad) {
  const ProductivityProcess proc = model.productivity();
  SideResult out;
  if (with_grad) out.grad.assign(net.parameter_count(), 0.0);
  LossBreakdown& terms = out.terms;

  if (const auto& pts = batch.interior; !pts.empty()) {
    const BatchJets jets =
        BatchJets::forward(net, scaler, pts, {Channel::d_a, Channel::d_z, Channel::d_t, Channel::d_aa, Channel::d_zz});
    std::vector<double> adj(with_grad ? jets.outputs().size() : 0);
    const double inv_n = 1.0 / static_cast<double>(pts.size());
    double pde = 0.0, shape = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      ad::Tape tape;
      const auto leaf = jet_leaves(tape, jets, i);
      const ValueJetVars vj{leaf[0], leaf[1], leaf[2], leaf[3], leaf[5]};
      const ad::Var res = hjb_residual(model, proc, pts[i], path.prices_at(pts[i].t), vj);
      check_finite(res.value(), "HJB residual at interior point", i);
      const ad::Var sq = square(res);
      const ad::Var hinge = square(min(leaf[1], 0.0)) + square(max(leaf[4], 0.0));
      pde += sq.value();
      shape += hinge.value();
      if (with_grad) {
        const ad::Var root = (weights.hjb_pde * inv_n) * sq + (weights.phys * inv_n) * hinge;
        pull_adjoints(tape, root, jets, i, leaf, adj);
      }
    }
    terms.hjb_pde = pde * inv_n;
    terms.phys = shape * inv_n;
    if (with_grad) jets.backward(adj, out.grad);
  }

  // Linear penalties on one jet channel: mean (jet - target)^2.
  auto penalty = [&](const std::vector<Point3>& pts, Channel c, double weight, auto target, const char* what) {
    if (pts.empty()) return 0.0;
    const BatchJets jets = c == Channel::value ? BatchJets::forward(net, scaler, pts, {})
                                               : BatchJets::forward(net, scaler, pts, {c});
    const std::size_t cc = jets.channels().count();
    const std::size_t slot = jets.channels().slot(c);
    const double inv_n = 1.0 / static_cast<double>(pts.size());
    std::vector<double> adj(with_grad ? jets.outputs().size() : 0, 0.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double res = jets(i, c) - target(pts[i]);
      check_finite(res, what, i);
      sum += res * res;
      if (with_grad) adj[i * cc + slot] = 2.0 * weight * inv_n * res;
    }
    if (with_grad) jets.backward(adj, out.grad);
    return sum * inv_n;
  };
  const auto zero = [](const Point3&) { return 0.0; };
  terms.bc_a_min = penalty(batch.boundary_a_min, Channel::d_a, weights.bc,
                           [&](const Point3& p) { return borrowing_limit_slope(model, p.z, path.prices_at(p.t)); },
                           "borrowing-limit residual");
  terms.bc_a_max = penalty(batch.boundary_a_max, Channel::d_a, weights.bc, zero, "a_max boundary residual");
  terms.bc_z_min = penalty(batch.boundary_z_min, Channel::d_z, weights.bc, zero, "z_min boundary residual");
  terms.bc_z_max = penalty(batch.boundary_z_max, Channel::d_z, weights.bc, zero, "z_max boundary residual");
  terms.ic_v = penalty(at_time_zero(batch.initial_time), Channel::value, weights.ic_v,
                       [](const Point3& p) { return initial_value_guess(p.a, p.z); }, "value initial residual");

  out.weighted = weighted_total(terms, weights);
  terms.total = out.weighted;
  return out;
}

SideResult kf_side(const ModelParams& model, const LossWeights& weights, const MlpParams& net,
                   const MlpParams& value_net, const InputScaler& scaler, const EquilibriumPath& path,
                   const CollocationBatch& batch, const MassGrid& mass_grid, bool with_grad) {
  const ProductivityProcess proc = model.productivity();
  SideResult out;
  if (with_grad) out.grad.assign(net.parameter_count(), 0.0);
  LossBreakdown& terms = out.terms;

  if (const auto& pts = batch.interior; !pts.empty()) {
    const BatchJets jets = BatchJets::forward(net, scaler, pts, {Channel::d_a, Channel::d_z, Channel::d_t, Channel::d_zz});
    const BatchJets field = BatchJets::forward(value_net, scaler, pts, {Channel::d_a, Channel::d_aa});
    std::vector<double> adj(with_grad ? jets.outputs().size() : 0);
    const double inv_n = 1.0 / static_cast<double>(pts.size());
    double pde = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      ad::Tape tape;
      const auto leaf = jet_leaves(tape, jets, i);
      const DensityJetVars dj{leaf[0], leaf[1], leaf[2], leaf[3], leaf[5]};
      const ad::Var res = kf_residual(model, proc, pts[i], path.prices_at(pts[i].t), dj, field(i, Channel::d_a),
                                      field(i, Channel::d_aa));
      check_finite(res.value(), "KF residual at interior point", i);
      const ad::Var sq = square(res);
      pde += sq.value();
      if (with_grad) pull_adjoints(tape, (weights.kf_pde * inv_n) * sq, jets, i, leaf, adj);
    }
    terms.kf_pde = pde * inv_n;
    if (with_grad) jets.backward(adj, out.grad);
  }

  if (!batch.initial_time.empty()) {
    const auto pts = at_time_zero(batch.initial_time);
    const BatchJets jets = BatchJets::forward(net, scaler, pts, {});
    const double inv_n = 1.0 / static_cast<double>(pts.size());
    std::vector<double> adj(with_grad ? pts.size() : 0);
    double sum = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double phi = jets(i, Channel::value);
      const double res = softplus(phi) - initial_density(model, pts[i].a, pts[i].z);
      check_finite(res, "density initial residual", i);
      sum += res * res;
      if (with_grad) adj[i] = 2.0 * weights.ic_g * inv_n * res * sigmoid(phi);
    }
    terms.ic_g = sum * inv_n;
    if (with_grad) jets.backward(adj, out.grad);
  }

  if (!mass_grid.t_nodes.empty()) {
    const auto pts = mass_grid.points();
    const BatchJets jets = BatchJets::forward(net, scaler, pts, {});
    const std::size_t m = mass_grid.mesh.size();
    const double inv_nt = 1.0 / static_cast<double>(mass_grid.t_nodes.size());
    std::vector<double> adj(with_grad ? pts.size() : 0);
    double sum = 0.0;
    for (std::size_t j = 0; j < mass_grid.t_nodes.size(); ++j) {
      double mass = 0.0;
      for (std::size_t k = 0; k < m; ++k) mass += mass_grid.mesh.weights[k] * softplus(jets(j * m + k, Channel::value));
      check_finite(mass, "density mass at time node", j);
      sum += (mass - 1.0) * (mass - 1.0);
      if (with_grad) {
        const double scale = 2.0 * weights.mass * inv_nt * (mass - 1.0);
        for (std::size_t k = 0; k < m; ++k)
          adj[j * m + k] = scale * mass_grid.mesh.weights[k] * sigmoid(jets(j * m + k, Channel::value));
      }
    }
    terms.mass = sum * inv_nt;
    if (with_grad) jets.backward(adj, out.grad);
  }

  if (weights.kf_flux > 0.0) {
    const std::size_t total = batch.boundary_a_min.size() + batch.boundary_a_max.size() +
                              batch.boundary_z_min.size() + batch.boundary_z_max.size();
    const double inv_n = total ? 1.0 / static_cast<double>(total) : 0.0;
    double sum = 0.0;
    for (const auto* face : {&batch.boundary_a_min, &batch.boundary_a_max}) {
      if (face->empty()) continue;
      const BatchJets jets = BatchJets::forward(net, scaler, *face, {});
      const BatchJets field = BatchJets::forward(value_net, scaler, *face, {Channel::d_a});
      std::vector<double> adj(with_grad ? face->size() : 0);
      for (std::size_t i = 0; i < face->size(); ++i) {
        ad::Tape tape;
        const auto leaf = jet_leaves(tape, jets, i);
        const Point3& p = (*face)[i];
        const ad::Var f = flux_a(model, p, path.prices_at(p.t), softplus(leaf[0]), field(i, Channel::d_a));
        check_finite(f.value(), "density flux on a wealth face", i);
        const ad::Var sq = square(f);
        sum += sq.value();
        if (with_grad) pull_adjoints(tape, (weights.kf_flux * inv_n) * sq, jets, i, leaf, adj);
      }
      if (with_grad) jets.backward(adj, out.grad);
    }
    for (const auto* face : {&batch.boundary_z_min, &batch.boundary_z_max}) {
      if (face->empty()) continue;
      const BatchJets jets = BatchJets::forward(net, scaler, *face, {Channel::d_z});
      std::vector<double> adj(with_grad ? jets.outputs().size() : 0);
      for (std::size_t i = 0; i < face->size(); ++i) {
        ad::Tape tape;
        const auto leaf = jet_leaves(tape, jets, i);
        const ad::Var g = softplus(leaf[0]);
        const ad::Var g_z = exp(leaf[0] - g) * leaf[2];
        const ad::Var f = flux_z(proc, (*face)[i], g, g_z);
        check_finite(f.value(), "density flux on a productivity face", i);
        const ad::Var sq = square(f);
        sum += sq.value();
        if (with_grad) pull_adjoints(tape, (weights.kf_flux * inv_n) * sq, jets, i, leaf, adj);
      }
      if (with_grad) jets.backward(adj, out.grad);
    }
    terms.kf_flux = sum * inv_n;
  }

  out.weighted = weighted_total(terms, weights);
  terms.total = out.weighted;
  return out;
}

// ---- reference path --------------------------------------------------------

namespace reference {

namespace {

void add_into(std::vector<double>& acc, const std::vector<double>& g) {
  // Leaves recorded by several network evaluations are laid out one copy after another.
  for (std::size_t k = 0; k < g.size(); ++k) acc[k % acc.size()] += g[k];
}

struct PointTape {
  ad::Tape tape;
  ad::Var a, z, t;
  explicit PointTape(const Point3& p)
      : a(tape.input("a", p.a)), z(tape.input("z", p.z)), t(tape.input("t", p.t)) {}
  ad::Var d(ad::Var f, ad::Var x) { return tape.grad_vars(f, std::span<const ad::Var>(&x, 1))[0]; }
};

}  // namespace

Result evaluate(const ModelParams& model, const LossWeights& w, const MlpParams& value_net,
                const MlpParams& density_net, const InputScaler& scaler, const EquilibriumPath& path,
                const CollocationBatch& batch, const MassGrid& mass_grid) {
  const ProductivityProcess proc = model.productivity();
  Result out;
  out.value_grad.assign(value_net.parameter_count(), 0.0);
  out.density_grad.assign(density_net.parameter_count(), 0.0);
  LossBreakdown& terms = out.terms;
  const double eps = model.consumption_floor;

  auto inv = [](std::size_t n) { return n ? 1.0 / static_cast<double>(n) : 0.0; };

  const double inv_i = inv(batch.interior.size());
  for (std::size_t i = 0; i < batch.interior.size(); ++i) {
    const Point3& p = batch.interior[i];
    const Prices pr = path.prices_at(p.t);

    {
      PointTape pt(p);
      std::vector<ad::Var> leaves;
      const ad::Var v = eval_value(pt.tape, value_net, scaler, pt.a, pt.z, pt.t, &leaves);
      const ad::Var v_a = pt.d(v, pt.a), v_z = pt.d(v, pt.z), v_t = pt.d(v, pt.t);
      const ad::Var v_aa = pt.d(v_a, pt.a), v_zz = pt.d(v_z, pt.z);
      const ad::Var res = hjb_residual(model, proc, p, pr, {v, v_a, v_z, v_t, v_zz});
      const ad::Var sq = square(res);
      const ad::Var hinge = square(min(v_a, 0.0)) + square(max(v_aa, 0.0));
      terms.hjb_pde += sq.value() * inv_i;
      terms.phys += hinge.value() * inv_i;
      add_into(out.value_grad, pt.tape.param_gradient((w.hjb_pde * inv_i) * sq + (w.phys * inv_i) * hinge, leaves));
    }
    {
      PointTape pt(p);
      std::vector<ad::Var> leaves;
      const ad::Var v = eval_value(pt.tape, value_net, scaler, pt.a, pt.z, pt.t);
      const ad::Var c = pow(max(pt.d(v, pt.a), eps), -1.0 / model.gamma);
      const ad::Var mu_a = pr.w * p.z + pr.r * pt.a - c;
      const ad::Var g = eval_density(pt.tape, density_net, scaler, pt.a, pt.z, pt.t, &leaves);
      const ad::Var transport = pt.d(mu_a * g, pt.a);
      const ad::Var g_z = pt.d(g, pt.z);
      const ad::Var g_t = pt.d(g, pt.t);
      const ad::Var g_zz = pt.d(g_z, pt.z);
      const ad::Var res = g_t + transport + proc.drift_dz(p.z) * g + proc.drift(p.z) * g_z -
                          0.5 * (proc.variance_dzz(p.z) * g + 2.0 * proc.variance_dz(p.z) * g_z +
                                 proc.variance(p.z) * g_zz);
      const ad::Var sq = square(res);
      terms.kf_pde += sq.value() * inv_i;
      add_into(out.density_grad, pt.tape.param_gradient((w.kf_pde * inv_i) * sq, leaves));
    }
  }

  auto value_face = [&](const std::vector<Point3>& pts, bool along_a, auto target, double& term) {
    const double inv_n = inv(pts.size());
    for (const Point3& p : pts) {
      PointTape pt(p);
      std::vector<ad::Var> leaves;
      const ad::Var v = eval_value(pt.tape, value_net, scaler, pt.a, pt.z, pt.t, &leaves);
      const ad::Var sq = square(pt.d(v, along_a ? pt.a : pt.z) - target(p));
      term += sq.value() * inv_n;
      add_into(out.value_grad, pt.tape.param_gradient((w.bc * inv_n) * sq, leaves));
    }
  };
  const auto zero = [](const Point3&) { return 0.0; };
  value_face(batch.boundary_a_min, true,
             [&](const Point3& p) { return borrowing_limit_slope(model, p.z, path.prices_at(p.t)); }, terms.bc_a_min);
  value_face(batch.boundary_a_max, true, zero, terms.bc_a_max);
  value_face(batch.boundary_z_min, false, zero, terms.bc_z_min);
  value_face(batch.boundary_z_max, false, zero, terms.bc_z_max);

  const double inv_0 = inv(batch.initial_time.size());
  for (const Point2& q : batch.initial_time) {
    PointTape pt({q.a, q.z, 0.0});
    std::vector<ad::Var> vl, gl;
    const ad::Var sv = square(eval_value(pt.tape, value_net, scaler, pt.a, pt.z, pt.t, &vl) - initial_value_guess(q.a, q.z));
    const ad::Var sg =
        square(eval_density(pt.tape, density_net, scaler, pt.a, pt.z, pt.t, &gl) - initial_density(model, q.a, q.z));
    terms.ic_v += sv.value() * inv_0;
    terms.ic_g += sg.value() * inv_0;
    add_into(out.value_grad, pt.tape.param_gradient((w.ic_v * inv_0) * sv, vl));
    add_into(out.density_grad, pt.tape.param_gradient((w.ic_g * inv_0) * sg, gl));
  }

  const double inv_t = inv(mass_grid.t_nodes.size());
  for (double t : mass_grid.t_nodes) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    ad::Var mass = tape.constant(0.0);
    const auto& mesh = mass_grid.mesh;
    for (std::size_t ia = 0; ia < mesh.a_nodes.size(); ++ia) {
      for (std::size_t iz = 0; iz < mesh.z_nodes.size(); ++iz) {
        const ad::Var g = eval_density(tape, density_net, scaler, tape.constant(mesh.a_nodes[ia]),
                                       tape.constant(mesh.z_nodes[iz]), tape.constant(t), &leaves);
        mass = mass + mesh.weights[ia * mesh.z_nodes.size() + iz] * g;
      }
    }
    const ad::Var sq = square(mass - 1.0);
    terms.mass += sq.value() * inv_t;
    add_into(out.density_grad, tape.param_gradient((w.mass * inv_t) * sq, leaves));
  }

  if (w.kf_flux > 0.0) {
    const double inv_f = inv(batch.boundary_a_min.size() + batch.boundary_a_max.size() +
                             batch.boundary_z_min.size() + batch.boundary_z_max.size());
    for (const auto* face : {&batch.boundary_a_min, &batch.boundary_a_max, &batch.boundary_z_min, &batch.boundary_z_max}) {
      const bool a_face = face == &batch.boundary_a_min || face == &batch.boundary_a_max;
      for (const Point3& p : *face) {
        PointTape pt(p);
        std::vector<ad::Var> leaves;
        const ad::Var g = eval_density(pt.tape, density_net, scaler, pt.a, pt.z, pt.t, &leaves);
        ad::Var f;
        if (a_face) {
          const double v_a = pt.d(eval_value(pt.tape, value_net, scaler, pt.a, pt.z, pt.t), pt.a).value();
          f = flux_a(model, p, path.prices_at(p.t), g, v_a);
        } else {
          f = flux_z(proc, p, g, pt.d(g, pt.z));
        }
        const ad::Var sq = square(f);
        terms.kf_flux += sq.value() * inv_f;
        add_into(out.density_grad, pt.tape.param_gradient((w.kf_flux * inv_f) * sq, leaves));
      }
    }
  }

  terms.total = weighted_total(terms, w);
  return out;
}

}  // namespace reference

}  // namespace abh
