#include "abh/compare.hpp"

#include <cmath>

#include "abh/jet_kernel.hpp"
#include "json.hpp"

namespace abh {

namespace {

constexpr std::size_t kBlock = 4096;  // bounds the kernel's cached activations

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

void FdSource::evaluate(std::span<const Point3> points, std::vector<double>& v, std::vector<double>& c,
                        std::vector<double>& g) const {
  v.resize(points.size());
  c.resize(points.size());
  g.resize(points.size());
  for (std::size_t k = 0; k < points.size(); ++k) {
    const Point3& p = points[k];
    v[k] = sol_.interpolate(sol_.v, p.a, p.z, p.t);
    c[k] = sol_.interpolate(sol_.c, p.a, p.z, p.t);
    g[k] = sol_.interpolate(sol_.g, p.a, p.z, p.t);
  }
}

namespace {

double path_interp(const std::vector<double>& t, const std::vector<double>& y, double x) {
  EquilibriumPath p;
  p.t_nodes = t;
  p.K = y;
  return p.capital_at(x);
}

}  // namespace

double FdSource::capital(double t) const { return path_interp(sol_.geo.t, sol_.K, t); }
double FdSource::rate(double t) const { return path_interp(sol_.geo.t, sol_.r, t); }

PinnSource::PinnSource(const ModelParams& model, const MlpParams& value_net, const MlpParams& density_net,
                       const EquilibriumPath& path)
    : model_(model), value_(value_net), density_(density_net), path_(path), scaler_(InputScaler::for_model(model)) {}

void PinnSource::evaluate(std::span<const Point3> points, std::vector<double>& v, std::vector<double>& c,
                          std::vector<double>& g) const {
  v.resize(points.size());
  c.resize(points.size());
  g.resize(points.size());
  for (std::size_t start = 0; start < points.size(); start += kBlock) {
    const auto block = points.subspan(start, std::min(kBlock, points.size() - start));
    const auto jets = kernel::BatchJets::forward(value_, scaler_, block, {kernel::Channel::d_a});
    const auto phi = kernel::raw_outputs(density_, scaler_, block);
    for (std::size_t k = 0; k < block.size(); ++k) {
      v[start + k] = jets(k, kernel::Channel::value);
      c[start + k] = optimal_consumption(model_, jets(k, kernel::Channel::d_a));
      g[start + k] = softplus(phi[k]);
    }
  }
}

bool CompareReport::finite() const {
  for (double x : {v_rel_l2, c_rel_l2, g_rel_l2, K_abs_max, K_rel_max, r_abs_max})
    if (!std::isfinite(x) || x < 0.0) return false;
  return true;
}

std::string CompareReport::to_json() const {
  nlohmann::ordered_json j;
  j["t_max"] = t_max;
  j["nodes"] = nodes;
  j["v_rel_l2"] = v_rel_l2;
  j["c_rel_l2"] = c_rel_l2;
  j["g_rel_l2"] = g_rel_l2;
  j["K_abs_max"] = K_abs_max;
  j["K_rel_max"] = K_rel_max;
  j["r_abs_max"] = r_abs_max;
  j["verdicts"] = {{"c_rel_l2_below", {{"tolerance", c_tolerance}, {"pass", c_within()}}},
                   {"K_rel_max_below", {{"tolerance", K_tolerance}, {"pass", K_within()}}},
                   {"all_finite", finite()}};
  return j.dump(2);
}

CompareReport compare(const SolutionSource& candidate, const fd::FdSolution& fd, double t_fraction) {
  const auto& geo = fd.geo;
  CompareReport rep;
  rep.t_max = t_fraction * geo.t.back();
  const double slack = 1e-9 * geo.t.back();

  std::vector<Point3> pts;
  std::vector<double> fv, fc, fg;
  for (std::size_t n = 0; n < geo.t.size() && geo.t[n] <= rep.t_max + slack; ++n) {
    for (std::size_t i = 0; i < geo.a.size(); ++i) {
      for (std::size_t j = 0; j < geo.z.size(); ++j) {
        pts.push_back({geo.a[i], geo.z[j], geo.t[n]});
        fv.push_back(fd.v[fd.index(n, i, j)]);
        fc.push_back(fd.c[fd.index(n, i, j)]);
        fg.push_back(fd.g[fd.index(n, i, j)]);
      }
    }
    const double dK = std::abs(candidate.capital(geo.t[n]) - fd.K[n]);
    rep.K_abs_max = std::max(rep.K_abs_max, dK);
    rep.K_rel_max = std::max(rep.K_rel_max, dK / std::abs(fd.K[n]));
    rep.r_abs_max = std::max(rep.r_abs_max, std::abs(candidate.rate(geo.t[n]) - fd.r[n]));
  }
  rep.nodes = pts.size();

  std::vector<double> pv, pc, pg;
  candidate.evaluate(pts, pv, pc, pg);
  auto rel_l2 = [](const std::vector<double>& got, const std::vector<double>& want) {
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < got.size(); ++k) {
      num += (got[k] - want[k]) * (got[k] - want[k]);
      den += want[k] * want[k];
    }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
  };
  rep.v_rel_l2 = rel_l2(pv, fv);
  rep.c_rel_l2 = rel_l2(pc, fc);
  rep.g_rel_l2 = rel_l2(pg, fg);
  return rep;
}

}  // namespace abh
