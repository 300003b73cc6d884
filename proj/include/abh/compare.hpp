#pragma once

// Error report between a candidate solution and the finite-difference oracle,
// measured on the oracle's grid with the terminal layer excluded.

#include <span>
#include <string>
#include <vector>

#include "abh/economy.hpp"
#include "abh/fd_oracle.hpp"
#include "abh/net.hpp"

namespace abh {

/// Anything that can be sampled like a solution of the model.
class SolutionSource {
 public:
  virtual ~SolutionSource() = default;
  /// Value, consumption and density at each point.
  virtual void evaluate(std::span<const Point3> points, std::vector<double>& v, std::vector<double>& c,
                        std::vector<double>& g) const = 0;
  virtual double capital(double t) const = 0;
  virtual double rate(double t) const = 0;
};

class FdSource final : public SolutionSource {
 public:
  explicit FdSource(const fd::FdSolution& sol) : sol_(sol) {}
  void evaluate(std::span<const Point3> points, std::vector<double>& v, std::vector<double>& c,
                std::vector<double>& g) const override;
  double capital(double t) const override;
  double rate(double t) const override;

 private:
  const fd::FdSolution& sol_;
};

class PinnSource final : public SolutionSource {
 public:
  PinnSource(const ModelParams& model, const MlpParams& value_net, const MlpParams& density_net,
             const EquilibriumPath& path);
  void evaluate(std::span<const Point3> points, std::vector<double>& v, std::vector<double>& c,
                std::vector<double>& g) const override;
  double capital(double t) const override { return path_.capital_at(t); }
  double rate(double t) const override { return path_.prices_at(t).r; }

 private:
  ModelParams model_;
  const MlpParams& value_;
  const MlpParams& density_;
  EquilibriumPath path_;
  InputScaler scaler_;
};

struct CompareReport {
  double t_max = 0.0;
  std::size_t nodes = 0;
  double v_rel_l2 = 0.0;
  double c_rel_l2 = 0.0;
  double g_rel_l2 = 0.0;
  double K_abs_max = 0.0;
  double K_rel_max = 0.0;
  double r_abs_max = 0.0;
  double c_tolerance = 0.20;
  double K_tolerance = 0.15;

  bool c_within() const { return c_rel_l2 < c_tolerance; }
  bool K_within() const { return K_rel_max < K_tolerance; }
  bool finite() const;
  std::string to_json() const;
};

/// Errors over FD nodes with t <= t_fraction * T.
CompareReport compare(const SolutionSource& candidate, const fd::FdSolution& fd, double t_fraction = 0.8);

}  // namespace abh
