#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

namespace abh {

struct ModelParams;

struct Point3 {
  double a = 0.0;
  double z = 0.0;
  double t = 0.0;
};

struct Point2 {
  double a = 0.0;
  double z = 0.0;
};

/// One training batch. Boundary lists have their pinned coordinate set
/// exactly on the face; the initial-time list lives at t = 0.
struct CollocationBatch {
  std::vector<Point3> interior;
  std::vector<Point3> boundary_a_min;
  std::vector<Point3> boundary_a_max;
  std::vector<Point3> boundary_z_min;
  std::vector<Point3> boundary_z_max;
  std::vector<Point2> initial_time;
};

struct SamplerConfig {
  std::size_t n_interior = 100;
  std::size_t grid_per_dim = 11;
  bool continuous = false;  // uniform on the box instead of the lattice
};

/// Tensor-product trapezoid rule over the (a, z) box. Weights are stored
/// row-major: weights[ia * z_nodes.size() + iz].
struct QuadratureMesh {
  std::vector<double> a_nodes;
  std::vector<double> z_nodes;
  std::vector<double> weights;

  std::size_t size() const noexcept { return weights.size(); }
  double integrate(std::span<const double> values) const;
};

/// `n` uniformly spaced nodes from lo to hi, endpoints exact.
std::vector<double> lattice(double lo, double hi, std::size_t n);

using Rng = std::mt19937_64;

CollocationBatch sample_batch(const ModelParams& model, Rng& rng, const SamplerConfig& config = {});

QuadratureMesh build_mesh(const ModelParams& model, std::size_t n_a = 101, std::size_t n_z = 101);

}  // namespace abh
