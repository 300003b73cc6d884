#include "abh/sampler.hpp"

#include "abh/economy.hpp"
#include "abh/errors.hpp"

namespace abh {

std::vector<double> lattice(double lo, double hi, std::size_t n) {
  if (n < 2) throw ConfigError("lattice needs at least 2 nodes");
  std::vector<double> nodes(n);
  const double span = hi - lo;
  for (std::size_t k = 0; k < n; ++k) {
    nodes[k] = lo + span * static_cast<double>(k) / static_cast<double>(n - 1);
  }
  nodes.front() = lo;
  nodes.back() = hi;
  return nodes;
}

double QuadratureMesh::integrate(std::span<const double> values) const {
  if (values.size() != weights.size()) throw ConfigError("mesh integrate: value count does not match mesh");
  double sum = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) sum += weights[k] * values[k];
  return sum;
}

QuadratureMesh build_mesh(const ModelParams& model, std::size_t n_a, std::size_t n_z) {
  QuadratureMesh mesh;
  mesh.a_nodes = lattice(model.a_min, model.a_max, n_a);
  mesh.z_nodes = lattice(model.z_min, model.z_max, n_z);
  const double ha = (model.a_max - model.a_min) / static_cast<double>(n_a - 1);
  const double hz = (model.z_max - model.z_min) / static_cast<double>(n_z - 1);
  mesh.weights.resize(n_a * n_z);
  for (std::size_t i = 0; i < n_a; ++i) {
    const double wa = (i == 0 || i + 1 == n_a) ? 0.5 * ha : ha;
    for (std::size_t j = 0; j < n_z; ++j) {
      const double wz = (j == 0 || j + 1 == n_z) ? 0.5 * hz : hz;
      mesh.weights[i * n_z + j] = wa * wz;
    }
  }
  return mesh;
}

namespace {

class CoordinateDraw {
 public:
  CoordinateDraw(double lo, double hi, const SamplerConfig& cfg)
      : nodes_(lattice(lo, hi, cfg.grid_per_dim)), lo_(lo), hi_(hi), continuous_(cfg.continuous),
        index_(0, cfg.grid_per_dim - 1) {}

  double operator()(Rng& rng) {
    if (continuous_) return std::uniform_real_distribution<double>(lo_, hi_)(rng);
    return nodes_[index_(rng)];
  }

 private:
  std::vector<double> nodes_;
  double lo_;
  double hi_;
  bool continuous_;
  std::uniform_int_distribution<std::size_t> index_;
};

}  // namespace

CollocationBatch sample_batch(const ModelParams& model, Rng& rng, const SamplerConfig& config) {
  if (config.grid_per_dim < 2) throw ConfigError("sampler: grid_per_dim must be at least 2");
  CoordinateDraw draw_a(model.a_min, model.a_max, config);
  CoordinateDraw draw_z(model.z_min, model.z_max, config);
  CoordinateDraw draw_t(0.0, model.horizon, config);
  const std::size_t n = config.n_interior;

  CollocationBatch batch;
  batch.interior.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double a = draw_a(rng);
    const double z = draw_z(rng);
    const double t = draw_t(rng);
    batch.interior.push_back({a, z, t});
  }
  auto face = [&](std::vector<Point3>& out, int pinned, double value) {
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      Point3 p;
      p.a = pinned == 0 ? value : draw_a(rng);
      p.z = pinned == 1 ? value : draw_z(rng);
      p.t = draw_t(rng);
      out.push_back(p);
    }
  };
  face(batch.boundary_a_min, 0, model.a_min);
  face(batch.boundary_a_max, 0, model.a_max);
  face(batch.boundary_z_min, 1, model.z_min);
  face(batch.boundary_z_max, 1, model.z_max);
  batch.initial_time.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double a = draw_a(rng);
    const double z = draw_z(rng);
    batch.initial_time.push_back({a, z});
  }
  return batch;
}

}  // namespace abh
