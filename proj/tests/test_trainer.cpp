#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "abh/binary_io.hpp"
#include "abh/errors.hpp"
#include "abh/trainer.hpp"
#include "doctest.h"

using namespace abh;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.layer_sizes = {3, 8, 1};
  c.total_steps = 40;
  c.pretrain_steps = 10;
  c.adam_steps = 25;
  c.sampler.n_interior = 16;
  c.sampler.grid_per_dim = 5;
  c.train_mesh_a = 9;
  c.train_mesh_z = 5;
  c.path_nodes = 6;
  c.equilibrium_update_every = 2;
  return c;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("adam: first step moves each parameter by about lr against the gradient") {
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{0.3, -4.0, 0.0};
  OptimizerState s = OptimizerState::fresh(3);
  adam_step(p, g, s, 1e-3);
  CHECK(p[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(-2.0 + 1e-3).epsilon(1e-6));
  CHECK(p[2] == 0.5);
  CHECK(s.step_count == 1);
  CHECK(s.first_moment[1] == doctest::Approx(-0.4));
  CHECK(s.second_moment[1] == doctest::Approx(0.016));

  // second step by hand
  const std::vector<double> g2{0.1, 0.0, 0.0};
  const double m = 0.9 * 0.03 + 0.1 * 0.1, v = 0.999 * 0.00009 + 0.001 * 0.01;
  const double expect = p[0] - 1e-3 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  adam_step(p, g2, s, 1e-3);
  CHECK(p[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("sgd and rejected gradients") {
  std::vector<double> p{1.0, 2.0};
  sgd_step(p, std::vector<double>{10.0, -20.0}, 1e-4);
  CHECK(p[0] == doctest::Approx(0.999));
  CHECK(p[1] == doctest::Approx(2.002));

  const std::vector<double> before = p;
  OptimizerState s = OptimizerState::fresh(2);
  const OptimizerState s_before = s;
  try {
    adam_step(p, std::vector<double>{NAN, 0.0}, s, 1e-3, 17);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.where() == 17);
  }
  CHECK(p == before);
  CHECK(s == s_before);
  CHECK_THROWS_AS(sgd_step(p, std::vector<double>{INFINITY, 0.0}, 1e-3), NumericError);
  CHECK(p == before);
}

TEST_CASE("gradient clipping") {
  std::vector<double> g{3.0, 4.0};
  CHECK(clip_gradients(g, 1.0) == doctest::Approx(5.0));
  CHECK(g[0] == doctest::Approx(0.6));
  CHECK(g[1] == doctest::Approx(0.8));

  std::vector<double> small{0.1, -0.2};
  clip_gradients(small, 1.0);
  CHECK(small[0] == 0.1);
  CHECK(small[1] == -0.2);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(1 + trial % 37);
    for (double& v : x) v = n(rng);
    const std::vector<double> orig = x;
    const double norm = clip_gradients(x, 1.0);
    double after = 0.0, dot = 0.0, oo = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      after += x[k] * x[k];
      dot += x[k] * orig[k];
      oo += orig[k] * orig[k];
    }
    CHECK(std::sqrt(after) <= 1.0 + 1e-12);
    CHECK(norm == doctest::Approx(std::sqrt(oo)));
    CHECK(dot == doctest::Approx(std::sqrt(after * oo)));  // direction preserved
  }
  CHECK_THROWS_AS(clip_gradients(g, 0.0), ConfigError);
}

TEST_CASE("equilibrium path from a density network") {
  const ModelParams m;
  const QuadratureMesh mesh = build_mesh(m, 41, 11);
  // density = softplus(bias): constant, so K is the midpoint of the wealth range
  MlpParams g(std::vector<std::size_t>{3, 4, 1}, OutputHead::softplus);
  g.bias(1)(0) = 0.3;
  const EquilibriumPath prev = EquilibriumPath::constant(m, lattice(0.0, 10.0, 5), 1.0);

  const EquilibriumPath full = compute_equilibrium_path(m, g, mesh, prev, 1.0);
  for (std::size_t j = 0; j < full.size(); ++j) {
    CHECK(full.K[j] == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(full.r[j] == doctest::Approx(prices_from_capital(m, 2.5).r).epsilon(1e-12));
  }
  const EquilibriumPath damped = compute_equilibrium_path(m, g, mesh, prev, 0.1);
  for (std::size_t j = 0; j < damped.size(); ++j) CHECK(damped.K[j] == doctest::Approx(1.15).epsilon(1e-12));
  CHECK_THROWS_AS(compute_equilibrium_path(m, g, mesh, prev, 0.0), ConfigError);
}

TEST_CASE("initial state: K0 matches the initial density, nets differ") {
  const ModelParams m;
  const TrainConfig c = tiny_config();
  const TrainState s = initial_state(m, c);
  CHECK(s.step == 0);
  CHECK(s.path.size() == c.path_nodes);
  // K0 is measured on the training mesh; the default 21 x 11 mesh resolves it
  const QuadratureMesh mesh = build_mesh(m, c.train_mesh_a, c.train_mesh_z);
  const double k0 = aggregate_capital(mesh, [&](double a, double z) { return initial_density(m, a, z); });
  for (double k : s.path.K) CHECK(k == k0);
  CHECK(initial_state(m, TrainConfig{}).path.K[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(s.value.values().size() == s.density.values().size());
  CHECK(!std::equal(s.value.values().begin(), s.value.values().end(), s.density.values().begin()));
  const TrainState again = initial_state(m, c);
  CHECK(serialize_state(s) == serialize_state(again));
}

TEST_CASE("phases: density frozen in pretraining, optimizer switch, price updates") {
  const ModelParams m;
  const TrainConfig c = tiny_config();
  const TrainContext ctx(m, c);
  TrainState s = initial_state(m, c);
  const auto g0 = std::vector<double>(s.density.values().begin(), s.density.values().end());
  const auto K0 = s.path.K;

  train_until(ctx, s, c.pretrain_steps);
  CHECK(std::equal(g0.begin(), g0.end(), s.density.values().begin()));
  CHECK(s.path.K == K0);
  CHECK(s.value_opt.step_count == c.pretrain_steps);
  CHECK(s.density_opt.step_count == 0);
  CHECK(s.history.size() == c.pretrain_steps);
  CHECK(s.history.back().kf_pde >= 0.0);

  train_step(ctx, s);
  CHECK(!std::equal(g0.begin(), g0.end(), s.density.values().begin()));
  CHECK(s.path.K == K0);  // first update after `equilibrium_update_every` joint steps
  train_step(ctx, s);
  CHECK(s.path.K != K0);

  train_until(ctx, s, c.adam_steps);
  CHECK(s.value_opt.kind == OptimizerKind::adam);
  train_step(ctx, s);
  CHECK(s.value_opt.kind == OptimizerKind::sgd);
  CHECK(s.density_opt.kind == OptimizerKind::sgd);
  CHECK(s.value_opt.step_count == c.adam_steps);
  for (std::size_t k = 0; k < s.history.size(); ++k) {
    CHECK(s.history[k].step == k);
    CHECK(std::isfinite(s.history[k].total));
  }
}

TEST_CASE("state round trip and bitwise resume") {
  const ModelParams m;
  const TrainConfig c = tiny_config();
  const TrainContext ctx(m, c);
  TrainState s = initial_state(m, c);
  train_until(ctx, s, 20);

  const std::string path = temp_path("abh_test_state.bin");
  save_state(path, s);
  TrainState resumed = load_state(path);
  CHECK(serialize_state(resumed) == serialize_state(s));

  train_until(ctx, s, 30);
  train_until(ctx, resumed, 30);
  CHECK(serialize_state(resumed) == serialize_state(s));
  std::filesystem::remove(path);
}

TEST_CASE("state file errors") {
  CHECK_THROWS_AS(load_state(temp_path("abh_no_such_state.bin")), NotFoundError);

  const ModelParams m;
  const TrainState s = initial_state(m, tiny_config());
  auto bytes = serialize_state(s);
  CHECK_THROWS_AS(deserialize_state(std::span(bytes).first(bytes.size() - 3)), FormatError);
  auto bad_version = bytes;
  bad_version[8] = 99;
  CHECK_THROWS_AS(deserialize_state(bad_version), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_state(bad_magic), FormatError);
  bytes.push_back(0);
  CHECK_THROWS_AS(deserialize_state(bytes), FormatError);
}

TEST_CASE("config validation reports every problem") {
  TrainConfig c;
  c.pretrain_steps = 9000;
  c.adam_lr = -1.0;
  c.price_damping = 2.0;
  CHECK(c.violations().size() == 3);
  CHECK_THROWS_AS(TrainContext(ModelParams{}, c), ConfigError);
}
