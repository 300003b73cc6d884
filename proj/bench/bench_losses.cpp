// Wall time of one full loss + gradient evaluation: the per-point tape
// reference against the batched jet kernel, on the default network, batch and
// training mesh.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

#include "abh/losses.hpp"
#include "abh/trainer.hpp"

using namespace abh;

namespace {

template <class F>
double best_of(int reps, F&& f) {
  double best = 1e300;
  for (int k = 0; k < reps; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

double max_rel_diff(const std::vector<double>& x, const std::vector<double>& y) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    num = std::max(num, std::abs(x[k] - y[k]));
    den = std::max(den, std::abs(y[k]));
  }
  return num / den;
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::stoi(argv[1]) : 5;
  const ModelParams model;
  const TrainConfig cfg;
  const TrainContext ctx(model, cfg);
  TrainState s = initial_state(model, cfg);
  const CollocationBatch batch = sample_batch(model, s.rng, cfg.sampler);

  reference::Result ref;
  const double t_ref = best_of(std::max(1, reps / 2), [&] {
    ref = reference::evaluate(model, cfg.weights, s.value, s.density, ctx.scaler, s.path, batch, ctx.mass_grid);
  });

  SideResult hjb, kf;
  auto run_kernel = [&] {
    hjb = hjb_side(model, cfg.weights, s.value, ctx.scaler, s.path, batch, true);
    kf = kf_side(model, cfg.weights, s.density, s.value, ctx.scaler, s.path, batch, ctx.mass_grid, true);
  };
  const int max_threads = omp_get_max_threads();
  omp_set_num_threads(1);
  const double t_serial = best_of(reps, run_kernel);
  omp_set_num_threads(max_threads);
  const double t_parallel = best_of(reps, run_kernel);

  std::printf("network %zu parameters, %zu interior points, mass grid %zu points\n", s.value.parameter_count(),
              batch.interior.size(), ctx.mass_grid.points().size());
  std::printf("%-28s %10.2f ms\n", "tape reference", 1e3 * t_ref);
  std::printf("%-28s %10.2f ms  (%.1fx)\n", "jet kernel, 1 thread", 1e3 * t_serial, t_ref / t_serial);
  std::printf("%-28s %10.2f ms  (%.1fx)\n", ("jet kernel, " + std::to_string(max_threads) + " threads").c_str(),
              1e3 * t_parallel, t_ref / t_parallel);
  std::printf("gradient agreement: value %.2e, density %.2e (max abs diff / max abs)\n",
              max_rel_diff(hjb.grad, ref.value_grad), max_rel_diff(kf.grad, ref.density_grad));
}
