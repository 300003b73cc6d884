#include "abh/trainer.hpp"

#include <cmath>
#include <sstream>

#include "abh/binary_io.hpp"
#include "abh/errors.hpp"
#include "abh/jet_kernel.hpp"

namespace abh {

namespace {

constexpr char kStateMagic[] = "ABHSTATE";

// Independent streams for the two initialisations and the sampler.
constexpr std::uint64_t kDensitySeedSalt = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kSamplerSeedSalt = 0xD1B54A32D192ED03ULL;

void check_grads(std::span<const double> grads, std::size_t step_index) {
  for (double g : grads)
    if (!std::isfinite(g)) throw NumericError("non-finite gradient, optimizer step rejected", step_index);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

OptimizerState OptimizerState::fresh(std::size_t n) {
  OptimizerState s;
  s.first_moment.assign(n, 0.0);
  s.second_moment.assign(n, 0.0);
  return s;
}

void adam_step(std::span<double> params, std::span<const double> grads, OptimizerState& s, double lr,
               std::size_t step_index) {
  if (grads.size() != params.size() || s.first_moment.size() != params.size() || s.second_moment.size() != params.size()) {
    throw ConfigError("adam_step: size mismatch");
  }
  check_grads(grads, step_index);
  s.kind = OptimizerKind::adam;
  ++s.step_count;
  const double t = static_cast<double>(s.step_count);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    s.first_moment[k] = kAdamBeta1 * s.first_moment[k] + (1.0 - kAdamBeta1) * grads[k];
    s.second_moment[k] = kAdamBeta2 * s.second_moment[k] + (1.0 - kAdamBeta2) * grads[k] * grads[k];
    params[k] -= lr * (s.first_moment[k] / c1) / (std::sqrt(s.second_moment[k] / c2) + kAdamEps);
  }
}

void sgd_step(std::span<double> params, std::span<const double> grads, double lr, std::size_t step_index) {
  if (grads.size() != params.size()) throw ConfigError("sgd_step: size mismatch");
  check_grads(grads, step_index);
  for (std::size_t k = 0; k < params.size(); ++k) params[k] -= lr * grads[k];
}

double clip_gradients(std::span<double> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip_gradients: max_norm must be > 0");
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
  }
  return norm;
}

std::vector<std::string> TrainConfig::violations() const {
  std::vector<std::string> out;
  auto need = [&](bool ok, const char* what) {
    if (!ok) out.emplace_back(what);
  };
  need(pretrain_steps <= adam_steps, "pretrain_steps must be <= adam_steps");
  need(adam_steps <= total_steps, "adam_steps must be <= total_steps");
  need(adam_lr > 0.0 && std::isfinite(adam_lr), "adam_lr must be > 0");
  need(sgd_lr > 0.0 && std::isfinite(sgd_lr), "sgd_lr must be > 0");
  need(clip_norm > 0.0 && std::isfinite(clip_norm), "clip_norm must be > 0");
  need(equilibrium_update_every >= 1, "equilibrium_update_every must be >= 1");
  need(price_damping > 0.0 && price_damping <= 1.0, "price_damping must lie in (0, 1]");
  need(path_nodes >= 2, "path_nodes must be >= 2");
  need(sampler.grid_per_dim >= 2, "grid_per_dim must be >= 2");
  need(sampler.n_interior >= 1, "n_interior must be >= 1");
  need(train_mesh_a >= 2 && train_mesh_z >= 2, "train mesh needs at least 2 nodes per dimension");
  need(checkpoint_every >= 1, "checkpoint_every must be >= 1");
  need(layer_sizes.size() >= 3 && layer_sizes.front() == 3 && layer_sizes.back() == 1,
       "layer_sizes must start with 3, end with 1 and have a hidden layer");
  for (const auto& v : weights.violations()) out.push_back(v);
  return out;
}

TrainContext::TrainContext(const ModelParams& m, const TrainConfig& c)
    : model(m),
      config(c),
      scaler(InputScaler::for_model(m)),
      mass_grid(MassGrid::make(m, c.train_mesh_a, c.train_mesh_z, c.path_nodes)) {
  std::vector<std::string> bad = model.violations();
  for (const auto& v : config.violations()) bad.push_back(v);
  if (!bad.empty()) {
    std::ostringstream msg;
    msg << "invalid configuration:";
    for (const auto& s : bad) msg << "\n  " << s;
    throw ConfigError(msg.str());
  }
}

TrainState initial_state(const ModelParams& model, const TrainConfig& config) {
  TrainState s;
  s.value = init_mlp(config.seed, config.layer_sizes, OutputHead::identity);
  s.density = init_mlp(config.seed ^ kDensitySeedSalt, config.layer_sizes, OutputHead::softplus);
  s.value_opt = OptimizerState::fresh(s.value.parameter_count());
  s.density_opt = OptimizerState::fresh(s.density.parameter_count());
  s.rng.seed(config.seed ^ kSamplerSeedSalt);
  const QuadratureMesh mesh = build_mesh(model, config.train_mesh_a, config.train_mesh_z);
  const double k0 = aggregate_capital(mesh, [&](double a, double z) { return initial_density(model, a, z); });
  s.path = EquilibriumPath::constant(model, lattice(0.0, model.horizon, config.path_nodes), k0);
  return s;
}

EquilibriumPath compute_equilibrium_path(const ModelParams& model, const MlpParams& density_net,
                                         const QuadratureMesh& mesh, const EquilibriumPath& previous,
                                         double damping) {
  if (!(damping > 0.0 && damping <= 1.0)) throw ConfigError("price damping must lie in (0, 1]");
  const InputScaler scaler = InputScaler::for_model(model);
  std::vector<Point3> pts;
  pts.reserve(previous.size() * mesh.size());
  for (double t : previous.t_nodes)
    for (double a : mesh.a_nodes)
      for (double z : mesh.z_nodes) pts.push_back({a, z, t});
  const std::vector<double> phi = kernel::raw_outputs(density_net, scaler, pts);

  EquilibriumPath next = previous;
  std::vector<double> g(mesh.size());
  for (std::size_t j = 0; j < previous.size(); ++j) {
    for (std::size_t k = 0; k < mesh.size(); ++k) g[k] = softplus(phi[j * mesh.size() + k]);
    const double measured = aggregate_capital(mesh, g);
    next.K[j] = damping == 1.0 ? measured : (1.0 - damping) * previous.K[j] + damping * measured;
  }
  next.refresh_prices(model);
  return next;
}

void train_step(const TrainContext& ctx, TrainState& s) {
  const TrainConfig& cfg = ctx.config;
  const std::size_t step = static_cast<std::size_t>(s.step);
  const bool adam = step < cfg.adam_steps;
  const bool joint = step >= cfg.pretrain_steps;
  try {
    const CollocationBatch batch = sample_batch(ctx.model, s.rng, cfg.sampler);

    SideResult hjb = hjb_side(ctx.model, cfg.weights, s.value, ctx.scaler, s.path, batch, true);
    clip_gradients(hjb.grad, cfg.clip_norm);
    if (adam) {
      adam_step(s.value.values(), hjb.grad, s.value_opt, cfg.adam_lr, step);
    } else {
      s.value_opt.kind = OptimizerKind::sgd;
      sgd_step(s.value.values(), hjb.grad, cfg.sgd_lr, step);
    }

    // The density side reads the freshly updated value field.
    SideResult kf = kf_side(ctx.model, cfg.weights, s.density, s.value, ctx.scaler, s.path, batch, ctx.mass_grid, joint);
    if (joint) {
      clip_gradients(kf.grad, cfg.clip_norm);
      if (adam) {
        adam_step(s.density.values(), kf.grad, s.density_opt, cfg.adam_lr, step);
      } else {
        s.density_opt.kind = OptimizerKind::sgd;
        sgd_step(s.density.values(), kf.grad, cfg.sgd_lr, step);
      }
    }

    LossBreakdown row = combine(hjb.terms, kf.terms, cfg.weights);
    row.step = step;
    if (!std::isfinite(row.total)) throw NumericError("non-finite total loss", step);
    s.history.push_back(row);

    if (joint && (step + 1 - cfg.pretrain_steps) % cfg.equilibrium_update_every == 0) {
      s.path = compute_equilibrium_path(ctx.model, s.density, ctx.mass_grid.mesh, s.path, cfg.price_damping);
    }
  } catch (const NumericError& e) {
    throw NumericError("training step " + std::to_string(step) + ": " + e.what(), step);
  } catch (const DomainError& e) {
    throw NumericError("training step " + std::to_string(step) + ": " + e.what(), step);
  } catch (const EquilibriumError& e) {
    throw EquilibriumError("training step " + std::to_string(step) + ": " + e.what());
  }
  ++s.step;
}

void train_until(const TrainContext& ctx, TrainState& state, std::size_t until, const StepObserver& observer) {
  while (state.step < until) {
    train_step(ctx, state);
    if (observer) observer(state);
  }
}

// ---- state files -----------------------------------------------------------

namespace {

void write_optimizer(io::ByteWriter& w, const OptimizerState& s) {
  w.u8(static_cast<std::uint8_t>(s.kind));
  w.u64(s.step_count);
  w.u64(s.first_moment.size());
  w.f64s(s.first_moment);
  w.f64s(s.second_moment);
}

OptimizerState read_optimizer(io::ByteReader& r) {
  OptimizerState s;
  const std::uint8_t kind = r.u8();
  if (kind > 1) throw FormatError("state file: unknown optimizer kind");
  s.kind = static_cast<OptimizerKind>(kind);
  s.step_count = r.u64();
  const std::uint64_t n = r.u64();
  if (n > r.remaining() / 16) throw FormatError("state file: truncated optimizer moments");
  s.first_moment.resize(n);
  s.second_moment.resize(n);
  r.f64s(s.first_moment);
  r.f64s(s.second_moment);
  return s;
}

std::vector<double> read_doubles(io::ByteReader& r) {
  const std::uint64_t n = r.u64();
  if (n > r.remaining() / 8) throw FormatError("state file: truncated array");
  std::vector<double> v(n);
  r.f64s(v);
  return v;
}

void write_doubles(io::ByteWriter& w, std::span<const double> v) {
  w.u64(v.size());
  w.f64s(v);
}

}  // namespace

std::vector<std::uint8_t> serialize_state(const TrainState& s) {
  io::ByteWriter w;
  w.bytes(std::string_view(kStateMagic, 8));
  w.u32(kStateFormatVersion);
  w.u64(s.step);
  std::ostringstream rng;
  rng << s.rng;
  w.string(rng.str());
  const auto v = serialize(s.value);
  const auto g = serialize(s.density);
  w.string(std::string_view(reinterpret_cast<const char*>(v.data()), v.size()));
  w.string(std::string_view(reinterpret_cast<const char*>(g.data()), g.size()));
  write_optimizer(w, s.value_opt);
  write_optimizer(w, s.density_opt);
  write_doubles(w, s.path.t_nodes);
  write_doubles(w, s.path.K);
  write_doubles(w, s.path.Y);
  write_doubles(w, s.path.r);
  write_doubles(w, s.path.w);
  w.u64(s.history.size());
  for (const auto& row : s.history) w.f64s(row.row());
  return w.take();
}

TrainState deserialize_state(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.remaining() < 8 || r.bytes(8) != std::string_view(kStateMagic, 8)) throw FormatError("state file: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kStateFormatVersion) {
    throw FormatError("state file: version " + std::to_string(version) + ", expected " + std::to_string(kStateFormatVersion));
  }
  TrainState s;
  s.step = r.u64();
  std::istringstream rng(r.string());
  rng >> s.rng;
  if (!rng) throw FormatError("state file: unreadable rng state");
  auto net = [&] {
    const std::string blob = r.string();
    return deserialize(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(blob.data()), blob.size()));
  };
  s.value = net();
  s.density = net();
  s.value_opt = read_optimizer(r);
  s.density_opt = read_optimizer(r);
  if (s.value_opt.first_moment.size() != s.value.parameter_count() ||
      s.density_opt.first_moment.size() != s.density.parameter_count()) {
    throw FormatError("state file: optimizer size does not match network");
  }
  s.path.t_nodes = read_doubles(r);
  s.path.K = read_doubles(r);
  s.path.Y = read_doubles(r);
  s.path.r = read_doubles(r);
  s.path.w = read_doubles(r);
  const std::size_t n = s.path.t_nodes.size();
  if (s.path.K.size() != n || s.path.Y.size() != n || s.path.r.size() != n || s.path.w.size() != n) {
    throw FormatError("state file: inconsistent path lengths");
  }
  const std::uint64_t rows = r.u64();
  const std::size_t cols = LossBreakdown::columns().size();
  if (rows > r.remaining() / (8 * cols)) throw FormatError("state file: truncated history");
  s.history.resize(rows);
  std::vector<double> buf(cols);
  for (auto& row : s.history) {
    r.f64s(buf);
    row.step = static_cast<std::size_t>(buf[0]);
    row.hjb_pde = buf[1];
    row.ic_v = buf[2];
    row.bc_a_min = buf[3];
    row.bc_a_max = buf[4];
    row.bc_z_min = buf[5];
    row.bc_z_max = buf[6];
    row.phys = buf[7];
    row.kf_pde = buf[8];
    row.ic_g = buf[9];
    row.mass = buf[10];
    row.kf_flux = buf[11];
    row.total = buf[12];
  }
  if (r.remaining() != 0) throw FormatError("state file: trailing bytes");
  return s;
}

void save_state(const std::string& path, const TrainState& state) { io::write_file_atomic(path, serialize_state(state)); }

TrainState load_state(const std::string& path) { return deserialize_state(io::read_file(path)); }

}  // namespace abh
