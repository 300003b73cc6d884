#include "abh/run.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <variant>

#include "abh/binary_io.hpp"
#include "abh/errors.hpp"
#include "json.hpp"

namespace abh {

namespace {

using Json = nlohmann::ordered_json;
// seed is a uint64_t; the table stores it through the same alternative.
static_assert(std::is_same_v<std::size_t, std::uint64_t>);
using Slot = std::variant<double*, std::size_t*, bool*, std::vector<std::size_t>*, std::vector<double>*>;

struct Field {
  const char* key;
  Slot slot;
};

// The one table of configurable keys. Order here is the order of config_json.
std::vector<Field> fields(RunConfig& c) {
  ModelParams& m = c.model;
  TrainConfig& t = c.train;
  LossWeights& w = t.weights;
  return {
      {"gamma", &m.gamma},
      {"rho", &m.rho},
      {"sigma_z", &m.sigma_z},
      {"mu_z", &m.mu_z},
      {"alpha", &m.alpha},
      {"delta", &m.delta},
      {"a_min", &m.a_min},
      {"a_max", &m.a_max},
      {"z_min", &m.z_min},
      {"z_max", &m.z_max},
      {"horizon", &m.horizon},
      {"ic_wealth_mean", &m.ic_wealth_mean},
      {"ic_wealth_sd", &m.ic_wealth_sd},
      {"consumption_floor", &m.consumption_floor},
      {"total_steps", &t.total_steps},
      {"pretrain_steps", &t.pretrain_steps},
      {"adam_steps", &t.adam_steps},
      {"adam_lr", &t.adam_lr},
      {"sgd_lr", &t.sgd_lr},
      {"clip_norm", &t.clip_norm},
      {"equilibrium_update_every", &t.equilibrium_update_every},
      {"price_damping", &t.price_damping},
      {"seed", &t.seed},
      {"path_nodes", &t.path_nodes},
      {"layer_sizes", &t.layer_sizes},
      {"train_mesh_a", &t.train_mesh_a},
      {"train_mesh_z", &t.train_mesh_z},
      {"checkpoint_every", &t.checkpoint_every},
      {"n_interior", &t.sampler.n_interior},
      {"grid_per_dim", &t.sampler.grid_per_dim},
      {"continuous_sampling", &t.sampler.continuous},
      {"weight_hjb_pde", &w.hjb_pde},
      {"weight_kf_pde", &w.kf_pde},
      {"weight_ic_v", &w.ic_v},
      {"weight_ic_g", &w.ic_g},
      {"weight_bc", &w.bc},
      {"weight_mass", &w.mass},
      {"weight_phys", &w.phys},
      {"weight_kf_flux", &w.kf_flux},
      {"fd_n_a", &c.fd_grid.n_a},
      {"fd_n_z", &c.fd_grid.n_z},
      {"fd_n_t", &c.fd_grid.n_t},
      {"fd_max_outer", &c.fd_options.max_outer},
      {"fd_tol", &c.fd_options.tol},
      {"fd_damping", &c.fd_options.damping},
      {"slice_n_a", &c.slice_n_a},
      {"slice_n_z", &c.slice_n_z},
      {"slice_times", &c.slice_times},
  };
}

Json to_json(const Slot& s) {
  return std::visit([](auto* p) { return Json(*p); }, s);
}

bool is_count(const Json& j) { return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0); }

// Returns an error message, or empty on success.
std::string assign(const Slot& slot, const Json& j) {
  struct Visitor {
    const Json& j;
    std::string operator()(double* p) const {
      if (!j.is_number()) return "expected a number";
      *p = j.get<double>();
      return {};
    }
    std::string operator()(std::size_t* p) const {
      if (!is_count(j)) return "expected a non-negative integer";
      *p = j.get<std::size_t>();
      return {};
    }
    std::string operator()(bool* p) const {
      if (!j.is_boolean()) return "expected true or false";
      *p = j.get<bool>();
      return {};
    }
    std::string operator()(std::vector<std::size_t>* p) const {
      if (!j.is_array()) return "expected an array of non-negative integers";
      std::vector<std::size_t> v;
      for (const auto& e : j) {
        if (!is_count(e)) return "expected an array of non-negative integers";
        v.push_back(e.get<std::size_t>());
      }
      *p = std::move(v);
      return {};
    }
    std::string operator()(std::vector<double>* p) const {
      if (!j.is_array()) return "expected an array of numbers";
      std::vector<double> v;
      for (const auto& e : j) {
        if (!e.is_number()) return "expected an array of numbers";
        v.push_back(e.get<double>());
      }
      *p = std::move(v);
      return {};
    }
  };
  return std::visit(Visitor{j}, slot);
}

void throw_all(const std::string& heading, const std::vector<std::string>& problems) {
  std::ostringstream msg;
  msg << heading;
  for (const auto& p : problems) msg << "\n  " << p;
  throw ConfigError(msg.str());
}

}  // namespace

std::vector<std::string> RunConfig::violations() const {
  std::vector<std::string> out = model.violations();
  for (auto& v : train.violations()) out.push_back(std::move(v));
  for (auto& v : fd_grid.violations(model)) out.push_back(std::move(v));
  if (fd_options.max_outer < 1) out.emplace_back("fd_max_outer must be >= 1");
  if (!(fd_options.tol > 0.0)) out.emplace_back("fd_tol must be > 0");
  if (!(fd_options.damping > 0.0 && fd_options.damping <= 1.0)) out.emplace_back("fd_damping must lie in (0, 1]");
  if (slice_n_a < 2 || slice_n_z < 2) out.emplace_back("slice_n_a and slice_n_z must be >= 2");
  for (double t : slice_times)
    if (!(t >= 0.0 && t <= model.horizon)) out.emplace_back("slice_times must lie in [0, horizon]");
  return out;
}

RunConfig parse_config_text(const std::string& json_text, RunConfig base) {
  Json doc;
  try {
    doc = Json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");

  RunConfig c = std::move(base);
  std::vector<std::string> problems;
  auto table = fields(c);
  for (const auto& [key, value] : doc.items()) {
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
    if (it == table.end()) {
      problems.push_back("unknown key '" + key + "'");
      continue;
    }
    const Json before = to_json(it->slot);
    if (const std::string err = assign(it->slot, value); !err.empty()) {
      problems.push_back(key + ": " + err);
      continue;
    }
    const Json after = to_json(it->slot);
    if (after != before) c.overrides.push_back(key + ": " + before.dump() + " -> " + after.dump() + " (config file)");
  }
  for (auto& v : c.violations()) problems.push_back(std::move(v));
  if (!problems.empty()) throw_all("invalid configuration:", problems);
  return c;
}

RunConfig parse_config_file(const std::string& path, RunConfig base) {
  return parse_config_text(read_text_file(path), std::move(base));
}

void set_flag(RunConfig& c, const std::string& flag, const std::string& key, std::uint64_t value) {
  auto table = fields(c);
  auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
  if (it == table.end()) throw ConfigError("unknown key '" + key + "'");
  const Json before = to_json(it->slot);
  if (const std::string err = assign(it->slot, Json(value)); !err.empty()) throw ConfigError(key + ": " + err);
  c.overrides.push_back(key + ": " + before.dump() + " -> " + std::to_string(value) + " (" + flag + ")");
}

std::string config_json(const RunConfig& config) {
  RunConfig copy = config;
  Json j = Json::object();
  for (const auto& f : fields(copy)) j[f.key] = to_json(f.slot);
  return j.dump(2);
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_json(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string format_number(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string losses_csv(const std::vector<LossBreakdown>& history) {
  std::string out;
  const auto cols = LossBreakdown::columns();
  for (std::size_t k = 0; k < cols.size(); ++k) {
    out += k ? "," : "";
    out += cols[k];
  }
  out += '\n';
  for (const auto& row : history) {
    const auto vals = row.row();
    out += std::to_string(row.step);
    for (std::size_t k = 1; k < vals.size(); ++k) {
      out += ',';
      out += format_number(vals[k]);
    }
    out += '\n';
  }
  return out;
}

std::string timepaths_csv(const EquilibriumPath& path) {
  std::string out = "t,K,Y,r,w\n";
  for (std::size_t j = 0; j < path.size(); ++j) {
    out += format_number(path.t_nodes[j]) + ',' + format_number(path.K[j]) + ',' + format_number(path.Y[j]) + ',' +
           format_number(path.r[j]) + ',' + format_number(path.w[j]) + '\n';
  }
  return out;
}

std::string slice_csv(const SolutionSource& source, const ModelParams& model, double t, std::size_t n_a,
                      std::size_t n_z) {
  std::vector<Point3> pts;
  pts.reserve(n_a * n_z);
  for (double a : lattice(model.a_min, model.a_max, n_a))
    for (double z : lattice(model.z_min, model.z_max, n_z)) pts.push_back({a, z, t});
  std::vector<double> v, c, g;
  source.evaluate(pts, v, c, g);
  std::string out = "a,z,v,c,g\n";
  for (std::size_t k = 0; k < pts.size(); ++k) {
    out += format_number(pts[k].a) + ',' + format_number(pts[k].z) + ',' + format_number(v[k]) + ',' +
           format_number(c[k]) + ',' + format_number(g[k]) + '\n';
  }
  return out;
}

std::string slice_file_name(double t) { return "slice_t" + format_number(t) + ".csv"; }

double path_relative_change(const std::vector<double>& K, const std::vector<double>& K_ref) {
  if (K.size() != K_ref.size()) throw ConfigError("path_relative_change: length mismatch");
  double out = 0.0;
  for (std::size_t j = 0; j < K.size(); ++j) out = std::max(out, std::abs(K[j] - K_ref[j]) / std::abs(K_ref[j]));
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  io::write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text_file(const std::string& path) {
  const auto bytes = io::read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace abh
