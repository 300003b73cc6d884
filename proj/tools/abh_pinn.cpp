// abh_pinn: train the PINN solver, run the finite-difference oracle, compare
// the two, or re-export results from a checkpoint.
//
//   abh_pinn solve   [--config F] [--out DIR] [--seed N] [--steps N] [--resume STATE]
//   abh_pinn fd      [--config F] [--out DIR]
//   abh_pinn compare --resume STATE [--config F] [--out DIR]
//   abh_pinn emit    --resume STATE [--config F] [--out DIR]
//
// Exit codes: 0 ok, 2 configuration or input error, 3 numeric error,
// 4 oracle did not converge.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "abh/compare.hpp"
#include "abh/errors.hpp"
#include "abh/fd_oracle.hpp"
#include "abh/run.hpp"
#include "abh/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace abh;
using Json = nlohmann::ordered_json;

namespace {

struct Args {
  std::string command;
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::string resume;
};

void log(const std::string& msg) { std::cerr << "[abh_pinn] " << msg << '\n'; }

RunConfig resolve_config(const Args& args) {
  RunConfig c = args.config.empty() ? RunConfig{} : parse_config_file(args.config);
  if (args.seed) set_flag(c, "--seed", "seed", *args.seed);
  if (args.steps) {
    set_flag(c, "--steps", "total_steps", *args.steps);
    // A shortened run keeps the schedule ordering by capping the phase boundaries.
    if (c.train.adam_steps > *args.steps) set_flag(c, "--steps", "adam_steps", *args.steps);
    if (c.train.pretrain_steps > *args.steps) set_flag(c, "--steps", "pretrain_steps", *args.steps);
  }
  if (const auto bad = c.violations(); !bad.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ConfigError(msg);
  }
  for (const auto& o : c.overrides) log("override " + o);
  return c;
}

void write_manifest(const fs::path& out, const std::string& command, const RunConfig& c, const Args& args) {
  Json j;
  j["command"] = command;
  j["seed"] = c.train.seed;
  j["config_hash"] = config_hash(c);
  j["formats"] = {{"state", kStateFormatVersion}, {"network", "ABHPINN1"}, {"csv", kCsvFormatVersion}};
  if (!args.resume.empty()) j["resume"] = args.resume;
  j["overrides"] = c.overrides;
  j["config"] = Json::parse(config_json(c));
  write_text_file((out / "manifest.json").string(), j.dump(2) + "\n");
}

void write_results(const fs::path& out, const RunConfig& c, const SolutionSource& source, const EquilibriumPath& path) {
  write_text_file((out / "timepaths.csv").string(), timepaths_csv(path));
  for (double t : c.slice_times)
    write_text_file((out / slice_file_name(t)).string(), slice_csv(source, c.model, t, c.slice_n_a, c.slice_n_z));
}

std::string checkpoint_name(std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "state_%06llu.bin", static_cast<unsigned long long>(step));
  return buf;
}

int run_solve(const Args& args, const RunConfig& c, const fs::path& out) {
  const TrainContext ctx(c.model, c.train);
  TrainState state = args.resume.empty() ? initial_state(c.model, c.train) : load_state(args.resume);
  const std::size_t total = c.train.total_steps;
  if (state.step > total) throw ConfigError("checkpoint is past total_steps");
  fs::create_directories(out / "checkpoints");
  write_manifest(out, "solve", c, args);

  const std::size_t window = 1000;
  std::optional<std::vector<double>> K_window_start;
  if (total >= window && state.step == total - window) K_window_start = state.path.K;
  const auto started = std::chrono::steady_clock::now();

  auto observer = [&](const TrainState& s) {
    if (s.step % c.train.checkpoint_every == 0) save_state((out / "checkpoints" / checkpoint_name(s.step)).string(), s);
    if (total >= window && s.step == total - window) K_window_start = s.path.K;
    if (s.step % 500 == 0 || s.step == total) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      const auto& h = s.history.back();
      char line[200];
      std::snprintf(line, sizeof line, "step %zu/%zu  total %.3e  hjb %.3e  mass %.3e  K(T) %.4f  %.0fs",
                    static_cast<std::size_t>(s.step), total, h.total, h.hjb_pde, h.mass, s.path.K.back(), secs);
      log(line);
    }
  };

  try {
    train_until(ctx, state, total, observer);
  } catch (const NumericError&) {
    // keep the record up to the failure; the last periodic checkpoint is the last good state
    write_text_file((out / "losses.csv").string(), losses_csv(state.history));
    throw;
  }
  save_state((out / "checkpoints" / checkpoint_name(state.step)).string(), state);
  save_state((out / "checkpoints" / "state_final.bin").string(), state);
  write_text_file((out / "losses.csv").string(), losses_csv(state.history));
  write_results(out, c, PinnSource(c.model, state.value, state.density, state.path), state.path);

  Json summary;
  summary["steps"] = state.step;
  summary["K_T"] = state.path.K.back();
  summary["r_T"] = state.path.r.back();
  summary["w_T"] = state.path.w.back();
  if (K_window_start) {
    summary["K_path_rel_change_last_1000"] = path_relative_change(state.path.K, *K_window_start);
  } else {
    summary["K_path_rel_change_last_1000"] = nullptr;
  }
  write_text_file((out / "summary.json").string(), summary.dump(2) + "\n");
  log("done: K(T) = " + format_number(state.path.K.back()) + ", r(T) = " + format_number(state.path.r.back()));
  return 0;
}

fd::FdSolution solve_oracle(const RunConfig& c) {
  const auto started = std::chrono::steady_clock::now();
  fd::FdSolution sol = fd::solve_transition(c.model, c.fd_grid, c.fd_options);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  log("oracle converged after " + std::to_string(sol.outer_residuals.size()) + " outer iterations in " +
      format_number(std::round(secs * 10) / 10) + "s");
  return sol;
}

EquilibriumPath oracle_path(const RunConfig& c, const fd::FdSolution& sol) {
  EquilibriumPath p;
  p.t_nodes = sol.geo.t;
  p.K = sol.K;
  p.refresh_prices(c.model);
  return p;
}

int run_fd(const Args& args, const RunConfig& c, const fs::path& out) {
  const fd::FdSolution sol = solve_oracle(c);
  fs::create_directories(out);
  write_manifest(out, "fd", c, args);
  write_results(out, c, FdSource(sol), oracle_path(c, sol));
  Json summary;
  summary["outer_iterations"] = sol.outer_residuals.size();
  summary["outer_residuals"] = sol.outer_residuals;
  summary["K_T"] = sol.K.back();
  summary["r_T"] = sol.r.back();
  write_text_file((out / "summary.json").string(), summary.dump(2) + "\n");
  log("done: K(T) = " + format_number(sol.K.back()) + ", r(T) = " + format_number(sol.r.back()));
  return 0;
}

int run_compare(const Args& args, const RunConfig& c, const fs::path& out) {
  if (args.resume.empty()) throw ConfigError("compare needs --resume STATE");
  const TrainState state = load_state(args.resume);
  const fd::FdSolution sol = solve_oracle(c);
  const CompareReport rep = compare(PinnSource(c.model, state.value, state.density, state.path), sol);
  fs::create_directories(out);
  write_manifest(out, "compare", c, args);
  write_text_file((out / "compare.json").string(), rep.to_json() + "\n");
  std::cout << rep.to_json() << '\n';
  return 0;
}

int run_emit(const Args& args, const RunConfig& c, const fs::path& out) {
  if (args.resume.empty()) throw ConfigError("emit needs --resume STATE");
  const TrainState state = load_state(args.resume);
  fs::create_directories(out);
  write_manifest(out, "emit", c, args);
  write_text_file((out / "losses.csv").string(), losses_csv(state.history));
  write_results(out, c, PinnSource(c.model, state.value, state.density, state.path), state.path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mesh-free PINN solver for the continuous-time heterogeneous-agent model"};
  app.require_subcommand(1, 1);
  Args args;
  for (const char* name : {"solve", "fd", "compare", "emit"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", args.config, "JSON file with flat keys")->check(CLI::ExistingFile);
    sub->add_option("--out", args.out, "output directory");
    sub->add_option("--resume", args.resume, "training state to resume from or read");
    if (std::string(name) == "solve") {
      sub->add_option("--seed", args.seed, "random seed");
      sub->add_option("--steps", args.steps, "total training steps");
    }
    sub->callback([&args, name] { args.command = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const RunConfig c = resolve_config(args);
    const fs::path out(args.out);
    if (args.command == "solve") return run_solve(args, c, out);
    if (args.command == "fd") return run_fd(args, c, out);
    if (args.command == "compare") return run_compare(args, c, out);
    return run_emit(args, c, out);
  } catch (const ConfigError& e) {
    log(std::string("configuration error: ") + e.what());
    return 2;
  } catch (const NotFoundError& e) {
    log(std::string("not found: ") + e.what());
    return 2;
  } catch (const FormatError& e) {
    log(std::string("bad file: ") + e.what());
    return 2;
  } catch (const NumericError& e) {
    log(std::string("numeric error: ") + e.what());
    return 3;
  } catch (const DomainError& e) {
    log(std::string("numeric error: ") + e.what());
    return 3;
  } catch (const EquilibriumError& e) {
    log(std::string("numeric error: ") + e.what());
    return 3;
  } catch (const OracleError& e) {
    log(std::string("oracle did not converge: ") + e.what());
    return 4;
  }
}
