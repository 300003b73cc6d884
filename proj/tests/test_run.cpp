#include <string>

#include "abh/errors.hpp"
#include "abh/run.hpp"
#include "doctest.h"

using namespace abh;

namespace {

std::string config_error(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("empty config gives the paper calibration") {
  const RunConfig c = parse_config_text("{}");
  CHECK(c.model.gamma == 2.0);
  CHECK(c.model.rho == 0.05);
  CHECK(c.model.sigma_z == 0.02);
  CHECK(c.model.alpha == 0.3);
  CHECK(c.model.delta == 0.05);
  CHECK(c.model.a_min == 0.0);
  CHECK(c.model.a_max == 5.0);
  CHECK(c.model.z_min == 0.5);
  CHECK(c.model.z_max == 1.5);
  CHECK(c.model.horizon == 10.0);
  CHECK(c.train.total_steps == 25000);
  CHECK(c.train.pretrain_steps == 2500);
  CHECK(c.train.adam_steps == 7500);
  CHECK(c.train.equilibrium_update_every == 5);
  CHECK(c.train.weights.ic_v == 1.0);
  CHECK(c.train.weights.hjb_pde == 0.1);
  CHECK(c.overrides.empty());
}

TEST_CASE("problems are reported together") {
  const std::string one = config_error(R"({"gamma": -1})");
  CHECK(one.find("gamma") != std::string::npos);

  const std::string many = config_error(R"({"gamma": -1, "bogus": 3, "seed": "x", "price_damping": 0})");
  CHECK(many.find("gamma must be > 0") != std::string::npos);
  CHECK(many.find("unknown key 'bogus'") != std::string::npos);
  CHECK(many.find("seed: expected a non-negative integer") != std::string::npos);
  CHECK(many.find("price_damping") != std::string::npos);

  CHECK(!config_error("[1, 2]").empty());
  CHECK(!config_error("{not json").empty());
  CHECK(!config_error(R"({"layer_sizes": [3, -4, 1]})").empty());
  CHECK(!config_error(R"({"total_steps": 100})").empty());  // below adam_steps
}

TEST_CASE("overrides are logged, flags after the file") {
  RunConfig c = parse_config_text(R"({"gamma": 3, "seed": 0, "layer_sizes": [3, 16, 1]})");
  REQUIRE(c.overrides.size() == 2);  // seed 0 is the default
  CHECK(c.overrides[0] == "gamma: 2.0 -> 3.0 (config file)");
  CHECK(c.overrides[1].find("layer_sizes") == 0);
  set_flag(c, "--seed", "seed", 9);
  CHECK(c.train.seed == 9);
  CHECK(c.overrides.back() == "seed: 0 -> 9 (--seed)");
  CHECK_THROWS_AS(set_flag(c, "--x", "nope", 1), ConfigError);
}

TEST_CASE("config hash follows every setting") {
  const RunConfig a;
  RunConfig b;
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.train.weights.kf_flux = 0.5;
  CHECK(config_hash(a) != config_hash(b));
  b = RunConfig{};
  b.overrides.push_back("not part of the hash");
  CHECK(config_hash(a) == config_hash(b));
}

TEST_CASE("csv writers") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(2.0) == "2");
  CHECK(format_number(-1e-300) == "-1e-300");
  CHECK(slice_file_name(1.0) == "slice_t1.csv");
  CHECK(slice_file_name(9.0) == "slice_t9.csv");

  const ModelParams m;
  const EquilibriumPath path = EquilibriumPath::constant(m, lattice(0.0, 10.0, 11), 1.0);
  const std::string tp = timepaths_csv(path);
  CHECK(tp.rfind("t,K,Y,r,w\n", 0) == 0);
  CHECK(count_lines(tp) == 12);
  CHECK(tp.find("\n0,1,1,0.25,0.7\n") != std::string::npos);

  std::vector<LossBreakdown> h(3);
  for (std::size_t k = 0; k < h.size(); ++k) {
    h[k].step = k;
    h[k].total = 0.5 * static_cast<double>(k);
  }
  const std::string lc = losses_csv(h);
  CHECK(lc.rfind("step,hjb_pde,ic_v,bc_a_min,bc_a_max,bc_z_min,bc_z_max,phys,kf_pde,ic_g,mass,kf_flux,total\n", 0) == 0);
  CHECK(count_lines(lc) == 4);
  CHECK(lc.find("\n2,0,0,0,0,0,0,0,0,0,0,0,1\n") != std::string::npos);

  CHECK(path_relative_change({1.1, 2.0}, {1.0, 2.0}) == doctest::Approx(0.1));
}
