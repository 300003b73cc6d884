#include <cmath>
#include <cstring>
#include <random>

#include "abh/economy.hpp"
#include "abh/errors.hpp"
#include "abh/net.hpp"
#include "doctest.h"

using namespace abh;

namespace {

double tape_value(const MlpParams& p, const InputScaler& s, double a, double z, double t) {
  ad::Tape tape;
  return eval_value(tape, p, s, tape.input("a", a), tape.input("z", z), tape.input("t", t)).value();
}

}  // namespace

TEST_CASE("init shapes for the default architecture") {
  const MlpParams p = init_mlp(1, kDefaultLayerSizes, OutputHead::identity);
  REQUIRE(p.layer_count() == 4);
  CHECK(p.weight(0).rows() == 128);
  CHECK(p.weight(0).cols() == 3);
  CHECK(p.weight(1).rows() == 128);
  CHECK(p.weight(1).cols() == 128);
  CHECK(p.weight(2).rows() == 128);
  CHECK(p.weight(2).cols() == 128);
  CHECK(p.weight(3).rows() == 1);
  CHECK(p.weight(3).cols() == 128);
  CHECK(p.bias(0).size() == 128);
  CHECK(p.bias(1).size() == 128);
  CHECK(p.bias(2).size() == 128);
  CHECK(p.bias(3).size() == 1);
  CHECK(p.parameter_count() == 128 * 3 + 128 + 2 * (128 * 128 + 128) + 128 + 1);
}

TEST_CASE("init is deterministic, Glorot-bounded, with zero biases") {
  const MlpParams a = init_mlp(42, kDefaultLayerSizes, OutputHead::softplus);
  const MlpParams b = init_mlp(42, kDefaultLayerSizes, OutputHead::softplus);
  const MlpParams c = init_mlp(43, kDefaultLayerSizes, OutputHead::softplus);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  for (std::size_t l = 0; l < a.layer_count(); ++l) {
    CHECK(a.bias(l).isZero(0.0));
    const double limit = std::sqrt(6.0 / double(a.layer_sizes()[l] + a.layer_sizes()[l + 1]));
    CHECK(a.weight(l).cwiseAbs().maxCoeff() <= limit);
  }
}

TEST_CASE("init rejects invalid sizes") {
  CHECK_THROWS_AS(init_mlp(1, {2, 8, 1}, OutputHead::identity), ConfigError);
  CHECK_THROWS_AS(init_mlp(1, {3, 0, 1}, OutputHead::identity), ConfigError);
  CHECK_THROWS_AS(init_mlp(1, {3}, OutputHead::identity), ConfigError);
}

TEST_CASE("input scaler maps endpoints exactly") {
  const ModelParams m;
  const InputScaler s = InputScaler::for_model(m);
  CHECK(s.scale(0, m.a_min) == -1.0);
  CHECK(s.scale(0, m.a_max) == 1.0);
  CHECK(s.scale(1, m.z_min) == -1.0);
  CHECK(s.scale(1, m.z_max) == 1.0);
  CHECK(s.scale(2, 0.0) == -1.0);
  CHECK(s.scale(2, m.horizon) == 1.0);
  CHECK(s.unscale(0, -1.0) == m.a_min);
  CHECK(s.unscale(2, 1.0) == m.horizon);
  CHECK(s.scale(0, 1.0) < s.scale(0, 1.0 + 1e-9));
}

TEST_CASE("zero network evaluates to zero, density head to ln 2") {
  const ModelParams m;
  const InputScaler s = InputScaler::for_model(m);
  MlpParams v(kDefaultLayerSizes, OutputHead::identity);
  MlpParams g(kDefaultLayerSizes, OutputHead::softplus);
  for (double a : {0.0, 1.3, 5.0}) {
    CHECK(mlp_eval(v, s, a, 1.0, 2.0) == 0.0);
    CHECK(tape_value(v, s, a, 1.0, 2.0) == 0.0);
    CHECK(mlp_eval(g, s, a, 0.7, 9.0) == doctest::Approx(0.693147).epsilon(1e-6));
  }
}

TEST_CASE("value output is finite on the 11^3 lattice") {
  const ModelParams m;
  const InputScaler s = InputScaler::for_model(m);
  const MlpParams v = init_mlp(3, kDefaultLayerSizes, OutputHead::identity);
  const auto as = lattice(m.a_min, m.a_max, 11);
  const auto zs = lattice(m.z_min, m.z_max, 11);
  const auto ts = lattice(0.0, m.horizon, 11);
  std::size_t finite = 0;
  for (double a : as)
    for (double z : zs)
      for (double t : ts) finite += std::isfinite(mlp_eval(v, s, a, z, t)) ? 1 : 0;
  CHECK(finite == 1331);
}

TEST_CASE("tape and plain evaluation agree") {
  const ModelParams m;
  const InputScaler s = InputScaler::for_model(m);
  const MlpParams v = init_mlp(9, {3, 16, 16, 1}, OutputHead::identity);
  CHECK(tape_value(v, s, 2.2, 0.8, 3.3) == doctest::Approx(mlp_eval(v, s, 2.2, 0.8, 3.3)).epsilon(1e-13));
}

TEST_CASE("autodiff d/da of the value net matches central differences") {
  const ModelParams m;
  const InputScaler s = InputScaler::for_model(m);
  const MlpParams v = init_mlp(11, {3, 32, 32, 32, 1}, OutputHead::identity);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ua(0.1, 4.9);
  std::uniform_real_distribution<double> uz(0.55, 1.45);
  std::uniform_real_distribution<double> ut(0.1, 9.9);
  const double h = 1e-5;
  for (int k = 0; k < 20; ++k) {
    const double a = ua(rng), z = uz(rng), t = ut(rng);
    ad::Tape tape;
    eval_value(tape, v, s, tape.input("a", a), tape.input("z", z), tape.input("t", t));
    const double ad_a = tape.gradient({"a"}).at("a");
    const double fd = (mlp_eval(v, s, a + h, z, t) - mlp_eval(v, s, a - h, z, t)) / (2 * h);
    CHECK(std::abs(ad_a - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
    const double h2 = 1e-3;
    const double fd2 = (mlp_eval(v, s, a + h2, z, t) - 2 * mlp_eval(v, s, a, z, t) + mlp_eval(v, s, a - h2, z, t)) / (h2 * h2);
    CHECK(std::abs(tape.second_partial("a", "a") - fd2) <= 1e-4 * std::max(1.0, std::abs(fd2)));
  }
}

TEST_CASE("density is strictly positive") {
  const ModelParams m;
  const InputScaler s = InputScaler::for_model(m);
  const MlpParams g = init_mlp(5, kDefaultLayerSizes, OutputHead::softplus);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> ua(m.a_min, m.a_max), uz(m.z_min, m.z_max), ut(0.0, m.horizon);
  for (int k = 0; k < 1000; ++k) CHECK(mlp_eval(g, s, ua(rng), uz(rng), ut(rng)) > 0.0);

  MlpParams very_negative(kDefaultLayerSizes, OutputHead::softplus);
  very_negative.bias(3)(0) = -40.0;
  const double tiny = mlp_eval(very_negative, s, 1.0, 1.0, 1.0);
  CHECK(tiny > 0.0);
  CHECK(tiny == doctest::Approx(std::exp(-40.0)).epsilon(1e-12));
  CHECK(tiny == doctest::Approx(4.25e-18).epsilon(1e-3));
  ad::Tape tape;
  CHECK(eval_density(tape, very_negative, s, tape.input("a", 1.0), tape.input("z", 1.0), tape.input("t", 1.0)).value() > 0.0);
}

TEST_CASE("evaluation outside the box is a domain error") {
  const ModelParams m;
  const InputScaler s = InputScaler::for_model(m);
  const MlpParams v(kDefaultLayerSizes, OutputHead::identity);
  ad::Tape tape;
  CHECK_THROWS_AS(eval_value(tape, v, s, tape.input("a", 5.5), tape.input("z", 1.0), tape.input("t", 1.0)), DomainError);
}

TEST_CASE("checkpoint serialization") {
  const MlpParams p = init_mlp(77, {3, 5, 4, 1}, OutputHead::softplus);
  auto bytes = serialize(p);

  SUBCASE("byte layout") {
    CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "ABHPINN1");
    CHECK(bytes[8] == 3);  // layer count, little-endian u32
    CHECK(bytes[9] == 0);
    CHECK(bytes[12] == 3);
    CHECK(bytes[16] == 5);
    CHECK(bytes[20] == 4);
    CHECK(bytes[24] == 1);
    CHECK(bytes[28] == 1);  // softplus head
    const std::size_t header = 8 + 4 + 4 * 4 + 1;
    CHECK(bytes.size() == header + 8 * p.parameter_count());
    // first payload double is W0(0,0); all weights precede all biases
    double w00;
    std::memcpy(&w00, bytes.data() + header, 8);
    CHECK(w00 == p.weight(0)(0, 0));
    double first_bias;
    std::memcpy(&first_bias, bytes.data() + header + 8 * (15 + 20 + 4), 8);
    CHECK(first_bias == p.bias(0)(0));
  }
  SUBCASE("round trip is bitwise exact") { CHECK(deserialize(bytes) == p); }
  SUBCASE("corrupted magic") {
    bytes[0] = 'X';
    CHECK_THROWS_AS(deserialize(bytes), FormatError);
  }
  SUBCASE("truncated payload") {
    bytes.pop_back();
    CHECK_THROWS_AS(deserialize(bytes), FormatError);
  }
  SUBCASE("trailing bytes") {
    bytes.push_back(0);
    CHECK_THROWS_AS(deserialize(bytes), FormatError);
  }
  SUBCASE("unknown head tag") {
    bytes[28] = 7;
    CHECK_THROWS_AS(deserialize(bytes), FormatError);
  }
}
