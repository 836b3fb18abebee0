#include <fstream>
#include <sstream>

#include "bkno/config.hpp"
#include "bkno/errors.hpp"
#include "doctest.h"

using namespace bkno;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string kScenario = std::string(BKNO_DATA_DIR) + "/paper_s61.json";

}  // namespace

TEST_CASE("bundled scenario parses to the section values") {
  const ScenarioConfig cfg = load_config_file(kScenario);
  CHECK(cfg.ode.A(0, 1) == 2.0);
  CHECK(cfg.ode.A(1, 0) == -2.0);
  CHECK(cfg.ode.B(0, 0) == 2.0);
  CHECK(cfg.ode.B(1, 0) == 1.0);
  CHECK(cfg.ode.K(0, 0) == -2.0);
  CHECK(cfg.ode.K(0, 1) == -1.0);
  CHECK(cfg.nominal.lambda_minus == 1.0);
  CHECK(cfg.nominal.R(0, 0) == 1.0);
  CHECK(cfg.nominal.R(0, 2) == 1.0);
  CHECK(cfg.markov.r() == 5);
  CHECK(cfg.markov.modes[4].lambda_minus == 1.5);
  // overrides inherit everything else from nominal
  CHECK(cfg.markov.modes[4].Q(1, 0) == 1.05);
  CHECK(cfg.markov.tau_star == 90.0);
  CHECK(cfg.grid.nx == 200);
}

TEST_CASE("negative transport speed is rejected by name") {
  std::string doc = read_file(kScenario);
  const auto pos = doc.find("\"lambda_minus\": 1.0");
  REQUIRE(pos != std::string::npos);
  doc.replace(pos, 19, "\"lambda_minus\": -1.0");
  CHECK_THROWS_WITH_AS(load_config(doc), "lambda_minus must be positive", validation_error);
}

TEST_CASE("non-stabilizing gain is rejected by name") {
  std::string doc = read_file(kScenario);
  const auto pos = doc.find("\"K\": [-2.0, -1.0]");
  REQUIRE(pos != std::string::npos);
  doc.replace(pos, 17, "\"K\": [0.0, 0.0]");
  CHECK_THROWS_WITH_AS(load_config(doc), "A+BK not Hurwitz", validation_error);
}

TEST_CASE("malformed document is a parse error") {
  CHECK_THROWS_AS(load_config("{ not json"), parse_error);
  CHECK_THROWS_AS(load_config("{}"), parse_error);
  CHECK_THROWS_AS(load_config_file("/nonexistent/config.json"), parse_error);
}

TEST_CASE("save/load round trip is field-exact") {
  const ScenarioConfig cfg = load_config_file(kScenario);
  const ScenarioConfig again = load_config(save_config(cfg));
  CHECK(config_equal(cfg, again));
}

TEST_CASE("field init families") {
  FieldInit f;
  f.kind = FieldInit::Kind::Sine;
  f.amplitude = 2.0;
  CHECK(f.eval(0.25) == doctest::Approx(2.0).epsilon(1e-15));
  f.kind = FieldInit::Kind::Linear;
  CHECK(f.eval(0.5) == 1.0);
  f.kind = FieldInit::Kind::Tabulated;
  f.xs = {0.0, 1.0};
  f.values = {1.0, 3.0};
  CHECK(f.eval(0.5) == 2.0);
  f.kind = FieldInit::Kind::Zero;
  CHECK(f.eval(0.7) == 0.0);
}

TEST_CASE("mode parameters outside the global bounds are rejected") {
  ScenarioConfig cfg = load_config_file(kScenario);
  ModeParams bad = cfg.nominal;
  bad.sigma_mm = 1e4;
  CHECK_THROWS_WITH_AS(validate(bad, cfg.bounds), "mode parameter outside global bounds",
                       validation_error);
}
