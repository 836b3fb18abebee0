#include "bkno/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "bkno/errors.hpp"
#include "json.hpp"

namespace bkno {
namespace {

using Json = nlohmann::json;

FieldInit parse_field(const Json& j, const char* what) {
  FieldInit f;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "zero")
    f.kind = FieldInit::Kind::Zero;
  else if (kind == "sine")
    f.kind = FieldInit::Kind::Sine;
  else if (kind == "linear")
    f.kind = FieldInit::Kind::Linear;
  else if (kind == "tabulated")
    f.kind = FieldInit::Kind::Tabulated;
  else
    throw parse_error(std::string(what) + ": unknown init kind '" + kind + "'");
  f.amplitude = j.value("amplitude", 1.0);
  if (f.kind == FieldInit::Kind::Tabulated) {
    j.at("xs").get_to(f.xs);
    j.at("values").get_to(f.values);
    if (f.xs.size() != f.values.size() || f.xs.size() < 2)
      throw parse_error(std::string(what) + ": tabulated init needs matching xs/values, >= 2");
    for (std::size_t i = 1; i < f.xs.size(); ++i)
      if (f.xs[i] <= f.xs[i - 1])
        throw parse_error(std::string(what) + ": tabulated xs must be strictly increasing");
  }
  return f;
}

Json dump_field(const FieldInit& f) {
  Json j;
  switch (f.kind) {
    case FieldInit::Kind::Zero: j["kind"] = "zero"; break;
    case FieldInit::Kind::Sine: j["kind"] = "sine"; break;
    case FieldInit::Kind::Linear: j["kind"] = "linear"; break;
    case FieldInit::Kind::Tabulated: j["kind"] = "tabulated"; break;
  }
  j["amplitude"] = f.amplitude;
  if (f.kind == FieldInit::Kind::Tabulated) {
    j["xs"] = f.xs;
    j["values"] = f.values;
  }
  return j;
}

// A mode entry may override any subset of the nominal parameter fields.
ModeParams parse_mode(const Json& j, const ModeParams& nominal) {
  ModeParams m = nominal;
  if (j.contains("lambda_plus")) j.at("lambda_plus").get_to(m.lambda_plus);
  if (j.contains("lambda_minus")) m.lambda_minus = j.at("lambda_minus").get<double>();
  if (j.contains("sigma_pp")) j.at("sigma_pp").get_to(m.sigma_pp.a);
  if (j.contains("sigma_pm")) j.at("sigma_pm").get_to(m.sigma_pm.a);
  if (j.contains("sigma_mp")) j.at("sigma_mp").get_to(m.sigma_mp.a);
  if (j.contains("sigma_mm")) m.sigma_mm = j.at("sigma_mm").get<double>();
  if (j.contains("Q")) j.at("Q").get_to(m.Q.a);
  if (j.contains("R")) j.at("R").get_to(m.R.a);
  return m;
}

ScenarioConfig parse_config(const Json& j) {
  ScenarioConfig cfg;
  const auto& od = j.at("ode");
  od.at("A").get_to(cfg.ode.A.a);
  od.at("B").get_to(cfg.ode.B.a);
  od.at("C").get_to(cfg.ode.C.a);
  od.at("K").get_to(cfg.ode.K.a);

  const auto& nm = j.at("nominal");
  nm.at("lambda_plus").get_to(cfg.nominal.lambda_plus);
  cfg.nominal.lambda_minus = nm.at("lambda_minus").get<double>();
  nm.at("sigma_pp").get_to(cfg.nominal.sigma_pp.a);
  nm.at("sigma_pm").get_to(cfg.nominal.sigma_pm.a);
  nm.at("sigma_mp").get_to(cfg.nominal.sigma_mp.a);
  cfg.nominal.sigma_mm = nm.at("sigma_mm").get<double>();
  nm.at("Q").get_to(cfg.nominal.Q.a);
  nm.at("R").get_to(cfg.nominal.R.a);

  if (j.contains("bounds")) {
    cfg.bounds.lo = j.at("bounds").at("lo").get<double>();
    cfg.bounds.hi = j.at("bounds").at("hi").get<double>();
  }

  const auto& mk = j.at("markov");
  for (const auto& mj : mk.at("modes")) cfg.markov.modes.push_back(parse_mode(mj, cfg.nominal));
  if (cfg.markov.modes.empty()) throw parse_error("markov: at least one mode required");
  cfg.markov.tau_star = mk.at("tau_star").get<double>();
  cfg.markov.initial_mode = mk.value("initial_mode", 0);
  if (cfg.markov.initial_mode < 0 || cfg.markov.initial_mode >= cfg.markov.r())
    throw parse_error("markov: initial_mode out of range");

  const auto& rt = mk.at("rates");
  const std::string kind = rt.at("kind").get<std::string>();
  cfg.markov.rates.r = cfg.markov.r();
  if (kind == "paper_s61") {
    cfg.markov.rates.kind = RateSchedule::Kind::PaperS61;
  } else if (kind == "constant") {
    cfg.markov.rates.kind = RateSchedule::Kind::Constant;
    rt.at("matrix").get_to(cfg.markov.rates.constant);
    if (cfg.markov.rates.constant.size() !=
        static_cast<std::size_t>(cfg.markov.r() * cfg.markov.r()))
      throw parse_error("markov: constant rate matrix must be r*r");
  } else if (kind == "tabulated") {
    cfg.markov.rates.kind = RateSchedule::Kind::Tabulated;
    rt.at("times").get_to(cfg.markov.rates.times);
    for (const auto& tj : rt.at("matrices"))
      cfg.markov.rates.tables.push_back(tj.get<std::vector<double>>());
    if (cfg.markov.rates.times.size() != cfg.markov.rates.tables.size() ||
        cfg.markov.rates.times.size() < 2)
      throw parse_error("markov: tabulated rates need matching times/matrices, >= 2");
    for (const auto& tab : cfg.markov.rates.tables)
      if (tab.size() != static_cast<std::size_t>(cfg.markov.r() * cfg.markov.r()))
        throw parse_error("markov: tabulated rate matrix must be r*r");
  } else {
    throw parse_error("markov: unknown rate schedule kind '" + kind + "'");
  }
  if (!(cfg.markov.tau_star > 0.0)) throw parse_error("markov: tau_star must be positive");

  const auto& gr = j.at("grid");
  cfg.grid.nx = gr.at("nx").get<int>();
  cfg.grid.cfl = gr.at("cfl").get<double>();
  cfg.grid.t_end = gr.at("t_end").get<double>();
  if (cfg.grid.nx < 2) throw parse_error("grid: nx must be >= 2");
  if (!(cfg.grid.cfl > 0.0)) throw parse_error("grid: cfl must be positive");
  if (!(cfg.grid.t_end > 0.0)) throw parse_error("grid: t_end must be positive");

  const auto& in = j.at("init");
  const auto& wj = in.at("w");
  if (wj.size() != 3) throw parse_error("init: w must hold 3 component specs");
  for (int i = 0; i < 3; ++i)
    cfg.init.w[static_cast<std::size_t>(i)] = parse_field(wj.at(static_cast<std::size_t>(i)), "init.w");
  cfg.init.z = parse_field(in.at("z"), "init.z");
  in.at("X0").get_to(cfg.init.X0.a);

  cfg.seed = j.value("seed", std::uint64_t{0});
  return cfg;
}

}  // namespace

ScenarioConfig load_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw parse_error(std::string("config: ") + e.what());
  }
  ScenarioConfig cfg;
  try {
    cfg = parse_config(j);
  } catch (const Json::exception& e) {
    throw parse_error(std::string("config: ") + e.what());
  }
  validate(cfg.ode);
  validate(cfg.nominal, cfg.bounds);
  for (const auto& m : cfg.markov.modes) validate(m, cfg.bounds);
  return cfg;
}

ScenarioConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_config(ss.str());
}

std::string save_config(const ScenarioConfig& cfg) {
  Json j;
  j["ode"] = {{"A", cfg.ode.A.a}, {"B", cfg.ode.B.a}, {"C", cfg.ode.C.a}, {"K", cfg.ode.K.a}};
  auto dump_mode = [](const ModeParams& m) {
    return Json{{"lambda_plus", m.lambda_plus}, {"lambda_minus", m.lambda_minus},
                {"sigma_pp", m.sigma_pp.a},     {"sigma_pm", m.sigma_pm.a},
                {"sigma_mp", m.sigma_mp.a},     {"sigma_mm", m.sigma_mm},
                {"Q", m.Q.a},                   {"R", m.R.a}};
  };
  j["nominal"] = dump_mode(cfg.nominal);
  j["bounds"] = {{"lo", cfg.bounds.lo}, {"hi", cfg.bounds.hi}};
  Json modes = Json::array();
  for (const auto& m : cfg.markov.modes) modes.push_back(dump_mode(m));
  Json rates;
  switch (cfg.markov.rates.kind) {
    case RateSchedule::Kind::PaperS61: rates = {{"kind", "paper_s61"}}; break;
    case RateSchedule::Kind::Constant:
      rates = {{"kind", "constant"}, {"matrix", cfg.markov.rates.constant}};
      break;
    case RateSchedule::Kind::Tabulated:
      rates = {{"kind", "tabulated"},
               {"times", cfg.markov.rates.times},
               {"matrices", cfg.markov.rates.tables}};
      break;
  }
  j["markov"] = {{"modes", modes},
                 {"rates", rates},
                 {"tau_star", cfg.markov.tau_star},
                 {"initial_mode", cfg.markov.initial_mode}};
  j["grid"] = {{"nx", cfg.grid.nx}, {"cfl", cfg.grid.cfl}, {"t_end", cfg.grid.t_end}};
  Json wj = Json::array();
  for (const auto& f : cfg.init.w) wj.push_back(dump_field(f));
  j["init"] = {{"w", wj}, {"z", dump_field(cfg.init.z)}, {"X0", cfg.init.X0.a}};
  j["seed"] = cfg.seed;
  return j.dump(2);
}

bool config_equal(const ScenarioConfig& a, const ScenarioConfig& b) {
  auto ode_eq = [](const OdeMatrices& x, const OdeMatrices& y) {
    return x.A.a == y.A.a && x.B.a == y.B.a && x.C.a == y.C.a && x.K.a == y.K.a;
  };
  auto field_eq = [](const FieldInit& x, const FieldInit& y) {
    return x.kind == y.kind && x.amplitude == y.amplitude && x.xs == y.xs && x.values == y.values;
  };
  if (!ode_eq(a.ode, b.ode) || !(a.nominal == b.nominal)) return false;
  if (a.markov.modes != b.markov.modes || a.markov.tau_star != b.markov.tau_star ||
      a.markov.initial_mode != b.markov.initial_mode)
    return false;
  const auto& ra = a.markov.rates;
  const auto& rb = b.markov.rates;
  if (ra.kind != rb.kind || ra.constant != rb.constant || ra.times != rb.times ||
      ra.tables != rb.tables)
    return false;
  if (a.grid.nx != b.grid.nx || a.grid.cfl != b.grid.cfl || a.grid.t_end != b.grid.t_end)
    return false;
  for (int i = 0; i < 3; ++i)
    if (!field_eq(a.init.w[static_cast<std::size_t>(i)], b.init.w[static_cast<std::size_t>(i)]))
      return false;
  if (!field_eq(a.init.z, b.init.z) || a.init.X0.a != b.init.X0.a) return false;
  return a.bounds.lo == b.bounds.lo && a.bounds.hi == b.bounds.hi && a.seed == b.seed;
}

}  // namespace bkno
