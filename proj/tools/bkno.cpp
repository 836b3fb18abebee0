// Scenario runner: kernel solves, dataset/model production, open/closed-loop
// ensembles, and the solver-vs-operator timing comparison. All output is
// JSON/CSV for external plotting.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "bkno/config.hpp"
#include "bkno/errors.hpp"
#include "bkno/kernel_solver.hpp"
#include "bkno/metrics.hpp"
#include "bkno/neural_operator.hpp"
#include "bkno/simulator.hpp"
#include "json.hpp"

namespace {

using Json = nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw bkno::parse_error("cannot open " + path.string() + " for writing");
  out << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw bkno::parse_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::pair<double, double> parse_range(const std::string& s) {
  const auto pos = s.find(':');
  if (pos == std::string::npos) throw bkno::parse_error("--range expects lo:hi");
  return {std::stod(s.substr(0, pos)), std::stod(s.substr(pos + 1))};
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  if (out.empty()) throw bkno::parse_error("empty list argument");
  return out;
}

void write_trajectory_csv(const fs::path& path, const bkno::Trajectory& tr) {
  std::ostringstream out;
  out.precision(17);
  out << "t,p,u,mode,X1,X2\n";
  for (std::size_t i = 0; i < tr.times.size(); ++i)
    out << tr.times[i] << ',' << tr.p_series[i] << ',' << tr.u_series[i] << ','
        << tr.mode_series[i] << ',' << tr.X_series[i](0, 0) << ',' << tr.X_series[i](1, 0)
        << '\n';
  write_file(path, out.str());
}

void write_state_csv(const fs::path& path, const bkno::StateSnapshot& s) {
  std::ostringstream out;
  out.precision(17);
  out << "x,w1,w2,w3,z\n";
  for (int j = 0; j <= s.nx; ++j) {
    out << s.x(j);
    for (int c = 0; c < 3; ++c)
      out << ',' << s.w[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
    out << ',' << s.z[static_cast<std::size_t>(j)] << '\n';
  }
  write_file(path, out.str());
}

int lambda_minus_index() {
  for (int i = 0; i < bkno::kParamVectorSize; ++i)
    if (std::string(bkno::param_entry_name(i)) == "lambda_minus") return i;
  throw std::logic_error("lambda_minus entry missing");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"backstepping kernel solver / neural-operator scenario runner"};
  app.require_subcommand(1);

  std::string config_path, out_path, model_path, range_arg, controller = "solver-kernels";
  std::string grids_arg, holdout_arg, dataset_path;
  int n = 200, count = 500, epochs = 600, batch = 256, paths = 20;
  std::uint64_t seed = 0;
  bool seed_given = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "scenario config file");
    cmd->add_option("--out", out_path, "output path");
    cmd->add_option("--seed", seed, "RNG seed override")->each([&](const std::string&) {
      seed_given = true;
    });
    cmd->add_option("--n", n, "kernel / simulation mesh size");
  };

  auto* solve = app.add_subcommand("solve", "solve kernels, write grid, print residuals");
  add_common(solve);

  auto* dataset = app.add_subcommand("dataset", "generate a kernel dataset");
  add_common(dataset);
  dataset->add_option("--count", count, "number of samples");
  dataset->add_option("--range", range_arg, "lambda_minus sampling range lo:hi");

  auto* train = app.add_subcommand("train", "train the operator on a dataset");
  train->add_option("dataset", dataset_path, "dataset file")->required();
  add_common(train);
  train->add_option("--epochs", epochs, "training epochs");
  train->add_option("--batch", batch, "trunk nodes per step");

  auto* eval = app.add_subcommand("eval", "held-out evaluation against fresh solves");
  eval->add_option("model", model_path, "model file")->required();
  add_common(eval);
  eval->add_option("--holdout", holdout_arg, "comma-separated lambda_minus values");

  auto* ensemble = app.add_subcommand("ensemble", "closed/open-loop Monte Carlo runs");
  add_common(ensemble);
  ensemble->add_option("--controller", controller, "none | solver-kernels | no-model");
  ensemble->add_option("--model", model_path, "operator model (controller no-model)");
  ensemble->add_option("--paths", paths, "number of Markov paths");

  auto* bench = app.add_subcommand("bench", "solver vs operator timing per grid");
  add_common(bench);
  bench->add_option("--model", model_path, "operator model");
  bench->add_option("--grids", grids_arg, "comma-separated step sizes h");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*solve) {
      const auto cfg = bkno::load_config_file(config_path);
      const auto grid = bkno::solve_kernels(cfg.nominal, cfg.ode, n);
      const auto rep = bkno::kernel_residual(grid);
      if (!out_path.empty()) write_file(out_path, bkno::kernel_grid_to_json(grid, &rep));
      Json j{{"bc_diag", rep.bc_diag},
             {"bc_xi0", rep.bc_xi0},
             {"ode_gamma", rep.ode_gamma},
             {"pde_K", rep.pde_K},
             {"pde_N", rep.pde_N},
             {"sweeps", grid.sweep_deltas.size()}};
      std::cout << j.dump(2) << "\n";
    } else if (*dataset) {
      const auto cfg = bkno::load_config_file(config_path);
      auto [lo, hi] = range_arg.empty() ? std::pair{0.8, 1.8} : parse_range(range_arg);
      bkno::ParamSpec spec;
      spec.entries.push_back({lambda_minus_index(), lo, hi});
      const auto ds = bkno::generate_dataset(cfg.ode, cfg.nominal, spec, count, n,
                                             seed_given ? seed : cfg.seed);
      write_file(out_path, bkno::dataset_to_json(ds));
      std::cout << Json{{"samples", ds.samples.size()}, {"n", ds.n}}.dump(2) << "\n";
    } else if (*train) {
      const auto ds = bkno::dataset_from_json(read_file(dataset_path));
      bkno::TrainOptions opts;
      opts.epochs = epochs;
      opts.batch = batch;
      opts.seed = seed;
      bkno::TrainHistory hist;
      const auto model = bkno::train(ds, opts, &hist);
      bkno::save_model(model, out_path);
      Json j{{"final_train_mse", hist.train_mse.back()},
             {"final_val_mse", hist.val_mse.back()},
             {"epochs", hist.train_mse.size()}};
      std::cout << j.dump(2) << "\n";
    } else if (*eval) {
      const auto model = bkno::load_model(model_path);
      const auto values = parse_list(holdout_arg);
      Json rows = Json::array();
      for (double v : values) {
        const auto predicted = bkno::infer(model, {v}, n);
        const auto exact = bkno::solve_kernels(predicted.nominal, model.ode, n);
        double sup = 0.0;
        for (std::size_t k = 0; k < exact.K.size(); ++k) {
          for (int c = 0; c < 3; ++c)
            sup = std::max(sup, std::abs(predicted.K[k][static_cast<std::size_t>(c)] -
                                         exact.K[k][static_cast<std::size_t>(c)]));
          sup = std::max(sup, std::abs(predicted.N[k] - exact.N[k]));
        }
        for (std::size_t a = 0; a < exact.gamma.size(); ++a)
          for (int c = 0; c < 2; ++c)
            sup = std::max(sup, std::abs(predicted.gamma[a][static_cast<std::size_t>(c)] -
                                         exact.gamma[a][static_cast<std::size_t>(c)]));
        rows.push_back({{"lambda_minus", v}, {"sup_error", sup}});
      }
      const std::string text = Json{{"holdout", rows}}.dump(2);
      if (!out_path.empty()) write_file(out_path, text);
      std::cout << text << "\n";
    } else if (*ensemble) {
      const auto cfg = bkno::load_config_file(config_path);
      bkno::Controller ctl;
      bkno::KernelGrid grid;
      if (controller == "none") {
        ctl.kind = bkno::Controller::Kind::Zero;
      } else if (controller == "solver-kernels") {
        grid = bkno::solve_kernels(cfg.nominal, cfg.ode, n);
        ctl = {bkno::Controller::Kind::Kernels, &grid, bkno::ReflectionPoint::X0};
      } else if (controller == "no-model") {
        const auto model = bkno::load_model(model_path);
        grid = bkno::infer(model, {cfg.nominal.lambda_minus}, n);
        ctl = {bkno::Controller::Kind::Kernels, &grid, bkno::ReflectionPoint::X0};
      } else {
        throw bkno::parse_error("unknown controller '" + controller + "'");
      }
      const auto res = bkno::run_ensemble(cfg, ctl, paths, seed_given ? seed : cfg.seed);

      const fs::path dir = out_path.empty() ? fs::path(".") : fs::path(out_path);
      fs::create_directories(dir);
      bkno::LyapunovWeights wts;
      wts.P = bkno::solve_lyapunov(cfg.ode.closed_loop(), wts.Qmat);

      std::ostringstream decay;
      decay.precision(17);
      decay << "t,Ep,V_mean\n";
      for (std::size_t i = 0; i < res.times.size(); ++i) {
        double vmean = 0.0;
        if (ctl.kind == bkno::Controller::Kind::Kernels) {
          int cnt = 0;
          for (const auto& tr : res.trajectories) {
            if (tr.blew_up || i >= tr.snapshots.size()) continue;
            const auto& s = tr.snapshots[i];
            vmean += bkno::lyapunov_value(
                s, grid, cfg.markov.modes[static_cast<std::size_t>(s.mode)], wts);
            ++cnt;
          }
          if (cnt > 0) vmean /= cnt;
        }
        decay << res.times[i] << ',' << res.mean_p[i] << ',' << vmean << '\n';
      }
      write_file(dir / "decay.csv", decay.str());

      Json fit_json;
      if (!res.times.empty()) {
        const auto fit = bkno::fit_decay(res.times, res.mean_p, 10.0, cfg.grid.t_end);
        fit_json = {{"zeta", fit.zeta},
                    {"sigma", fit.sigma},
                    {"r2", fit.r2},
                    {"window", {10.0, cfg.grid.t_end}}};
      } else {
        fit_json = {{"error", "all trajectories blew up"}};
      }
      write_file(dir / "fit.json", fit_json.dump(2));
      for (std::size_t k = 0; k < res.trajectories.size(); ++k) {
        write_trajectory_csv(dir / ("trajectory_" + std::to_string(k) + ".csv"),
                             res.trajectories[k]);
        if (!res.trajectories[k].snapshots.empty())
          write_state_csv(dir / ("state_" + std::to_string(k) + ".csv"),
                          res.trajectories[k].snapshots.back());
      }
      std::cout << fit_json.dump(2) << "\n";
    } else if (*bench) {
      const auto cfg = bkno::load_config_file(config_path);
      const auto model = bkno::load_model(model_path);
      const auto hs = grids_arg.empty() ? std::vector<double>{0.1, 0.01, 0.001}
                                        : parse_list(grids_arg);
      auto median5 = [](auto&& fn) {
        std::array<double, 5> t{};
        for (auto& v : t) {
          const auto t0 = Clock::now();
          fn();
          v = seconds_since(t0);
        }
        std::sort(t.begin(), t.end());
        return t[2];
      };
      Json rows = Json::array();
      std::ostringstream csv;
      csv.precision(17);
      csv << "h,solver_seconds,no_seconds,speedup\n";
      for (double h : hs) {
        const int nh = std::max(4, static_cast<int>(std::lround(1.0 / h)));
        bkno::solve_kernels(cfg.nominal, cfg.ode, nh);               // warm
        bkno::infer(model, {cfg.nominal.lambda_minus}, nh);          // warm
        const double ts = median5([&] { bkno::solve_kernels(cfg.nominal, cfg.ode, nh); });
        const double tn =
            median5([&] { bkno::infer(model, {cfg.nominal.lambda_minus}, nh); });
        rows.push_back(
            {{"h", h}, {"n", nh}, {"solver_seconds", ts}, {"no_seconds", tn},
             {"speedup", ts / tn}});
        csv << h << ',' << ts << ',' << tn << ',' << ts / tn << '\n';
      }
      const Json report{{"rows", rows}};
      if (!out_path.empty()) {
        write_file(out_path, report.dump(2));
        write_file(fs::path(out_path).replace_extension(".csv"), csv.str());
      }
      std::cout << report.dump(2) << "\n";
    }
  } catch (const bkno::parse_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const bkno::validation_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
