// Acceptance gate: one line per criterion, [PASS]/[FAIL], nonzero exit on
// any failure. Expects the bundled scenario file as argv[1].

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "bkno/errors.hpp"

#include "bkno/config.hpp"
#include "bkno/kernel_solver.hpp"
#include "bkno/markov.hpp"
#include "bkno/metrics.hpp"
#include "bkno/neural_operator.hpp"
#include "bkno/simulator.hpp"
#include "bkno/transform.hpp"
#include "oracles.hpp"

using namespace bkno;
using Clock = std::chrono::steady_clock;

namespace {

int g_fails = 0;

void report(int idx, bool ok, const std::string& detail) {
  std::printf("[%s] %2d: %s\n", ok ? "PASS" : "FAIL", idx, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_fails;
}

void fail_with_exception(int idx, const std::exception& e) {
  report(idx, false, std::string("exception: ") + e.what());
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

int lambda_minus_index() {
  for (int i = 0; i < kParamVectorSize; ++i)
    if (std::string(param_entry_name(i)) == "lambda_minus") return i;
  throw std::logic_error("lambda_minus entry missing");
}

MarkovPath frozen_path(int mode, double horizon) {
  return MarkovPath{{0.0}, {mode}, horizon};
}

ScenarioConfig single_nominal(const ScenarioConfig& base) {
  ScenarioConfig cfg = base;
  cfg.markov.modes = {cfg.nominal};
  cfg.markov.initial_mode = 0;
  cfg.markov.rates.kind = RateSchedule::Kind::Constant;
  cfg.markov.rates.r = 1;
  cfg.markov.rates.constant = {0.0};
  cfg.markov.tau_star = 1.0;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <scenario.json>\n");
    return 2;
  }
  const ScenarioConfig cfg = load_config_file(argv[1]);

  // ---- 1: diagonal condition + solver runtime ------------------------------
  try {
    const auto t0 = Clock::now();
    const auto g = solve_kernels(cfg.nominal, cfg.ode, 200);
    const double secs = seconds_since(t0);
    const double expect[3] = {-0.15, 0.2 / 2.01, -0.1 / 1.98};
    double err = 0.0;
    for (int a = 0; a <= 200; ++a) {
      const auto& kd = g.K[static_cast<std::size_t>(g.mesh.index(a, a))];
      for (int i = 0; i < 3; ++i) err = std::max(err, std::abs(kd[i] - expect[i]));
    }
    report(1, err <= 1e-12 && secs < 5.0,
           fmt("diagonal sup error %.3e, solve %.2fs at n=200", err, secs));
  } catch (const std::exception& e) {
    fail_with_exception(1, e);
  }

  // ---- 2: decoupled closed forms -------------------------------------------
  try {
    ScenarioConfig dc = cfg;
    dc.nominal.sigma_mp = Row3{};
    dc.nominal.sigma_pm = Col3{};
    dc.nominal.Q = Col3{};
    dc.ode.C = Mat32{};
    const auto g = solve_kernels(dc.nominal, dc.ode, 100);
    Mat2 M = dc.ode.A;
    M(0, 0) -= dc.nominal.sigma_mm;
    M(1, 1) -= dc.nominal.sigma_mm;
    double gerr = 0.0, nerr = 0.0;
    std::vector<Row2> gam(101);
    for (int a = 0; a <= 100; ++a) {
      gam[static_cast<std::size_t>(a)] =
          dc.ode.K * oracle::expm2((a / 100.0 / dc.nominal.lambda_minus) * M);
      gerr = std::max(gerr, std::abs(g.gamma[static_cast<std::size_t>(a)][0] -
                                     gam[static_cast<std::size_t>(a)](0, 0)));
      gerr = std::max(gerr, std::abs(g.gamma[static_cast<std::size_t>(a)][1] -
                                     gam[static_cast<std::size_t>(a)](0, 1)));
    }
    for (int a = 0; a <= 100; ++a)
      for (int b = 0; b <= a; ++b) {
        const Row2& gd = gam[static_cast<std::size_t>(a - b)];
        const double expect =
            (gd(0, 0) * dc.ode.B(0, 0) + gd(0, 1) * dc.ode.B(1, 0)) / dc.nominal.lambda_minus;
        nerr = std::max(nerr,
                        std::abs(g.N[static_cast<std::size_t>(g.mesh.index(a, b))] - expect));
      }
    report(2, gerr <= 1e-8 && nerr <= 1e-4,
           fmt("gamma sup error %.3e (tol 1e-8), N sup error %.3e (tol 1e-4)", gerr, nerr));
  } catch (const std::exception& e) {
    fail_with_exception(2, e);
  }

  // ---- 3: residual convergence ---------------------------------------------
  try {
    const auto r100 = kernel_residual(solve_kernels(cfg.nominal, cfg.ode, 100));
    const auto r200 = kernel_residual(solve_kernels(cfg.nominal, cfg.ode, 200));
    const auto r400 = kernel_residual(solve_kernels(cfg.nominal, cfg.ode, 400));
    const double rk1 = r100.pde_K / r200.pde_K, rk2 = r200.pde_K / r400.pde_K;
    const double rn1 = r100.pde_N / r200.pde_N, rn2 = r200.pde_N / r400.pde_N;
    const bool ok = rk1 >= 1.8 && rk2 >= 1.8 && rn1 >= 1.8 && rn2 >= 1.8;
    report(3, ok, fmt("pde_K shrink factors %.2f / %.2f, pde_N %.2f", rk1, rk2, std::min(rn1, rn2)));
  } catch (const std::exception& e) {
    fail_with_exception(3, e);
  }

  // ---- 4: Kolmogorov forward correctness -----------------------------------
  try {
    MarkovChainSpec two;
    two.modes.resize(2);
    two.rates.kind = RateSchedule::Kind::Constant;
    two.rates.r = 2;
    two.rates.constant = {0.0, 1.0, 1.0, 0.0};
    two.tau_star = 1.0;
    const auto row = kolmogorov_evolve(two, 0, 0.0, 1.0, 1e-3);
    const double closed = 0.5 + 0.5 * std::exp(-2.0);
    const double err = std::abs(row[0] - closed);

    double drift = 0.0;
    for (int i = 0; i < cfg.markov.r(); ++i) {
      const auto r = kolmogorov_evolve(cfg.markov, i, 0.0, 70.0, 1e-3);
      double sum = 0.0;
      for (double v : r) sum += v;
      drift = std::max(drift, std::abs(sum - 1.0));
    }
    report(4, err <= 1e-6 && drift <= 1e-9,
           fmt("two-state error %.3e (tol 1e-6), worst row-sum drift %.3e", err, drift));
  } catch (const std::exception& e) {
    fail_with_exception(4, e);
  }

  // ---- 5: sampling vs forward equations ------------------------------------
  try {
    const int npaths = 10000;
    const double t = 5.0;
    std::vector<int> counts(static_cast<std::size_t>(cfg.markov.r()), 0);
    for (int k = 0; k < npaths; ++k) {
      const auto path = sample_path(cfg.markov, t, 1000 + static_cast<std::uint64_t>(k));
      ++counts[static_cast<std::size_t>(mode_at(path, t))];
    }
    const auto probs = kolmogorov_evolve(cfg.markov, cfg.markov.initial_mode, 0.0, t, 1e-3);
    double worst = 0.0;
    for (int j = 0; j < cfg.markov.r(); ++j) {
      const double mean = npaths * probs[static_cast<std::size_t>(j)];
      const double sigma =
          std::sqrt(mean * (1.0 - probs[static_cast<std::size_t>(j)]));
      worst = std::max(worst, std::abs(counts[static_cast<std::size_t>(j)] - mean) /
                                  std::max(sigma, 1e-9));
    }
    report(5, worst <= 3.0, fmt("worst per-state deviation %.2f binomial sigma (tol 3)", worst));
  } catch (const std::exception& e) {
    fail_with_exception(5, e);
  }

  // ---- 6: open-loop instability --------------------------------------------
  try {
    const auto t0 = Clock::now();
    const auto nom = single_nominal(cfg);
    const auto tr = simulate(nom, frozen_path(0, cfg.grid.t_end), Controller{});
    const double secs = seconds_since(t0);
    // growth hits the 1e12 state guard well before t = 70; either outcome
    // (guarded blow-up or p(70) itself) must exceed the 10x floor
    const double growth = tr.p_series.back() / tr.p_series.front();
    report(6, growth > 10.0 && secs < 30.0,
           fmt("p growth factor %.3e", growth) +
               (tr.blew_up ? " (guard tripped early)" : "") + fmt(", %.1fs", secs));
  } catch (const std::exception& e) {
    fail_with_exception(6, e);
  }

  // ---- shared: dataset + trained operator (criteria 7b, 9, 11) -------------
  OperatorModel model;
  TrainHistory hist;
  double train_secs = 0.0;
  bool model_ok = false;
  std::string train_err;
  try {
    const auto t0 = Clock::now();
    ParamSpec spec;
    spec.entries.push_back({lambda_minus_index(), 0.8, 1.8});
    const auto ds = generate_dataset(cfg.ode, cfg.nominal, spec, 500, 50, cfg.seed);
    model = train(ds, TrainOptions{}, &hist);
    train_secs = seconds_since(t0);
    model_ok = true;
  } catch (const std::exception& e) {
    train_err = e.what();
  }

  // ---- 7 + 8: closed-loop decay and boundary property -----------------------
  try {
    const auto t0 = Clock::now();
    const auto grid = solve_kernels(cfg.nominal, cfg.ode, cfg.grid.nx);
    const Controller ctl{Controller::Kind::Kernels, &grid, ReflectionPoint::X0};
    const auto res = run_ensemble(cfg, ctl, 20, cfg.seed);

    auto judge = [&](const EnsembleResult& r, double* ratio, DecayFit* fit) {
      if (r.completed == 0 || r.times.empty()) return false;
      *ratio = r.mean_p.back() / r.mean_p.front();
      *fit = fit_decay(r.times, r.mean_p, 10.0, cfg.grid.t_end);
      return *ratio <= 1e-2 && fit->zeta > 0.0 && fit->r2 >= 0.8;
    };
    double ratio_s = 0.0;
    DecayFit fit_s;
    const bool ok_s = judge(res, &ratio_s, &fit_s);

    bool ok_n = false;
    double ratio_n = 0.0;
    DecayFit fit_n;
    KernelGrid ngrid;
    if (model_ok) {
      ngrid = infer(model, {cfg.nominal.lambda_minus}, cfg.grid.nx);
      const Controller nctl{Controller::Kind::Kernels, &ngrid, ReflectionPoint::X0};
      const auto nres = run_ensemble(cfg, nctl, 20, cfg.seed + 1);
      ok_n = judge(nres, &ratio_n, &fit_n);
    }
    const double secs = seconds_since(t0);
    report(7, ok_s && ok_n && secs < 600.0,
           fmt("solver kernels: E[p]/p0 %.2e, zeta %.2f, R2 %.3f; ", ratio_s, fit_s.zeta,
               fit_s.r2) +
               (model_ok ? fmt("operator kernels: E[p]/p0 %.2e, zeta %.2f, R2 %.3f; ", ratio_n,
                               fit_n.zeta, fit_n.r2)
                         : "operator unavailable: " + train_err + "; ") +
               fmt("%.0fs", secs));

    double rho_ratio = 0.0;
    for (const auto& tr : res.trajectories)
      rho_ratio = std::max(rho_ratio, tr.max_rho1_ratio);
    report(8, res.completed == 20 && rho_ratio <= 1e-6,
           fmt("max |rho(1)| / state norm %.3e over 20 closed-loop paths (tol 1e-6)",
               rho_ratio));
  } catch (const std::exception& e) {
    fail_with_exception(7, e);
    fail_with_exception(8, e);
  }

  // ---- 9: operator training quality ----------------------------------------
  try {
    if (!model_ok) throw numeric_error(train_err);
    double sup = 0.0;
    for (double held : {0.85, 1.05, 1.45}) {
      const auto predicted = infer(model, {held}, 50);
      const auto exact = solve_kernels(predicted.nominal, cfg.ode, 50);
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
    }
    const double mse = hist.train_mse.back();
    report(9, mse <= 1e-4 && sup <= 1e-2 && train_secs < 1200.0,
           fmt("train MSE %.3e (tol 1e-4), held-out sup error %.3e (tol 1e-2), %.0fs", mse, sup,
               train_secs));
  } catch (const std::exception& e) {
    fail_with_exception(9, e);
  }

  // ---- 10: gradient correctness --------------------------------------------
  try {
    ParamSpec spec;
    spec.entries.push_back({lambda_minus_index(), 0.8, 1.8});
    const auto ds = generate_dataset(cfg.ode, cfg.nominal, spec, 2, 6, 3);
    TrainOptions opts;
    opts.p = 2;
    opts.hidden = {4};
    opts.epochs = 1;
    opts.seed = 11;
    opts.val_fraction = 0.0;
    OperatorModel toy = train(ds, opts, nullptr);

    const TriMesh mesh{ds.n};
    std::vector<std::array<double, 2>> trunk_in;
    std::vector<std::array<double, kChannels>> mask;
    for (int a = 0; a <= mesh.n; ++a)
      for (int b = 0; b <= a; ++b) {
        trunk_in.push_back({2.0 * a / mesh.n - 1.0, 2.0 * b / mesh.n - 1.0});
        mask.push_back({1.0, 1.0, 1.0, 1.0, b == 0 ? 1.0 : 0.0, b == 0 ? 1.0 : 0.0});
      }
    std::vector<std::vector<double>> branch_in;
    std::vector<std::vector<std::array<double, kChannels>>> target;
    for (const auto& s : ds.samples) {
      branch_in.push_back(toy.normalize_params(s.params));
      std::vector<std::array<double, kChannels>> rows;
      for (int a = 0; a <= mesh.n; ++a)
        for (int b = 0; b <= a; ++b) {
          const std::size_t k = static_cast<std::size_t>(mesh.index(a, b));
          rows.push_back({s.grid.K[k][0], s.grid.K[k][1], s.grid.K[k][2], s.grid.N[k],
                          b == 0 ? s.grid.gamma[static_cast<std::size_t>(a)][0] : 0.0,
                          b == 0 ? s.grid.gamma[static_cast<std::size_t>(a)][1] : 0.0});
        }
      target.push_back(std::move(rows));
    }
    detail::Gradients g;
    for (const auto& d : toy.branch.layers)
      g.branch.push_back({d.in, d.out, std::vector<double>(d.W.size(), 0.0),
                          std::vector<double>(d.b.size(), 0.0)});
    for (const auto& d : toy.trunk.layers)
      g.trunk.push_back({d.in, d.out, std::vector<double>(d.W.size(), 0.0),
                         std::vector<double>(d.b.size(), 0.0)});
    detail::loss_and_grad(toy, trunk_in, branch_in, target, mask, &g);

    double worst = 0.0;
    // block-wise relative norm; elementwise ratios on near-zero entries sit
    // at the difference quotient's own truncation floor
    auto probe = [&](std::vector<double>& w, const std::vector<double>& gw) {
      double diff2 = 0.0, ref2 = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double keep = w[i], h = 1e-5;
        w[i] = keep + h;
        const double lp = detail::loss_and_grad(toy, trunk_in, branch_in, target, mask, nullptr);
        w[i] = keep - h;
        const double lm = detail::loss_and_grad(toy, trunk_in, branch_in, target, mask, nullptr);
        w[i] = keep;
        const double fd = (lp - lm) / (2 * h);
        diff2 += (fd - gw[i]) * (fd - gw[i]);
        ref2 += std::max(fd * fd, gw[i] * gw[i]);
      }
      worst = std::max(worst, std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-12));
    };
    for (std::size_t l = 0; l < toy.branch.layers.size(); ++l) {
      probe(toy.branch.layers[l].W, g.branch[l].W);
      probe(toy.branch.layers[l].b, g.branch[l].b);
    }
    for (std::size_t l = 0; l < toy.trunk.layers.size(); ++l) {
      probe(toy.trunk.layers[l].W, g.trunk[l].W);
      probe(toy.trunk.layers[l].b, g.trunk[l].b);
    }
    report(10, worst <= 1e-4, fmt("worst relative gradient error %.3e (tol 1e-4)", worst));
  } catch (const std::exception& e) {
    fail_with_exception(10, e);
  }

  // ---- 11: inference speedup ------------------------------------------------
  try {
    if (!model_ok) throw numeric_error(train_err);
    auto median5 = [](auto&& fn) {
      std::array<double, 5> t{};
      fn();  // warm
      for (auto& v : t) {
        const auto t0 = Clock::now();
        fn();
        v = seconds_since(t0);
      }
      std::sort(t.begin(), t.end());
      return t[2];
    };
    const double no10 = median5([&] { infer(model, {cfg.nominal.lambda_minus}, 10); });
    const double no1000 = median5([&] { infer(model, {cfg.nominal.lambda_minus}, 1000); });
    const double sol1000 =
        median5([&] { solve_kernels(cfg.nominal, cfg.ode, 1000); });
    const double ratio = std::max(no10, no1000) / std::max(std::min(no10, no1000), 1e-12);
    const double speedup = sol1000 / no1000;
    report(11, ratio <= 3.0 && speedup >= 50.0,
           fmt("inference wall ratio %.2f across h=0.1..0.001 (tol 3), speedup %.0fx at "
               "h=0.001 (floor 50)",
               ratio, speedup));
  } catch (const std::exception& e) {
    fail_with_exception(11, e);
  }

  // ---- 12: Lyapunov solve ----------------------------------------------------
  try {
    const Mat2 P = solve_lyapunov(cfg.ode.closed_loop(), Mat2::identity());
    double perr = std::max({std::abs(P(0, 0) - 0.525), std::abs(P(0, 1) + 0.4),
                            std::abs(P(1, 0) + 0.4), std::abs(P(1, 1) - 0.5)});
    std::mt19937_64 rng(321);
    auto u = [&] { return static_cast<double>((rng() >> 11) + 1) * 0x1.0p-53 * 2.0 - 1.0; };
    double residual = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      Mat2 L;
      for (double& v : L.a) v = 2.0 * u();
      L(0, 0) += 3.0;
      L(1, 1) += 3.0;
      Mat2 M = -1.0 * (L * Mat2{{L(0, 0), L(1, 0), L(0, 1), L(1, 1)}});
      const double s = u();
      M(0, 1) += s;
      M(1, 0) -= s;
      const Mat2 Pr = solve_lyapunov(M, Mat2::identity());
      const Mat2 Mt{{M(0, 0), M(1, 0), M(0, 1), M(1, 1)}};
      residual = std::max(residual, max_abs(Pr * M + Mt * Pr + Mat2::identity()));
    }
    report(12, perr <= 1e-12 && residual <= 1e-12,
           fmt("section P error %.3e, worst random residual %.3e (tol 1e-12)", perr, residual));
  } catch (const std::exception& e) {
    fail_with_exception(12, e);
  }

  // ---- 13: transform round trip ----------------------------------------------
  try {
    const auto grid = solve_kernels(cfg.nominal, cfg.ode, 200);
    StateSnapshot s = StateSnapshot::zero(200);
    for (int j = 0; j <= 200; ++j) {
      const double x = s.x(j);
      s.w[0][static_cast<std::size_t>(j)] = std::sin(2 * M_PI * x);
      s.w[1][static_cast<std::size_t>(j)] = std::cos(3.0 * x);
      s.w[2][static_cast<std::size_t>(j)] = x * (1.0 - x);
      s.z[static_cast<std::size_t>(j)] = std::exp(-x) - 0.5;
    }
    s.X(0, 0) = 1.0;
    s.X(1, 0) = -1.0;
    const auto back = invert_transform(apply_transform(s, grid), grid);
    double err = 0.0;
    for (int j = 0; j <= 200; ++j)
      err = std::max(err, std::abs(back.z[static_cast<std::size_t>(j)] -
                                   s.z[static_cast<std::size_t>(j)]));
    report(13, err <= 1e-6, fmt("round-trip z sup error %.3e (tol 1e-6)", err));
  } catch (const std::exception& e) {
    fail_with_exception(13, e);
  }

  std::printf("%d of 13 criteria failed\n", g_fails);
  return g_fails == 0 ? 0 : 1;
}
