#include "bkno/simulator.hpp"

#include <cmath>
#include <future>

#include "bkno/errors.hpp"

namespace bkno {
namespace {

constexpr double kBlowupGuard = 1e12;

// Kernel traces along x = 1 sampled on the simulation grid, so the closure
// is O(nx) per step.
struct BoundaryRow {
  std::array<std::vector<double>, 3> K;
  std::vector<double> N;
  std::array<double, 2> gamma{};
};

BoundaryRow boundary_row(const KernelGrid& k, int nx) {
  BoundaryRow row;
  for (auto& c : row.K) c.resize(static_cast<std::size_t>(nx + 1));
  row.N.resize(static_cast<std::size_t>(nx + 1));
  for (int j = 0; j <= nx; ++j) {
    const KernelEval kv = k.evaluate(1.0, static_cast<double>(j) / nx);
    for (int c = 0; c < 3; ++c) row.K[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] = kv.K(0, c);
    row.N[static_cast<std::size_t>(j)] = kv.N;
  }
  row.gamma = k.gamma_at(1.0);
  return row;
}

double sup_abs(const StateSnapshot& s) {
  double m = std::max(std::abs(s.X(0, 0)), std::abs(s.X(1, 0)));
  for (const auto& wc : s.w)
    for (double v : wc) m = std::max(m, std::abs(v));
  for (double v : s.z) m = std::max(m, std::abs(v));
  return m;
}

// L1-ish state magnitude used to normalize the boundary check.
double state_norm(const StateSnapshot& s) {
  const double h = s.h();
  double ww = 0.0, zz = 0.0;
  for (int j = 0; j <= s.nx; ++j) {
    const double wgt = (j == 0 || j == s.nx) ? 0.5 * h : h;
    double n2 = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double v = s.w[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
      n2 += v * v;
    }
    ww += wgt * n2;
    zz += wgt * s.z[static_cast<std::size_t>(j)] * s.z[static_cast<std::size_t>(j)];
  }
  return std::sqrt(ww) + std::sqrt(zz) + std::hypot(s.X(0, 0), s.X(1, 0));
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

double state_p(const StateSnapshot& s) {
  const double h = s.h();
  double acc = 0.0;
  for (int j = 0; j <= s.nx; ++j) {
    double n2 = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double v = s.w[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
      n2 += v * v;
    }
    acc += ((j == 0 || j == s.nx) ? 0.5 * h : h) * n2;
  }
  return acc + s.X(0, 0) * s.X(0, 0) + s.X(1, 0) * s.X(1, 0);
}

Trajectory simulate(const ScenarioConfig& cfg, const MarkovPath& path, const Controller& ctl,
                    int max_snapshots) {
  if (path.horizon < cfg.grid.t_end - 1e-12)
    throw validation_error("simulate: path horizon shorter than t_end");
  if (!(cfg.grid.cfl > 0.0) || cfg.grid.cfl > 1.0)
    throw validation_error("simulate: cfl must lie in (0, 1]");

  const int nx = cfg.grid.nx;
  const double h = 1.0 / nx;
  double vmax = cfg.nominal.max_speed();
  for (const auto& m : cfg.markov.modes) vmax = std::max(vmax, m.max_speed());
  const double dt_bound = cfg.grid.cfl * h / vmax;
  const int steps = static_cast<int>(std::ceil(cfg.grid.t_end / dt_bound - 1e-12));
  const double dt = cfg.grid.t_end / steps;  // <= dt_bound, lands on t_end
  if (dt > dt_bound * (1.0 + 1e-12)) throw numeric_error("simulate: CFL bound violated");

  StateSnapshot s = StateSnapshot::zero(nx);
  for (int j = 0; j <= nx; ++j) {
    const double x = static_cast<double>(j) / nx;
    for (int c = 0; c < 3; ++c)
      s.w[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] =
          cfg.init.w[static_cast<std::size_t>(c)].eval(x);
    s.z[static_cast<std::size_t>(j)] = cfg.init.z.eval(x);
  }
  s.X = cfg.init.X0;
  s.mode = mode_at(path, 0.0);

  std::optional<BoundaryRow> row;
  if (ctl.kind == Controller::Kind::Kernels) row = boundary_row(*ctl.grid, nx);

  Trajectory out;
  out.dt = dt;
  const int stride = std::max(1, (steps + max_snapshots - 1) / max_snapshots);

  double last_u = 0.0;
  auto record = [&](int step) {
    out.times.push_back(step * dt);
    out.p_series.push_back(state_p(s));
    out.u_series.push_back(last_u);
    out.mode_series.push_back(s.mode);
    out.X_series.push_back(s.X);
    out.snapshots.push_back(s);
  };

  StateSnapshot next = s;
  for (int step = 0; step < steps; ++step) {
    const double t = step * dt;
    s.t = t;
    s.mode = mode_at(path, t);
    if (step % stride == 0) record(step);
    const ModeParams& mp = cfg.markov.modes[static_cast<std::size_t>(s.mode)];

    // interior transport + explicit coupling
    for (int j = 1; j <= nx; ++j) {
      const double zj = s.z[static_cast<std::size_t>(j)];
      for (int c = 0; c < 3; ++c) {
        const auto& wc = s.w[static_cast<std::size_t>(c)];
        double src = mp.sigma_pm(c, 0) * zj;
        for (int m = 0; m < 3; ++m)
          src += mp.sigma_pp(c, m) * s.w[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)];
        next.w[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] =
            wc[static_cast<std::size_t>(j)] -
            dt * mp.lambda_plus[static_cast<std::size_t>(c)] / h *
                (wc[static_cast<std::size_t>(j)] - wc[static_cast<std::size_t>(j - 1)]) +
            dt * src;
      }
    }
    for (int j = 0; j < nx; ++j) {
      double src = mp.sigma_mm * s.z[static_cast<std::size_t>(j)];
      for (int m = 0; m < 3; ++m)
        src += mp.sigma_mp(0, m) * s.w[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)];
      next.z[static_cast<std::size_t>(j)] =
          s.z[static_cast<std::size_t>(j)] +
          dt * mp.lambda_minus / h *
              (s.z[static_cast<std::size_t>(j + 1)] - s.z[static_cast<std::size_t>(j)]) +
          dt * src;
    }

    // ODE state by RK4 with z(0) frozen at the step start
    {
      const double z0 = s.z[0];
      auto f = [&](const Vec2& X) {
        Vec2 d;
        d(0, 0) = cfg.ode.A(0, 0) * X(0, 0) + cfg.ode.A(0, 1) * X(1, 0) + cfg.ode.B(0, 0) * z0;
        d(1, 0) = cfg.ode.A(1, 0) * X(0, 0) + cfg.ode.A(1, 1) * X(1, 0) + cfg.ode.B(1, 0) * z0;
        return d;
      };
      const Vec2 k1 = f(s.X);
      const Vec2 k2 = f(s.X + k1 * (0.5 * dt));
      const Vec2 k3 = f(s.X + k2 * (0.5 * dt));
      const Vec2 k4 = f(s.X + k3 * dt);
      next.X = s.X + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }

    // boundary closure: w(0) from the post-update z(0) and X, then z(1)
    for (int c = 0; c < 3; ++c)
      next.w[static_cast<std::size_t>(c)][0] =
          mp.Q(c, 0) * next.z[0] +
          cfg.ode.C(c, 0) * next.X(0, 0) + cfg.ode.C(c, 1) * next.X(1, 0);

    const std::size_t pidx =
        ctl.reflection == ReflectionPoint::X0 ? 0 : static_cast<std::size_t>(nx);
    double refl = 0.0;
    for (int c = 0; c < 3; ++c) refl += mp.R(0, c) * next.w[static_cast<std::size_t>(c)][pidx];

    if (ctl.kind == Controller::Kind::Zero) {
      next.z[static_cast<std::size_t>(nx)] = refl;
      last_u = 0.0;
    } else {
      // z(1) = int K0(1,.) w + int N0(1,.) z + gamma(1) X with the trapezoid
      // endpoint solved implicitly; then U = z(1) - R w(p).
      double rest = row->gamma[0] * next.X(0, 0) + row->gamma[1] * next.X(1, 0);
      for (int j = 0; j <= nx; ++j) {
        const double wgt = (j == 0 || j == nx) ? 0.5 * h : h;
        double integrand = 0.0;
        for (int c = 0; c < 3; ++c)
          integrand += row->K[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] *
                       next.w[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
        if (j < nx) integrand += row->N[static_cast<std::size_t>(j)] * next.z[static_cast<std::size_t>(j)];
        rest += wgt * integrand;
      }
      const double own = 0.5 * h * row->N[static_cast<std::size_t>(nx)];
      if (std::abs(1.0 - own) < 1e-14)
        throw numeric_error("simulate: singular boundary closure");
      const double z1 = rest / (1.0 - own);
      next.z[static_cast<std::size_t>(nx)] = z1;
      last_u = z1 - refl;

      next.nx = nx;
      next.t = t + dt;
      next.mode = s.mode;
      const double nrm = state_norm(next);
      if (nrm > 0.0) {
        const double rho1 = boundary_rho(next, *ctl.grid);
        out.max_rho1_ratio = std::max(out.max_rho1_ratio, std::abs(rho1) / nrm);
      }
    }

    std::swap(s, next);
    s.t = t + dt;
    if (sup_abs(s) > kBlowupGuard) {
      out.blew_up = true;
      s.mode = mode_at(path, std::min(s.t, path.horizon));
      record(step + 1);
      return out;
    }
  }
  s.mode = mode_at(path, cfg.grid.t_end);
  record(steps);
  return out;
}

EnsembleResult run_ensemble(const ScenarioConfig& cfg, const Controller& ctl, int n_paths,
                            std::uint64_t seed, int max_snapshots) {
  if (n_paths < 1) throw validation_error("run_ensemble: n_paths >= 1 required");
  std::uint64_t state = seed;
  std::vector<std::uint64_t> path_seeds(static_cast<std::size_t>(n_paths));
  for (auto& v : path_seeds) v = splitmix64(state);

  auto run_one = [&](std::uint64_t s) {
    const MarkovPath path = sample_path(cfg.markov, cfg.grid.t_end, s);
    return simulate(cfg, path, ctl, max_snapshots);
  };

  std::vector<std::future<Trajectory>> futs;
  futs.reserve(path_seeds.size());
  for (std::uint64_t s : path_seeds)
    futs.push_back(std::async(std::launch::async, run_one, s));

  EnsembleResult res;
  res.trajectories.reserve(path_seeds.size());
  for (auto& fut : futs) res.trajectories.push_back(fut.get());

  for (const auto& tr : res.trajectories) {
    if (tr.blew_up) continue;
    if (res.times.empty()) {
      res.times = tr.times;
      res.mean_p.assign(tr.p_series.size(), 0.0);
    }
    for (std::size_t i = 0; i < tr.p_series.size() && i < res.mean_p.size(); ++i)
      res.mean_p[i] += tr.p_series[i];
    ++res.completed;
  }
  if (res.completed > 0)
    for (double& v : res.mean_p) v /= res.completed;
  return res;
}

}  // namespace bkno
