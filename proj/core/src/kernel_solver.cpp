#include "bkno/kernel_solver.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bkno/errors.hpp"
#include "json.hpp"

namespace bkno {
namespace {

using Json = nlohmann::json;

std::array<double, 3> diagonal_values(const ModeParams& p) {
  // K0(x,x)(Lam- I3 + Lam+) = -Sig-+, componentwise since Lam+ is diagonal
  std::array<double, 3> d{};
  for (int i = 0; i < 3; ++i) d[i] = -p.sigma_mp(0, i) / (p.lambda_minus + p.lambda_plus[i]);
  return d;
}

// Linear interpolation in xi within lattice column a (nodes b = 0..a).
template <typename Field>
auto column_interp(const Field& f, const TriMesh& mesh, int a, double xi) {
  const double fb = std::clamp(xi / mesh.h(), 0.0, static_cast<double>(a));
  const int b0 = std::min(static_cast<int>(fb), a - 1 >= 0 ? a - 1 : 0);
  const double t = a == 0 ? 0.0 : fb - b0;
  const auto& lo = f[static_cast<std::size_t>(mesh.index(a, b0))];
  const auto& hi = f[static_cast<std::size_t>(mesh.index(a, std::min(b0 + 1, a)))];
  if constexpr (std::is_same_v<std::decay_t<decltype(lo)>, double>) {
    return lo + t * (hi - lo);
  } else {
    std::decay_t<decltype(lo)> out;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = lo[i] + t * (hi[i] - lo[i]);
    return out;
  }
}

// Linear interpolation along the diagonal nodes (j, j).
template <typename Field>
auto diagonal_interp(const Field& f, const TriMesh& mesh, double x) {
  const double fa = std::clamp(x / mesh.h(), 0.0, static_cast<double>(mesh.n));
  const int a0 = std::min(static_cast<int>(fa), mesh.n - 1);
  const double t = fa - a0;
  const auto& lo = f[static_cast<std::size_t>(mesh.index(a0, a0))];
  const auto& hi = f[static_cast<std::size_t>(mesh.index(a0 + 1, a0 + 1))];
  if constexpr (std::is_same_v<std::decay_t<decltype(lo)>, double>) {
    return lo + t * (hi - lo);
  } else {
    std::decay_t<decltype(lo)> out;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = lo[i] + t * (hi[i] - lo[i]);
    return out;
  }
}

struct SweepState {
  std::vector<std::array<double, 3>> K;
  std::vector<double> N;
  std::vector<std::array<double, 2>> gamma;
};

}  // namespace

std::array<double, 2> KernelGrid::gamma_at(double x) const {
  const double fa = std::clamp(x * mesh.n, 0.0, static_cast<double>(mesh.n));
  const int a0 = std::min(static_cast<int>(fa), mesh.n - 1);
  const double t = fa - a0;
  return {gamma[a0][0] + t * (gamma[a0 + 1][0] - gamma[a0][0]),
          gamma[a0][1] + t * (gamma[a0 + 1][1] - gamma[a0][1])};
}

KernelEval KernelGrid::evaluate(double x, double xi) const {
  if (xi > x + 1e-12 || xi < -1e-12 || x > 1.0 + 1e-12)
    throw std::domain_error("KernelGrid::evaluate: query outside the triangle");
  x = std::clamp(x, 0.0, 1.0);
  xi = std::clamp(xi, 0.0, x);

  KernelEval out;
  const auto g = gamma_at(x);
  out.gamma(0, 0) = g[0];
  out.gamma(0, 1) = g[1];

  const int n = mesh.n;
  if (x - xi < 1e-14) {  // diagonal precedence
    const auto k = diagonal_interp(K, mesh, x);
    for (int i = 0; i < 3; ++i) out.K(0, i) = k[i];
    out.N = diagonal_interp(N, mesh, x);
    return out;
  }

  const double fa = x * n, fb = xi * n;
  const int a0 = std::min(static_cast<int>(fa), n - 1);
  int b0 = std::min(static_cast<int>(fb), a0 - 1 >= 0 ? a0 : 0);
  if (b0 > a0) b0 = a0;
  const double tx = fa - a0, tb = fb - b0;

  auto pick = [&](int a, int b) { return static_cast<std::size_t>(mesh.index(a, b)); };
  if (b0 >= a0) {
    // diagonal cell: triangle (a0,b0) - (a0+1,b0) - (a0+1,b0+1)
    const std::size_t i00 = pick(a0, b0), i10 = pick(a0 + 1, b0), i11 = pick(a0 + 1, b0 + 1);
    const double w00 = 1.0 - tx, w10 = tx - tb, w11 = tb;
    for (int i = 0; i < 3; ++i)
      out.K(0, i) = w00 * K[i00][i] + w10 * K[i10][i] + w11 * K[i11][i];
    out.N = w00 * N[i00] + w10 * N[i10] + w11 * N[i11];
    return out;
  }
  const std::size_t i00 = pick(a0, b0), i10 = pick(a0 + 1, b0), i01 = pick(a0, b0 + 1),
                    i11 = pick(a0 + 1, b0 + 1);
  const double w00 = (1.0 - tx) * (1.0 - tb), w10 = tx * (1.0 - tb), w01 = (1.0 - tx) * tb,
               w11 = tx * tb;
  for (int i = 0; i < 3; ++i)
    out.K(0, i) = w00 * K[i00][i] + w10 * K[i10][i] + w01 * K[i01][i] + w11 * K[i11][i];
  out.N = w00 * N[i00] + w10 * N[i10] + w01 * N[i01] + w11 * N[i11];
  return out;
}

double KernelGrid::sup_norm() const {
  double m = 0.0;
  for (const auto& k : K)
    for (double v : k) m = std::max(m, std::abs(v));
  for (double v : N) m = std::max(m, std::abs(v));
  for (const auto& g : gamma)
    for (double v : g) m = std::max(m, std::abs(v));
  return m;
}

KernelGrid solve_kernels(const ModeParams& nominal, const OdeMatrices& ode, int n,
                         const SolveOptions& opts) {
  if (n < 4) throw std::invalid_argument("solve_kernels: n >= 4 required");
  const TriMesh mesh{n};
  const double h = mesh.h();
  const double lam_m = nominal.lambda_minus;
  const auto kdiag = diagonal_values(nominal);
  const std::size_t nodes = static_cast<std::size_t>(mesh.node_count());

  // Sig++ - Sig-- I3, used as the K-equation zero-order source
  Mat3 sig_k = nominal.sigma_pp;
  for (int i = 0; i < 3; ++i) sig_k(i, i) -= nominal.sigma_mm;

  // gamma ODE: Lam- gamma' = gamma (A - Sig-- I2) + K0(x,0) Lam+ C.
  // (The K0 Lam+ C sign is fixed by re-deriving the target-system X balance;
  // it is what makes the transformed rho-equation source-free.)
  Mat2 a_eff = ode.A;
  a_eff(0, 0) -= nominal.sigma_mm;
  a_eff(1, 1) -= nominal.sigma_mm;

  SweepState prev, cur;
  prev.K.assign(nodes, {});
  prev.N.assign(nodes, 0.0);
  prev.gamma.assign(static_cast<std::size_t>(n + 1), {ode.K(0, 0), ode.K(0, 1)});
  for (int a = 0; a <= n; ++a) prev.K[static_cast<std::size_t>(mesh.index(a, a))] = kdiag;
  cur = prev;

  KernelGrid grid;
  grid.mesh = mesh;
  grid.nominal = nominal;
  grid.ode = ode;
  grid.gain = ode.K;

  auto source_k = [&](const SweepState& s, double x, double xi, bool on_diagonal, int a_col,
                      int comp) {
    // N0 Sig-+ + K0 (Sig++ - Sig-- I3), component `comp`, from the previous sweep
    std::array<double, 3> kv;
    double nv;
    if (on_diagonal) {
      kv = kdiag;
      nv = diagonal_interp(s.N, mesh, x);
    } else {
      kv = column_interp(s.K, mesh, a_col, xi);
      nv = column_interp(s.N, mesh, a_col, xi);
    }
    double acc = nv * nominal.sigma_mp(0, comp);
    for (int m = 0; m < 3; ++m) acc += kv[m] * sig_k(m, comp);
    return acc;
  };

  auto gamma_rhs = [&](double x, const std::array<double, 2>& g,
                       const std::vector<std::array<double, 3>>& kfield) {
    std::array<double, 3> k0;
    // K0(x, 0): linear interpolation along the xi = 0 lattice edge
    const double fa = std::clamp(x / h, 0.0, static_cast<double>(n));
    const int a0 = std::min(static_cast<int>(fa), n - 1);
    const double t = fa - a0;
    for (int i = 0; i < 3; ++i) {
      const double lo = kfield[static_cast<std::size_t>(mesh.index(a0, 0))][i];
      const double hi = kfield[static_cast<std::size_t>(mesh.index(a0 + 1, 0))][i];
      k0[i] = lo + t * (hi - lo);
    }
    std::array<double, 2> out{};
    for (int c = 0; c < 2; ++c) {
      double acc = g[0] * a_eff(0, c) + g[1] * a_eff(1, c);
      for (int i = 0; i < 3; ++i) acc += k0[i] * nominal.lambda_plus[i] * ode.C(i, c);
      out[c] = acc / lam_m;
    }
    return out;
  };

  int sweep = 0;
  for (; sweep < opts.max_sweeps; ++sweep) {
    // (a) K0: one upwind step per node along d xi/dx = -lambda_i / Lam-,
    //     transport from the already-updated previous column, sources frozen
    //     at the previous sweep.
    for (int a = 1; a <= n; ++a) {
      const double xa = a * h;
      for (int b = 0; b < a; ++b) {
        const double xib = b * h;
        auto& knode = cur.K[static_cast<std::size_t>(mesh.index(a, b))];
        for (int i = 0; i < 3; ++i) {
          const double slope = nominal.lambda_plus[i] / lam_m;
          const double xi_up = xib + slope * h;
          const double x_up = xa - h;
          double base, step, sx, sxi;
          bool diag_src = false;
          if (xi_up <= x_up) {
            std::array<double, 3> kcol = column_interp(cur.K, mesh, a - 1, xi_up);
            base = kcol[i];
            step = h;
            sx = x_up;
            sxi = xi_up;
          } else {
            const double foot = (xib + slope * xa) / (1.0 + slope);
            base = kdiag[i];
            step = xa - foot;
            sx = foot;
            sxi = foot;
            diag_src = true;
          }
          knode[i] = base + step * source_k(prev, sx, sxi, diag_src, a - 1, i) / lam_m;
        }
      }
      cur.K[static_cast<std::size_t>(mesh.index(a, a))] = kdiag;
    }

    // (b) gamma: RK4 in x from gamma(0) = K with the current K0(x,0)
    cur.gamma[0] = {ode.K(0, 0), ode.K(0, 1)};
    for (int a = 0; a < n; ++a) {
      const double xa = a * h;
      const auto& g = cur.gamma[static_cast<std::size_t>(a)];
      auto k1 = gamma_rhs(xa, g, cur.K);
      std::array<double, 2> tmp{g[0] + 0.5 * h * k1[0], g[1] + 0.5 * h * k1[1]};
      auto k2 = gamma_rhs(xa + 0.5 * h, tmp, cur.K);
      tmp = {g[0] + 0.5 * h * k2[0], g[1] + 0.5 * h * k2[1]};
      auto k3 = gamma_rhs(xa + 0.5 * h, tmp, cur.K);
      tmp = {g[0] + h * k3[0], g[1] + h * k3[1]};
      auto k4 = gamma_rhs(xa + h, tmp, cur.K);
      cur.gamma[static_cast<std::size_t>(a + 1)] = {
          g[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
          g[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])};
    }

    // (c) N0: exact-characteristic march along d xi/dx = +1 from the xi = 0
    //     datum Lam- N0(x,0) = K0(x,0) Lam+ Q0 + gamma(x) B
    auto datum = [&](int a) {
      const auto& k0 = cur.K[static_cast<std::size_t>(mesh.index(a, 0))];
      const auto& g = cur.gamma[static_cast<std::size_t>(a)];
      double acc = g[0] * ode.B(0, 0) + g[1] * ode.B(1, 0);
      for (int i = 0; i < 3; ++i) acc += k0[i] * nominal.lambda_plus[i] * nominal.Q(i, 0);
      return acc / lam_m;
    };
    cur.N[0] = datum(0);
    for (int a = 1; a <= n; ++a) {
      cur.N[static_cast<std::size_t>(mesh.index(a, 0))] = datum(a);
      for (int b = 1; b <= a; ++b) {
        const auto& kup = cur.K[static_cast<std::size_t>(mesh.index(a - 1, b - 1))];
        double src = 0.0;
        for (int i = 0; i < 3; ++i) src += kup[i] * nominal.sigma_pm(i, 0);
        cur.N[static_cast<std::size_t>(mesh.index(a, b))] =
            cur.N[static_cast<std::size_t>(mesh.index(a - 1, b - 1))] + h * src / lam_m;
      }
    }

    // convergence / divergence bookkeeping
    double delta = 0.0, sup = 0.0;
    for (std::size_t j = 0; j < nodes; ++j) {
      for (int i = 0; i < 3; ++i) {
        delta = std::max(delta, std::abs(cur.K[j][i] - prev.K[j][i]));
        sup = std::max(sup, std::abs(cur.K[j][i]));
      }
      delta = std::max(delta, std::abs(cur.N[j] - prev.N[j]));
      sup = std::max(sup, std::abs(cur.N[j]));
    }
    for (std::size_t j = 0; j < cur.gamma.size(); ++j)
      for (int c = 0; c < 2; ++c) {
        delta = std::max(delta, std::abs(cur.gamma[j][c] - prev.gamma[j][c]));
        sup = std::max(sup, std::abs(cur.gamma[j][c]));
      }
    grid.sweep_deltas.push_back(delta);
    if (sup > opts.value_cap || !std::isfinite(sup))
      throw numeric_error("solve_kernels: value cap exceeded after sweep " +
                          std::to_string(sweep + 1) + " (sup " + std::to_string(sup) + ")");
    prev = cur;
    if (delta < opts.tol) break;
  }
  if (sweep == opts.max_sweeps)
    throw numeric_error("solve_kernels: no convergence after " + std::to_string(opts.max_sweeps) +
                        " sweeps (last delta " + std::to_string(grid.sweep_deltas.back()) + ")");

  grid.K = std::move(cur.K);
  grid.N = std::move(cur.N);
  grid.gamma = std::move(cur.gamma);
  return grid;
}

ResidualReport kernel_residual(const KernelGrid& grid) {
  const auto& p = grid.nominal;
  const TriMesh mesh = grid.mesh;
  const int n = mesh.n;
  const double h = mesh.h();
  const double lam_m = p.lambda_minus;
  ResidualReport rep;

  Mat3 sig_k = p.sigma_pp;
  for (int i = 0; i < 3; ++i) sig_k(i, i) -= p.sigma_mm;

  const OdeMatrices& ode = grid.ode;

  for (int a = 0; a <= n; ++a) {
    const auto& kd = grid.K[static_cast<std::size_t>(mesh.index(a, a))];
    for (int i = 0; i < 3; ++i)
      rep.bc_diag = std::max(
          rep.bc_diag, std::abs(kd[i] * (lam_m + p.lambda_plus[i]) + p.sigma_mp(0, i)));

    const auto& k0 = grid.K[static_cast<std::size_t>(mesh.index(a, 0))];
    const auto& g = grid.gamma[static_cast<std::size_t>(a)];
    double resid = lam_m * grid.N[static_cast<std::size_t>(mesh.index(a, 0))] -
                   (g[0] * ode.B(0, 0) + g[1] * ode.B(1, 0));
    for (int i = 0; i < 3; ++i) resid -= k0[i] * p.lambda_plus[i] * p.Q(i, 0);
    rep.bc_xi0 = std::max(rep.bc_xi0, std::abs(resid));
  }

  // gamma ODE: Lam- gamma' - gamma (A - Sig-- I2) - K0(x,0) Lam+ C, one-sided
  {
    Mat2 a_eff = ode.A;
    a_eff(0, 0) -= p.sigma_mm;
    a_eff(1, 1) -= p.sigma_mm;
    for (int a = 1; a <= n; ++a) {
      const auto& g = grid.gamma[static_cast<std::size_t>(a)];
      const auto& gm = grid.gamma[static_cast<std::size_t>(a - 1)];
      const auto& k0 = grid.K[static_cast<std::size_t>(mesh.index(a, 0))];
      for (int c = 0; c < 2; ++c) {
        double resid = lam_m * (g[c] - gm[c]) / h - (g[0] * a_eff(0, c) + g[1] * a_eff(1, c));
        for (int i = 0; i < 3; ++i) resid -= k0[i] * p.lambda_plus[i] * ode.C(i, c);
        rep.ode_gamma = std::max(rep.ode_gamma, std::abs(resid));
      }
    }
  }

  // interior transport residuals via backward differences at nodes 1 <= b < a
  for (int a = 1; a <= n; ++a) {
    for (int b = 1; b < a; ++b) {
      const std::size_t c = static_cast<std::size_t>(mesh.index(a, b));
      const std::size_t cx = static_cast<std::size_t>(mesh.index(a - 1, b));
      const std::size_t cxi = static_cast<std::size_t>(mesh.index(a, b - 1));
      const auto& kc = grid.K[c];
      const double nc = grid.N[c];
      for (int i = 0; i < 3; ++i) {
        double resid = lam_m * (kc[i] - grid.K[cx][i]) / h -
                       p.lambda_plus[i] * (kc[i] - grid.K[cxi][i]) / h -
                       nc * p.sigma_mp(0, i);
        for (int m = 0; m < 3; ++m) resid -= kc[m] * sig_k(m, i);
        rep.pde_K = std::max(rep.pde_K, std::abs(resid));
      }
      double resid_n = lam_m * (nc - grid.N[cx]) / h + lam_m * (nc - grid.N[cxi]) / h;
      for (int i = 0; i < 3; ++i) resid_n -= kc[i] * p.sigma_pm(i, 0);
      rep.pde_N = std::max(rep.pde_N, std::abs(resid_n));
    }
  }
  return rep;
}

std::string kernel_grid_to_json(const KernelGrid& grid, const ResidualReport* residuals) {
  Json j;
  j["n"] = grid.mesh.n;
  j["nominal"] = {{"lambda_plus", grid.nominal.lambda_plus},
                  {"lambda_minus", grid.nominal.lambda_minus},
                  {"sigma_pp", grid.nominal.sigma_pp.a},
                  {"sigma_pm", grid.nominal.sigma_pm.a},
                  {"sigma_mp", grid.nominal.sigma_mp.a},
                  {"sigma_mm", grid.nominal.sigma_mm},
                  {"Q", grid.nominal.Q.a},
                  {"R", grid.nominal.R.a}};
  j["ode"] = {{"A", grid.ode.A.a},
              {"B", grid.ode.B.a},
              {"C", grid.ode.C.a},
              {"K", grid.ode.K.a}};
  j["gain"] = grid.gain.a;
  for (int i = 0; i < 3; ++i) {
    std::vector<double> col(grid.K.size());
    for (std::size_t k = 0; k < grid.K.size(); ++k) col[k] = grid.K[k][static_cast<std::size_t>(i)];
    j["K"].push_back(col);
  }
  j["N"] = grid.N;
  for (int c = 0; c < 2; ++c) {
    std::vector<double> col(grid.gamma.size());
    for (std::size_t k = 0; k < grid.gamma.size(); ++k)
      col[k] = grid.gamma[k][static_cast<std::size_t>(c)];
    j["gamma"].push_back(col);
  }
  j["predicted"] = grid.predicted;
  if (residuals)
    j["residuals"] = {{"bc_diag", residuals->bc_diag},
                      {"bc_xi0", residuals->bc_xi0},
                      {"ode_gamma", residuals->ode_gamma},
                      {"pde_K", residuals->pde_K},
                      {"pde_N", residuals->pde_N}};
  return j.dump();
}

KernelGrid kernel_grid_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw parse_error(std::string("kernel grid: ") + e.what());
  }
  try {
    KernelGrid g;
    g.mesh.n = j.at("n").get<int>();
    const std::size_t nodes = static_cast<std::size_t>(g.mesh.node_count());
    const auto& nm = j.at("nominal");
    nm.at("lambda_plus").get_to(g.nominal.lambda_plus);
    g.nominal.lambda_minus = nm.at("lambda_minus").get<double>();
    nm.at("sigma_pp").get_to(g.nominal.sigma_pp.a);
    nm.at("sigma_pm").get_to(g.nominal.sigma_pm.a);
    nm.at("sigma_mp").get_to(g.nominal.sigma_mp.a);
    g.nominal.sigma_mm = nm.at("sigma_mm").get<double>();
    nm.at("Q").get_to(g.nominal.Q.a);
    nm.at("R").get_to(g.nominal.R.a);
    const auto& od = j.at("ode");
    od.at("A").get_to(g.ode.A.a);
    od.at("B").get_to(g.ode.B.a);
    od.at("C").get_to(g.ode.C.a);
    od.at("K").get_to(g.ode.K.a);
    j.at("gain").get_to(g.gain.a);
    const auto& K = j.at("K");
    if (K.size() != 3) throw parse_error("kernel grid: K must hold 3 components");
    g.K.assign(nodes, {});
    for (int i = 0; i < 3; ++i) {
      const auto col = K.at(static_cast<std::size_t>(i)).get<std::vector<double>>();
      if (col.size() != nodes) throw parse_error("kernel grid: K length mismatch");
      for (std::size_t k = 0; k < nodes; ++k) g.K[k][static_cast<std::size_t>(i)] = col[k];
    }
    j.at("N").get_to(g.N);
    if (g.N.size() != nodes) throw parse_error("kernel grid: N length mismatch");
    const auto& G = j.at("gamma");
    if (G.size() != 2) throw parse_error("kernel grid: gamma must hold 2 components");
    g.gamma.assign(static_cast<std::size_t>(g.mesh.n + 1), {});
    for (int c = 0; c < 2; ++c) {
      const auto col = G.at(static_cast<std::size_t>(c)).get<std::vector<double>>();
      if (col.size() != g.gamma.size()) throw parse_error("kernel grid: gamma length mismatch");
      for (std::size_t k = 0; k < col.size(); ++k) g.gamma[k][static_cast<std::size_t>(c)] = col[k];
    }
    g.predicted = j.value("predicted", false);
    return g;
  } catch (const Json::exception& e) {
    throw parse_error(std::string("kernel grid: ") + e.what());
  }
}

}  // namespace bkno
