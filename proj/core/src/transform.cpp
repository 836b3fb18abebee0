#include "bkno/transform.hpp"

#include <cmath>
#include <stdexcept>

#include "bkno/errors.hpp"

namespace bkno {
namespace {

// Trapezoid weight for node j of 0..m (m >= 1).
inline double trap_w(int j, int m, double h) { return (j == 0 || j == m) ? 0.5 * h : h; }

}  // namespace

StateSnapshot StateSnapshot::zero(int nx) {
  StateSnapshot s;
  s.nx = nx;
  for (auto& wc : s.w) wc.assign(static_cast<std::size_t>(nx + 1), 0.0);
  s.z.assign(static_cast<std::size_t>(nx + 1), 0.0);
  return s;
}

TransformedSnapshot apply_transform(const StateSnapshot& s, const KernelGrid& k) {
  const int nx = s.nx;
  const double h = s.h();
  TransformedSnapshot ts;
  ts.nx = nx;
  ts.theta = s.w;
  ts.X = s.X;
  ts.rho.assign(static_cast<std::size_t>(nx + 1), 0.0);
  for (int m = 0; m <= nx; ++m) {
    const double xm = s.x(m);
    const auto g = k.gamma_at(xm);
    double acc = s.z[static_cast<std::size_t>(m)] - (g[0] * s.X(0, 0) + g[1] * s.X(1, 0));
    for (int j = 0; j <= m && m >= 1; ++j) {
      const KernelEval kv = k.evaluate(xm, s.x(j));
      double integrand = kv.N * s.z[static_cast<std::size_t>(j)];
      for (int c = 0; c < 3; ++c)
        integrand += kv.K(0, c) * s.w[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
      acc -= trap_w(j, m, h) * integrand;
    }
    ts.rho[static_cast<std::size_t>(m)] = acc;
  }
  return ts;
}

StateSnapshot invert_transform(const TransformedSnapshot& ts, const KernelGrid& k) {
  const int nx = ts.nx;
  const double h = 1.0 / nx;
  StateSnapshot s = StateSnapshot::zero(nx);
  s.w = ts.theta;
  s.X = ts.X;

  auto substitute = [&](std::vector<double>& z) {
    for (int m = 0; m <= nx; ++m) {
      const double xm = static_cast<double>(m) / nx;
      const auto g = k.gamma_at(xm);
      double rhs = ts.rho[static_cast<std::size_t>(m)] + g[0] * ts.X(0, 0) + g[1] * ts.X(1, 0);
      double own = 0.0;  // coefficient of z[m] inside the quadrature
      for (int j = 0; j <= m && m >= 1; ++j) {
        const KernelEval kv = k.evaluate(xm, static_cast<double>(j) / nx);
        const double wgt = trap_w(j, m, h);
        for (int c = 0; c < 3; ++c)
          rhs += wgt * kv.K(0, c) * s.w[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
        if (j == m)
          own = wgt * kv.N;
        else
          rhs += wgt * kv.N * z[static_cast<std::size_t>(j)];
      }
      if (std::abs(1.0 - own) < 1e-14)
        throw numeric_error("invert_transform: singular own-node coefficient");
      z[static_cast<std::size_t>(m)] = rhs / (1.0 - own);
    }
  };

  substitute(s.z);
  for (int pass = 0; pass < 100; ++pass) {
    std::vector<double> next = s.z;
    substitute(next);
    double delta = 0.0;
    for (std::size_t i = 0; i < next.size(); ++i)
      delta = std::max(delta, std::abs(next[i] - s.z[i]));
    s.z = std::move(next);
    if (delta < 1e-12) return s;
  }
  throw numeric_error("invert_transform: no stationarity after 100 passes");
}

double control_input(const StateSnapshot& s, const KernelGrid& k, const Row3& R_used,
                     ReflectionPoint p) {
  const int nx = s.nx;
  const double h = s.h();
  const std::size_t pidx = p == ReflectionPoint::X0 ? 0 : static_cast<std::size_t>(nx);
  double u = 0.0;
  for (int c = 0; c < 3; ++c) u -= R_used(0, c) * s.w[static_cast<std::size_t>(c)][pidx];
  for (int j = 0; j <= nx; ++j) {
    const KernelEval kv = k.evaluate(1.0, s.x(j));
    double integrand = kv.N * s.z[static_cast<std::size_t>(j)];
    for (int c = 0; c < 3; ++c)
      integrand += kv.K(0, c) * s.w[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
    u += trap_w(j, nx, h) * integrand;
  }
  const auto g = k.gamma_at(1.0);
  u += g[0] * s.X(0, 0) + g[1] * s.X(1, 0);
  return u;
}

double boundary_rho(const StateSnapshot& s, const KernelGrid& k) {
  const int nx = s.nx;
  const double h = s.h();
  const auto g = k.gamma_at(1.0);
  double acc = s.z[static_cast<std::size_t>(nx)] - (g[0] * s.X(0, 0) + g[1] * s.X(1, 0));
  for (int j = 0; j <= nx; ++j) {
    const KernelEval kv = k.evaluate(1.0, s.x(j));
    double integrand = kv.N * s.z[static_cast<std::size_t>(j)];
    for (int c = 0; c < 3; ++c)
      integrand += kv.K(0, c) * s.w[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
    acc -= trap_w(j, nx, h) * integrand;
  }
  return acc;
}

}  // namespace bkno
