#include "bkno/metrics.hpp"

#include <cmath>

#include "bkno/errors.hpp"

namespace bkno {

Mat2 solve_lyapunov(const Mat2& M, const Mat2& Qmat) {
  const auto hz = hurwitz_check(M);
  if (!hz.hurwitz) throw validation_error("solve_lyapunov: M not Hurwitz");

  // P M + M^T P = -Q reduced to the symmetric unknowns (p11, p12, p22):
  //   2 m11 p11 + 2 m21 p12              = -q11
  //   m12 p11 + (m11 + m22) p12 + m21 p22 = -q12
  //            2 m12 p12 + 2 m22 p22      = -q22
  const double m11 = M(0, 0), m12 = M(0, 1), m21 = M(1, 0), m22 = M(1, 1);
  double A[3][3] = {{2 * m11, 2 * m21, 0.0},
                    {m12, m11 + m22, m21},
                    {0.0, 2 * m12, 2 * m22}};
  double b[3] = {-Qmat(0, 0), -Qmat(0, 1), -Qmat(1, 1)};

  // Gaussian elimination with partial pivoting
  int perm[3] = {0, 1, 2};
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::abs(A[perm[r]][col]) > std::abs(A[perm[piv]][col])) piv = r;
    std::swap(perm[col], perm[piv]);
    const double d = A[perm[col]][col];
    if (std::abs(d) < 1e-14) throw numeric_error("solve_lyapunov: singular system");
    for (int r = col + 1; r < 3; ++r) {
      const double f = A[perm[r]][col] / d;
      for (int c = col; c < 3; ++c) A[perm[r]][c] -= f * A[perm[col]][c];
      b[perm[r]] -= f * b[perm[col]];
    }
  }
  double x[3];
  for (int row = 2; row >= 0; --row) {
    double acc = b[perm[row]];
    for (int c = row + 1; c < 3; ++c) acc -= A[perm[row]][c] * x[c];
    x[row] = acc / A[perm[row]][row];
  }

  Mat2 P;
  P(0, 0) = x[0];
  P(0, 1) = P(1, 0) = x[1];
  P(1, 1) = x[2];
  return P;
}

double lyapunov_value(const StateSnapshot& s, const KernelGrid& k, const ModeParams& mode,
                      const LyapunovWeights& wts) {
  if (!(wts.nu > 0.0) || !(wts.a > 0.0))
    throw validation_error("lyapunov_value: nu and a must be positive");
  for (double l : mode.lambda_plus)
    if (!(l > 0.0)) throw validation_error("lyapunov_value: nonpositive transport speed");
  if (!(mode.lambda_minus > 0.0))
    throw validation_error("lyapunov_value: nonpositive transport speed");

  const TransformedSnapshot ts = apply_transform(s, k);
  const int nx = s.nx;
  const double h = s.h();
  double integral = 0.0;
  for (int j = 0; j <= nx; ++j) {
    const double x = s.x(j);
    double node = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double lam = mode.lambda_plus[static_cast<std::size_t>(c)];
      const double th = ts.theta[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
      node += std::exp(-wts.nu * x / lam) / lam * th * th;
    }
    const double rho = ts.rho[static_cast<std::size_t>(j)];
    node += wts.a * std::exp(wts.nu * x / mode.lambda_minus) / mode.lambda_minus * rho * rho;
    integral += (j == 0 || j == nx ? 0.5 : 1.0) * h * node;
  }
  const double x0 = s.X(0, 0), x1 = s.X(1, 0);
  return integral + wts.P(0, 0) * x0 * x0 + 2.0 * wts.P(0, 1) * x0 * x1 + wts.P(1, 1) * x1 * x1;
}

DecayFit fit_decay(const std::vector<double>& times, const std::vector<double>& values,
                   double t_lo, double t_hi) {
  if (times.size() != values.size())
    throw validation_error("fit_decay: times/values length mismatch");
  std::vector<double> t, y;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < t_lo || times[i] > t_hi) continue;
    if (!(values[i] > 0.0))
      throw validation_error("fit_decay: nonpositive value inside the fit window");
    t.push_back(times[i]);
    y.push_back(std::log(values[i]));
  }
  if (t.size() < 3) throw validation_error("fit_decay: fewer than 3 samples in window");

  const double n = static_cast<double>(t.size());
  double st = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    st += t[i];
    sy += y[i];
  }
  const double mt = st / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    sxx += (t[i] - mt) * (t[i] - mt);
    sxy += (t[i] - mt) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw validation_error("fit_decay: degenerate time window");
  const double slope = sxy / sxx;
  DecayFit fit;
  fit.zeta = -slope;
  fit.sigma = std::exp(my - slope * mt);
  double ssres = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double r = y[i] - (my + slope * (t[i] - mt));
    ssres += r * r;
  }
  fit.r2 = syy == 0.0 ? 1.0 : 1.0 - ssres / syy;
  return fit;
}

}  // namespace bkno
