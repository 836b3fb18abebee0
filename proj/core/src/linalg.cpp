#include "bkno/linalg.hpp"

#include <algorithm>
#include <complex>
#include <stdexcept>
#include <vector>

namespace bkno {
namespace {

// Max real part of the roots of x^2 + b x + c.
double quadratic_abscissa(double b, double c) {
  const double disc = b * b - 4.0 * c;
  if (disc >= 0.0) {
    const double s = std::sqrt(disc);
    return std::max((-b + s) / 2.0, (-b - s) / 2.0);
  }
  return -b / 2.0;  // complex pair, shared real part
}

double abscissa2(std::span<const double> m) {
  const double tr = m[0] + m[3];
  const double det = m[0] * m[3] - m[1] * m[2];
  return quadratic_abscissa(-tr, det);
}

// Real parts of the roots of x^3 + p2 x^2 + p1 x + p0 via the depressed cubic.
double cubic_abscissa(double p2, double p1, double p0) {
  // x = y - p2/3 -> y^3 + py + q = 0
  const double shift = p2 / 3.0;
  const double p = p1 - p2 * p2 / 3.0;
  const double q = 2.0 * p2 * p2 * p2 / 27.0 - p2 * p1 / 3.0 + p0;
  const double disc = q * q / 4.0 + p * p * p / 27.0;
  if (disc > 0.0) {
    // one real root, one complex pair
    const double s = std::sqrt(disc);
    const double u = std::cbrt(-q / 2.0 + s);
    const double v = std::cbrt(-q / 2.0 - s);
    const double y_real = u + v;
    const double pair_real = -y_real / 2.0;
    return std::max(y_real, pair_real) - shift;
  }
  // three real roots (trigonometric form)
  if (p >= 0.0) return -shift;  // p == 0, q == 0: triple root
  const double r = std::sqrt(-p * p * p / 27.0);
  const double phi = std::acos(std::clamp(-q / (2.0 * r), -1.0, 1.0));
  const double mag = 2.0 * std::sqrt(-p / 3.0);
  double best = -1e300;
  for (int k = 0; k < 3; ++k)
    best = std::max(best, mag * std::cos((phi + 2.0 * M_PI * k) / 3.0));
  return best - shift;
}

double abscissa3(std::span<const double> m) {
  auto at = [&](int r, int c) { return m[3 * r + c]; };
  const double tr = at(0, 0) + at(1, 1) + at(2, 2);
  const double c11 = at(1, 1) * at(2, 2) - at(1, 2) * at(2, 1);
  const double c22 = at(0, 0) * at(2, 2) - at(0, 2) * at(2, 0);
  const double c33 = at(0, 0) * at(1, 1) - at(0, 1) * at(1, 0);
  const double det = at(0, 0) * c11 - at(0, 1) * (at(1, 0) * at(2, 2) - at(1, 2) * at(2, 0)) +
                     at(0, 2) * (at(1, 0) * at(2, 1) - at(1, 1) * at(2, 0));
  // char poly: x^3 - tr x^2 + (sum principal minors) x - det
  return cubic_abscissa(-tr, c11 + c22 + c33, -det);
}

// Explicit QR iteration with deflation for the 4x4 fallback. Complex pairs
// settle into 2x2 diagonal blocks; real parts are read off the block spectrum.
double abscissa_qr(std::span<const double> m, int n) {
  std::vector<double> A(m.begin(), m.end());
  auto at = [&](int r, int c) -> double& { return A[static_cast<std::size_t>(r) * n + c]; };

  std::vector<double> Q(static_cast<std::size_t>(n) * n), R(static_cast<std::size_t>(n) * n);
  for (int iter = 0; iter < 500; ++iter) {
    // Wilkinson-style real shift from the trailing 2x2 (its closest real
    // eigenvalue approximation); zero when that block is a complex pair.
    const double a = at(n - 2, n - 2), b = at(n - 2, n - 1), c = at(n - 1, n - 2),
                 d = at(n - 1, n - 1);
    const double disc = (a - d) * (a - d) / 4.0 + b * c;
    double shift = 0.0;
    if (disc >= 0.0) {
      const double mid = (a + d) / 2.0, s = std::sqrt(disc);
      shift = std::abs(mid + s - d) < std::abs(mid - s - d) ? mid + s : mid - s;
    }
    for (int i = 0; i < n; ++i) at(i, i) -= shift;

    // Gram-Schmidt QR of the shifted matrix
    std::fill(R.begin(), R.end(), 0.0);
    for (int c2 = 0; c2 < n; ++c2) {
      for (int r2 = 0; r2 < n; ++r2) Q[static_cast<std::size_t>(r2) * n + c2] = at(r2, c2);
      for (int k = 0; k < c2; ++k) {
        double dot = 0.0;
        for (int r2 = 0; r2 < n; ++r2)
          dot += Q[static_cast<std::size_t>(r2) * n + k] * Q[static_cast<std::size_t>(r2) * n + c2];
        R[static_cast<std::size_t>(k) * n + c2] = dot;
        for (int r2 = 0; r2 < n; ++r2)
          Q[static_cast<std::size_t>(r2) * n + c2] -= dot * Q[static_cast<std::size_t>(r2) * n + k];
      }
      double nrm = 0.0;
      for (int r2 = 0; r2 < n; ++r2) {
        const double v = Q[static_cast<std::size_t>(r2) * n + c2];
        nrm += v * v;
      }
      nrm = std::sqrt(nrm);
      R[static_cast<std::size_t>(c2) * n + c2] = nrm;
      if (nrm > 0.0)
        for (int r2 = 0; r2 < n; ++r2) Q[static_cast<std::size_t>(r2) * n + c2] /= nrm;
    }
    // A <- R Q + shift I
    for (int r2 = 0; r2 < n; ++r2)
      for (int c2 = 0; c2 < n; ++c2) {
        double s = 0.0;
        for (int k = std::max(r2, 0); k < n; ++k)
          s += R[static_cast<std::size_t>(r2) * n + k] * Q[static_cast<std::size_t>(k) * n + c2];
        at(r2, c2) = s + (r2 == c2 ? shift : 0.0);
      }
  }

  // Read eigenvalue real parts from 1x1 / 2x2 diagonal blocks.
  double norm = 0.0;
  for (double v : A) norm = std::max(norm, std::abs(v));
  const double tol = 1e-9 * std::max(norm, 1.0);
  double best = -1e300;
  for (int i = 0; i < n;) {
    if (i + 1 < n && std::abs(at(i + 1, i)) > tol) {
      const double a = at(i, i), b = at(i, i + 1), c = at(i + 1, i), d = at(i + 1, i + 1);
      best = std::max(best, quadratic_abscissa(-(a + d), a * d - b * c));
      i += 2;
    } else {
      best = std::max(best, at(i, i));
      i += 1;
    }
  }
  return best;
}

}  // namespace

HurwitzResult hurwitz_check(std::span<const double> m, int n) {
  if (n < 2 || n > 4) throw std::invalid_argument("hurwitz_check: n must be in {2,3,4}");
  if (m.size() != static_cast<std::size_t>(n) * n)
    throw std::invalid_argument("hurwitz_check: matrix size does not match n");
  for (double v : m)
    if (!std::isfinite(v)) throw std::invalid_argument("hurwitz_check: non-finite entry");

  double abscissa = 0.0;
  switch (n) {
    case 2: abscissa = abscissa2(m); break;
    case 3: abscissa = abscissa3(m); break;
    default: abscissa = abscissa_qr(m, n); break;
  }
  return {abscissa < 0.0, abscissa};
}

}  // namespace bkno
