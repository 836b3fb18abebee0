#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>

namespace bkno {

/// Fixed-size dense matrix, row-major. Small enough to live on the stack.
template <int R, int C>
struct Mat {
  std::array<double, static_cast<std::size_t>(R) * C> a{};

  static constexpr int rows = R;
  static constexpr int cols = C;

  double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * C + c]; }
  double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * C + c]; }

  friend Mat operator+(Mat x, const Mat& y) {
    for (std::size_t i = 0; i < x.a.size(); ++i) x.a[i] += y.a[i];
    return x;
  }
  friend Mat operator-(Mat x, const Mat& y) {
    for (std::size_t i = 0; i < x.a.size(); ++i) x.a[i] -= y.a[i];
    return x;
  }
  friend Mat operator*(double s, Mat x) {
    for (double& v : x.a) v *= s;
    return x;
  }
  friend Mat operator*(Mat x, double s) {
    for (double& v : x.a) v *= s;
    return x;
  }
  friend bool operator==(const Mat& x, const Mat& y) { return x.a == y.a; }

  static Mat identity()
    requires(R == C)
  {
    Mat m;
    for (int i = 0; i < R; ++i) m(i, i) = 1.0;
    return m;
  }
};

template <int R, int K, int C>
Mat<R, C> operator*(const Mat<R, K>& x, const Mat<K, C>& y) {
  Mat<R, C> out;
  for (int r = 0; r < R; ++r)
    for (int k = 0; k < K; ++k) {
      const double v = x(r, k);
      for (int c = 0; c < C; ++c) out(r, c) += v * y(k, c);
    }
  return out;
}

using Mat2 = Mat<2, 2>;
using Mat3 = Mat<3, 3>;
using Mat32 = Mat<3, 2>;
using Vec2 = Mat<2, 1>;
using Col3 = Mat<3, 1>;
using Row2 = Mat<1, 2>;
using Row3 = Mat<1, 3>;

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

template <int R, int C>
double max_abs(const Mat<R, C>& m) {
  return max_abs(std::span<const double>(m.a));
}

template <int R, int C>
bool all_finite(const Mat<R, C>& m) {
  for (double v : m.a)
    if (!std::isfinite(v)) return false;
  return true;
}

/// Matrix exponential by scaling-and-squaring on a 20-term Taylor series;
/// ample for the well-conditioned 2x2 / 3x3 blocks used here.
template <int N>
Mat<N, N> expm(const Mat<N, N>& m) {
  int k = 0;
  for (double s = max_abs(m); s > 0.5; s *= 0.5) ++k;
  const Mat<N, N> x = std::ldexp(1.0, -k) * m;
  Mat<N, N> term = Mat<N, N>::identity(), sum = Mat<N, N>::identity();
  for (int i = 1; i <= 20; ++i) {
    term = (1.0 / i) * (term * x);
    sum = sum + term;
  }
  for (int i = 0; i < k; ++i) sum = sum * sum;
  return sum;
}

struct HurwitzResult {
  bool hurwitz = false;
  double abscissa = 0.0;  // max real part of the spectrum
};

/// Spectral abscissa of an n×n matrix (row-major), n in {2,3,4}.
/// Closed-form characteristic roots for n<=3, QR iteration for n=4.
/// Throws std::invalid_argument on non-finite entries or unsupported n.
HurwitzResult hurwitz_check(std::span<const double> m, int n);

inline HurwitzResult hurwitz_check(const Mat2& m) {
  return hurwitz_check(std::span<const double>(m.a), 2);
}
inline HurwitzResult hurwitz_check(const Mat3& m) {
  return hurwitz_check(std::span<const double>(m.a), 3);
}

}  // namespace bkno
