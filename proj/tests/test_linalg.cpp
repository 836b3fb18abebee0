#include "bkno/linalg.hpp"

#include <stdexcept>

#include "doctest.h"

using namespace bkno;

TEST_CASE("mat arithmetic") {
  Mat2 a;
  a(0, 0) = 1;
  a(0, 1) = 2;
  a(1, 0) = 3;
  a(1, 1) = 4;
  const Mat2 s = a + a;
  CHECK(s(1, 0) == 6);
  const Mat2 p = a * Mat2::identity();
  CHECK(p == a);
  CHECK((2.0 * a)(0, 1) == 4);
  CHECK((a * 2.0)(0, 1) == 4);
}

TEST_CASE("hurwitz: rotation matrix is not stable") {
  Mat2 a;
  a(0, 1) = 2;
  a(1, 0) = -2;
  const auto hz = hurwitz_check(a);
  CHECK_FALSE(hz.hurwitz);
  CHECK(hz.abscissa == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("hurwitz: closed-loop section values") {
  // A + B K with A=[[0,2],[-2,0]], B=[2,1], K=[-2,-1] has eigenvalues -4, -1
  Mat2 m;
  m(0, 0) = -4;
  m(0, 1) = 0;
  m(1, 0) = -4;
  m(1, 1) = -1;
  const auto hz = hurwitz_check(m);
  CHECK(hz.hurwitz);
  CHECK(hz.abscissa == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("hurwitz: complex pair abscissa") {
  // eigenvalues -0.5 +- 2i
  Mat2 m;
  m(0, 0) = -0.5;
  m(0, 1) = 2;
  m(1, 0) = -2;
  m(1, 1) = -0.5;
  const auto hz = hurwitz_check(m);
  CHECK(hz.hurwitz);
  CHECK(hz.abscissa == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("hurwitz: 3x3 via characteristic cubic") {
  // companion matrix of (s+1)(s+2)(s+3)
  const double m[9] = {0, 1, 0, 0, 0, 1, -6, -11, -6};
  const auto hz = hurwitz_check(std::span<const double>(m, 9), 3);
  CHECK(hz.hurwitz);
  CHECK(hz.abscissa == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("hurwitz: bad dimension throws") {
  const double m[1] = {1.0};
  const std::span<const double> sp(m, 1);
  CHECK_THROWS_AS(hurwitz_check(sp, 1), std::invalid_argument);
}
