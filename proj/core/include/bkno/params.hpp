#pragma once

#include <array>
#include <string>
#include <vector>

#include "bkno/linalg.hpp"

namespace bkno {

/// Deterministic ODE-side matrices and the feedback gain K (= gamma(0)).
/// gamma is a 1x2 row so that gamma(x) X(t) is scalar.
struct OdeMatrices {
  Mat2 A;
  Vec2 B;
  Mat32 C;
  Row2 K;

  Mat2 closed_loop() const {  // A + B K
    return A + B * K;
  }
};

/// One mode of the Markov-jumping parameter set
/// {Lambda+, Lambda-, Sigma++, Sigma+-, Sigma-+, Sigma--, Q, R}.
struct ModeParams {
  std::array<double, 3> lambda_plus{};  // diagonal of Lambda+
  double lambda_minus = 0.0;
  Mat3 sigma_pp;
  Col3 sigma_pm;
  Row3 sigma_mp;
  double sigma_mm = 0.0;
  Col3 Q;
  Row3 R;

  double max_speed() const {
    double v = lambda_minus;
    for (double l : lambda_plus) v = std::max(v, l);
    return v;
  }

  friend bool operator==(const ModeParams&, const ModeParams&) = default;
};

/// Global admissible range for every stochastic-parameter entry.
struct ParamBounds {
  double lo = -1e3;
  double hi = 1e3;
};

/// Named analytic initial-condition family or tabulated samples.
struct FieldInit {
  enum class Kind { Zero, Sine, Linear, Tabulated };
  Kind kind = Kind::Zero;
  double amplitude = 1.0;
  std::vector<double> xs, values;  // Tabulated only

  double eval(double x) const;
};

struct InitSpec {
  std::array<FieldInit, 3> w;
  FieldInit z;
  Vec2 X0;
};

struct GridSpec {
  int nx = 200;
  double cfl = 0.5;
  double t_end = 70.0;
};

/// Validate OdeMatrices / ModeParams invariants; throws validation_error
/// with the violated invariant named.
void validate(const OdeMatrices& ode);
void validate(const ModeParams& mode, const ParamBounds& bounds);

}  // namespace bkno
