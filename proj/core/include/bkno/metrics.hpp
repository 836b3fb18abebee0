#pragma once

#include <vector>

#include "bkno/kernel_solver.hpp"
#include "bkno/linalg.hpp"
#include "bkno/transform.hpp"

namespace bkno {

/// Weights of the stochastic Lyapunov functional
/// V = int (theta, rho)^T D(x) (theta, rho) dx + X^T P X with
/// D(x) = diag(e^{-nu x / lambda_i} / lambda_i, a e^{nu x / Lam-} / Lam-).
struct LyapunovWeights {
  double nu = 0.5;
  double a = 1.0;
  Mat2 P;
  Mat2 Qmat = Mat2::identity();
};

/// Direct solve of P M + M^T P = -Qmat through the equivalent 3x3 linear
/// system in (p11, p12, p22). Throws validation_error if M is not Hurwitz,
/// numeric_error on a singular system.
Mat2 solve_lyapunov(const Mat2& M, const Mat2& Qmat);

/// Evaluate V on a snapshot: transform through the kernels, weight by the
/// mode's transport speeds, trapezoid in x, plus the quadratic ODE term.
double lyapunov_value(const StateSnapshot& s, const KernelGrid& k, const ModeParams& mode,
                      const LyapunovWeights& wts);

struct DecayFit {
  double zeta = 0.0;   // decay rate (minus the log-linear slope)
  double sigma = 0.0;  // prefactor exp(intercept)
  double r2 = 0.0;     // coefficient of determination of the log fit
};

/// Least-squares line through log(values) on the index window [lo, hi].
/// Throws validation_error on nonpositive values or fewer than 3 samples.
DecayFit fit_decay(const std::vector<double>& times, const std::vector<double>& values,
                   double t_lo, double t_hi);

}  // namespace bkno
