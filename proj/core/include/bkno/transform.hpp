#pragma once

#include <array>
#include <vector>

#include "bkno/kernel_solver.hpp"
#include "bkno/linalg.hpp"

namespace bkno {

/// PDE-ODE state on a uniform grid of nx+1 nodes over [0,1].
struct StateSnapshot {
  int nx = 0;
  std::array<std::vector<double>, 3> w;  // rightward fields, nx+1 each
  std::vector<double> z;                 // leftward field, nx+1
  Vec2 X;
  double t = 0.0;
  int mode = 0;

  double h() const { return 1.0 / nx; }
  double x(int i) const { return static_cast<double>(i) / nx; }
  static StateSnapshot zero(int nx);
};

/// Image of the state under the Volterra boundary-control transform:
/// theta = w node-wise and rho(x) = z(x) - int_0^x K0(x,xi) w(xi) dxi
/// - int_0^x N0(x,xi) z(xi) dxi - gamma(x) X.
/// These signs are the unique choice for which the control input below
/// pins rho(1,t) = 0 exactly.
struct TransformedSnapshot {
  int nx = 0;
  std::array<std::vector<double>, 3> theta;
  std::vector<double> rho;
  Vec2 X;
};

/// Which boundary trace of w the reflection term R w(.) uses, both in the
/// plant boundary condition and in the control law. The two must agree for
/// the reflection to cancel.
enum class ReflectionPoint { X0, X1 };

/// Trapezoidal evaluation of the transform on the snapshot grid; kernels are
/// interpolated from their own mesh.
TransformedSnapshot apply_transform(const StateSnapshot& s, const KernelGrid& k);

/// Recover (w, z) from (theta, rho): w = theta, z by forward substitution in
/// x (the trapezoid's own-node term solved implicitly), then fixed-point
/// refinement to node-wise stationarity below 1e-12. Guarded at 100 passes.
StateSnapshot invert_transform(const TransformedSnapshot& ts, const KernelGrid& k);

/// Boundary control U = -R_used w(p) + int_0^1 K0(1,xi) w dxi
/// + int_0^1 N0(1,xi) z dxi + gamma(1) X with p in {0, 1}. The same formula
/// serves solver-exact and operator-predicted kernel grids.
double control_input(const StateSnapshot& s, const KernelGrid& k, const Row3& R_used,
                     ReflectionPoint p);

/// rho at x = 1 for the current state; the per-step target-boundary check.
double boundary_rho(const StateSnapshot& s, const KernelGrid& k);

}  // namespace bkno
