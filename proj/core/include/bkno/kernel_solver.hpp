#pragma once

#include <array>
#include <string>
#include <vector>

#include "bkno/params.hpp"

namespace bkno {

/// Uniform triangular lattice on T = {0 <= xi <= x <= 1}: nodes
/// (a h, b h) with 0 <= b <= a <= n, stored x-index major.
struct TriMesh {
  int n = 0;

  double h() const { return 1.0 / n; }
  int node_count() const { return (n + 1) * (n + 2) / 2; }
  int index(int a, int b) const { return a * (a + 1) / 2 + b; }
};

struct SolveOptions {
  double tol = 1e-10;     // sup-norm change between sweeps
  int max_sweeps = 200;
  double value_cap = 1e6;  // divergence detector
};

struct KernelEval {
  Row3 K;
  double N = 0.0;
  Row2 gamma;
};

/// Backstepping kernels (K0, N0, gamma) on the triangular lattice.
/// The diagonal relation K0(x,x)(Lam- I + Lam+) = -Sig-+ and gamma(0) = K
/// are imposed exactly by construction.
struct KernelGrid {
  TriMesh mesh;
  std::vector<std::array<double, 3>> K;      // per triangle node
  std::vector<double> N;                     // per triangle node
  std::vector<std::array<double, 2>> gamma;  // per x node, 0..n
  ModeParams nominal;
  OdeMatrices ode;
  Row2 gain;
  bool predicted = false;  // true for NO-inferred grids (hard invariants relaxed)
  bool extrapolated = false;
  std::vector<double> sweep_deltas;  // in-memory convergence trace, not serialized

  /// Piecewise-bilinear interpolation restricted to the triangle; exact at
  /// nodes, diagonal values take precedence on xi = x. Throws on xi > x.
  KernelEval evaluate(double x, double xi) const;
  std::array<double, 2> gamma_at(double x) const;

  double sup_norm() const;
};

/// Residuals of the five kernel relations, sup over their natural node sets.
/// Interior derivatives use one-sided first-order differences.
struct ResidualReport {
  double bc_diag = 0.0;   // K0(x,x)(Lam- I + Lam+) + Sig-+
  double bc_xi0 = 0.0;    // Lam- N0(x,0) - K0(x,0) Lam+ Q0 - gamma(x) B
  double ode_gamma = 0.0; // Lam- gamma' - gamma A + Sig-- gamma - K0(x,0) Lam+ C
  double pde_K = 0.0;     // Lam- dK/dx - dK/dxi Lam+ - N0 Sig-+ - K0 (Sig++ - Sig-- I)
  double pde_N = 0.0;     // Lam- (d/dx + d/dxi) N0 - K0 Sig+-
};

/// Successive-approximation solve of the kernel equations: K0 marched along
/// its characteristics from the diagonal datum, gamma integrated by RK4 from
/// gamma(0) = K, N0 marched along d xi/dx = +1 from the xi = 0 datum;
/// iterated to sup-norm stationarity. Throws numeric_error on divergence or
/// non-convergence.
KernelGrid solve_kernels(const ModeParams& nominal, const OdeMatrices& ode, int n,
                         const SolveOptions& opts = {});

ResidualReport kernel_residual(const KernelGrid& grid);

std::string kernel_grid_to_json(const KernelGrid& grid, const ResidualReport* residuals = nullptr);
KernelGrid kernel_grid_from_json(const std::string& text);

}  // namespace bkno
