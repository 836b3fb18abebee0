#pragma once

#include <cstdint>
#include <vector>

#include "bkno/params.hpp"

namespace bkno {

/// Time-varying transition rates tau_ij(t) >= 0 with tau_ii = 0.
/// Indices are 0-based in the API; the paper schedule's formula uses the
/// 1-based labels it was written with.
struct RateSchedule {
  enum class Kind { PaperS61, Constant, Tabulated };
  Kind kind = Kind::Constant;
  int r = 1;
  std::vector<double> constant;              // r*r, Constant
  std::vector<double> times;                 // Tabulated knots
  std::vector<std::vector<double>> tables;   // r*r per knot, linear in t

  double rate(int i, int j, double t) const;
};

struct MarkovChainSpec {
  std::vector<ModeParams> modes;  // indexed 0..r-1
  RateSchedule rates;
  double tau_star = 0.0;  // declared supremum of the rates
  int initial_mode = 0;

  int r() const { return static_cast<int>(modes.size()); }
  /// c_j(t) = sum_{k != j} tau_jk(t)
  double exit_rate(int j, double t) const;
};

/// Right-continuous piecewise-constant realization. jump_times[0] == 0 and
/// mode_indices[k] is the mode on [jump_times[k], jump_times[k+1]).
struct MarkovPath {
  std::vector<double> jump_times;
  std::vector<int> mode_indices;
  double horizon = 0.0;
};

/// Row {P_ij(t0,t1)}_j of the transition matrix from start mode i,
/// by RK4 integration of the Kolmogorov forward equations.
/// Throws numeric_error on a negative rate or row-sum drift > 1e-6.
std::vector<double> kolmogorov_evolve(const MarkovChainSpec& spec, int i, double t0, double t1,
                                      double dt);

/// Exact sampling by Lewis-Shedler thinning at majorant rate r * tau_star.
/// Deterministic for a fixed seed. initial_mode < 0 selects spec.initial_mode.
MarkovPath sample_path(const MarkovChainSpec& spec, double horizon, std::uint64_t seed,
                       int initial_mode = -1);

/// Mode index at time t (right-continuous at jumps). Throws on t outside
/// [0, horizon].
int mode_at(const MarkovPath& path, double t);

}  // namespace bkno
