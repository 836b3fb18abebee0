#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "bkno/config.hpp"
#include "bkno/kernel_solver.hpp"
#include "bkno/markov.hpp"
#include "bkno/transform.hpp"

namespace bkno {

/// Boundary controller: open loop (U = 0) or the kernel-based feedback law,
/// for either solver-exact or operator-predicted kernel grids.
struct Controller {
  enum class Kind { Zero, Kernels };
  Kind kind = Kind::Zero;
  const KernelGrid* grid = nullptr;
  ReflectionPoint reflection = ReflectionPoint::X0;
};

/// One realized run. Scalar series are recorded at the decimated snapshot
/// instants (at most ~500 plus the final step). A blow-up beyond the guard
/// truncates the run with blew_up set.
struct Trajectory {
  std::vector<double> times;
  std::vector<double> p_series;     // int |w|^2 dx + |X|^2, trapezoid
  std::vector<double> u_series;
  std::vector<int> mode_series;
  std::vector<Vec2> X_series;
  std::vector<StateSnapshot> snapshots;
  bool blew_up = false;
  double max_rho1_ratio = 0.0;  // max over steps of |rho(1)| / state norm
  double dt = 0.0;
};

struct EnsembleResult {
  std::vector<Trajectory> trajectories;
  std::vector<double> times;
  std::vector<double> mean_p;  // over trajectories that ran to the horizon
  int completed = 0;
};

/// First-order upwind integration of the switched plant along one Markov
/// path. Mode parameters are frozen at each step's left endpoint. Per step:
/// interior transport + explicit coupling sources, RK4 for the ODE state
/// with z(0) frozen at the step start, then boundary closure
/// w(0) = Q z(0) + C X followed by z(1) = R w(p) + U with the trapezoid's
/// z(1) endpoint handled implicitly so the feedback pins rho(1) exactly.
/// Throws validation_error if path.horizon < cfg.grid.t_end.
Trajectory simulate(const ScenarioConfig& cfg, const MarkovPath& path, const Controller& ctl,
                    int max_snapshots = 500);

/// n_paths independent runs with seeds derived from cfg.seed; trajectories
/// simulated concurrently, aggregated in fixed order.
EnsembleResult run_ensemble(const ScenarioConfig& cfg, const Controller& ctl, int n_paths,
                            std::uint64_t seed, int max_snapshots = 500);

/// p(t) of a snapshot: trapezoidal int |w|^2 dx plus |X|^2.
double state_p(const StateSnapshot& s);

}  // namespace bkno
