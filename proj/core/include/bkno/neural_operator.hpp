#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bkno/kernel_solver.hpp"
#include "bkno/params.hpp"

namespace bkno {

/// Canonical flattening of the stochastic parameters into one vector:
/// Lambda+ diagonal (3), Lambda- (1), Sigma++ row-major (9), Sigma+- (3),
/// Sigma-+ (3), Sigma-- (1), Q (3), R (3) -- 26 entries.
inline constexpr int kParamVectorSize = 26;
std::array<double, kParamVectorSize> flatten_params(const ModeParams& m);
ModeParams unflatten_params(const std::array<double, kParamVectorSize>& v);
const char* param_entry_name(int index);

/// One varying entry of the canonical vector and its uniform sampling range.
struct ParamEntry {
  int index = 0;
  double lo = 0.0;
  double hi = 0.0;
};

struct ParamSpec {
  std::vector<ParamEntry> entries;

  int dim() const { return static_cast<int>(entries.size()); }
  /// base with the varying entries substituted by `values`.
  ModeParams apply(const ModeParams& base, const std::vector<double>& values) const;
  bool in_range(const std::vector<double>& values) const;
};

struct KernelDataset {
  ParamSpec spec;
  int n = 0;  // shared kernel mesh size
  OdeMatrices ode;
  ModeParams base;
  struct Sample {
    std::vector<double> params;
    KernelGrid grid;
  };
  std::vector<Sample> samples;
};

/// Uniform parameter draws (deterministic in seed, drawn before any solve),
/// kernel solves in parallel. Every stored grid must pass bc_diag <= 1e-10;
/// any solve failure aborts with the offending parameters in the message.
KernelDataset generate_dataset(const OdeMatrices& ode, const ModeParams& base,
                               const ParamSpec& spec, int count, int n, std::uint64_t seed);

std::string dataset_to_json(const KernelDataset& ds);
KernelDataset dataset_from_json(const std::string& text);

/// One dense layer, row-major W (out x in).
struct Dense {
  int in = 0, out = 0;
  std::vector<double> W, b;
};

/// Plain MLP with tanh on every layer but the last.
struct Mlp {
  std::vector<Dense> layers;

  int input_dim() const { return layers.front().in; }
  int output_dim() const { return layers.back().out; }
  std::vector<double> forward(const std::vector<double>& in) const;
};

inline constexpr int kChannels = 6;  // K0 x3, N0, gamma x2

/// Branch/trunk operator network: per channel c, the network value at (x, xi)
/// is sum_i branch[c*p+i](params) * trunk[c*p+i](x, xi); the two gamma
/// channels read the trunk at (x, 0). The N0 and gamma channels model the
/// correction on top of the decoupled closed form gamma_b(x) = K exp((A -
/// sigma_mm I) x / lam), N_b = gamma_b(x - xi) B / lam, which infer() adds
/// back; K0 is predicted directly.
struct OperatorModel {
  Mlp branch;  // varying params (+ reciprocal speed features) -> p * kChannels
  Mlp trunk;   // 2 -> p * kChannels
  int p = 0;
  int eval_mesh = 48;  // fixed internal lattice the trunk is evaluated on
  ParamSpec spec;
  OdeMatrices ode;
  ModeParams base;
  Row2 gain;
  std::vector<double> branch_lo, branch_hi;  // per-input affine normalization

  std::vector<double> normalize_params(const std::vector<double>& params) const;
};

struct TrainOptions {
  int p = 32;
  std::vector<int> hidden{64, 64};
  double lr = 3e-3;  // initial; cosine-decayed to lr/100 over the epoch budget
  int epochs = 600;
  int batch = 32;  // trunk nodes per step; every step sees all train samples
  std::uint64_t seed = 0;
  double val_fraction = 0.2;  // split by sample
  int eval_mesh = 48;
  double boundary_weight = 8.0;  // x = 1 row emphasis (node replication factor)
};

struct TrainHistory {
  std::vector<double> train_mse;
  std::vector<double> val_mse;
};

/// Adam-style mini-batch MSE training with in-repo reverse-mode gradients.
/// Throws numeric_error on a non-finite loss, naming the epoch.
OperatorModel train(const KernelDataset& ds, const TrainOptions& opts, TrainHistory* history);

/// Evaluate the network on its fixed internal lattice, then resample to the
/// requested mesh. The diagonal condition and gamma(0) = K are not imposed;
/// the grid is marked predicted (and extrapolated when params leave the
/// training ranges). Wall time is independent of the kernel-solve cost.
KernelGrid infer(const OperatorModel& model, const std::vector<double>& params, int n);

std::string model_to_json(const OperatorModel& model);
OperatorModel model_from_json(const std::string& text);
void save_model(const OperatorModel& model, const std::filesystem::path& path);
OperatorModel load_model(const std::filesystem::path& path);

namespace detail {

/// Gradient buffers shaped like the model's layers.
struct Gradients {
  std::vector<Dense> branch, trunk;
};

/// Balanced MSE -- the per-channel weighted mean over that channel's
/// contributing sample/node triples, averaged across populated channels --
/// and, when grads is non-null, its gradient. trunk_in and branch_in are
/// already normalized; weight[node][ch] = 0 excludes a triple, and weights
/// are normalized away per channel (uniform weights reproduce the plain
/// mean).
double loss_and_grad(const OperatorModel& m,
                     const std::vector<std::array<double, 2>>& trunk_in,
                     const std::vector<std::vector<double>>& branch_in,
                     const std::vector<std::vector<std::array<double, kChannels>>>& target,
                     const std::vector<std::array<double, kChannels>>& weight, Gradients* grads);

}  // namespace detail

}  // namespace bkno
