#include "bkno/markov.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "bkno/errors.hpp"

namespace bkno {
namespace {

// Paper schedule, written with the 1-based mode labels it uses:
// 20 out of extreme states {1,5}; 1 from middle states into {1,5};
// 10(1 + 2 cos(1e-3 (i + 5j) t))^2 between distinct middle states.
double paper_s61_rate(int i1, int j1, double t) {
  if (i1 == j1) return 0.0;
  if (i1 == 1 || i1 == 5) return 20.0;
  if (j1 == 1 || j1 == 5) return 1.0;
  const double c = 1.0 + 2.0 * std::cos(1e-3 * (i1 + 5.0 * j1) * t);
  return 10.0 * c * c;
}

double uniform01(std::mt19937_64& rng) {
  // 53-bit mantissa in (0,1]; explicit so paths are bit-reproducible
  return (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
}

}  // namespace

double RateSchedule::rate(int i, int j, double t) const {
  if (i == j) return 0.0;
  switch (kind) {
    case Kind::PaperS61: return paper_s61_rate(i + 1, j + 1, t);
    case Kind::Constant: return constant[static_cast<std::size_t>(i) * r + j];
    case Kind::Tabulated: {
      const std::size_t idx = static_cast<std::size_t>(i) * r + j;
      if (times.empty()) return 0.0;
      if (t <= times.front()) return tables.front()[idx];
      if (t >= times.back()) return tables.back()[idx];
      auto it = std::upper_bound(times.begin(), times.end(), t);
      const std::size_t k = static_cast<std::size_t>(it - times.begin());
      const double w = (t - times[k - 1]) / (times[k] - times[k - 1]);
      return tables[k - 1][idx] + w * (tables[k][idx] - tables[k - 1][idx]);
    }
  }
  return 0.0;
}

double MarkovChainSpec::exit_rate(int j, double t) const {
  double c = 0.0;
  for (int k = 0; k < r(); ++k)
    if (k != j) c += rates.rate(j, k, t);
  return c;
}

std::vector<double> kolmogorov_evolve(const MarkovChainSpec& spec, int i, double t0, double t1,
                                      double dt) {
  const int r = spec.r();
  if (i < 0 || i >= r) throw std::invalid_argument("kolmogorov_evolve: bad start mode");
  if (t1 < t0 || dt <= 0.0) throw std::invalid_argument("kolmogorov_evolve: bad time arguments");

  std::vector<double> p(static_cast<std::size_t>(r), 0.0);
  p[static_cast<std::size_t>(i)] = 1.0;

  // dP_j/dt = -c_j(t) P_j + sum_k P_k tau_kj(t)
  auto deriv = [&](const std::vector<double>& q, double t, std::vector<double>& out) {
    for (int j = 0; j < r; ++j) {
      double acc = -spec.exit_rate(j, t) * q[static_cast<std::size_t>(j)];
      for (int k = 0; k < r; ++k) {
        if (k == j) continue;
        const double tau = spec.rates.rate(k, j, t);
        if (tau < 0.0) throw numeric_error("kolmogorov_evolve: negative transition rate");
        acc += q[static_cast<std::size_t>(k)] * tau;
      }
      out[static_cast<std::size_t>(j)] = acc;
    }
  };

  std::vector<double> k1(p.size()), k2(p.size()), k3(p.size()), k4(p.size()), tmp(p.size());
  double t = t0;
  while (t < t1 - 1e-15) {
    const double h = std::min(dt, t1 - t);
    deriv(p, t, k1);
    for (std::size_t j = 0; j < p.size(); ++j) tmp[j] = p[j] + 0.5 * h * k1[j];
    deriv(tmp, t + 0.5 * h, k2);
    for (std::size_t j = 0; j < p.size(); ++j) tmp[j] = p[j] + 0.5 * h * k2[j];
    deriv(tmp, t + 0.5 * h, k3);
    for (std::size_t j = 0; j < p.size(); ++j) tmp[j] = p[j] + h * k3[j];
    deriv(tmp, t + h, k4);
    for (std::size_t j = 0; j < p.size(); ++j)
      p[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    t += h;
  }

  double sum = 0.0;
  for (double v : p) sum += v;
  const double drift = std::abs(sum - 1.0);
  if (drift > 1e-6) throw numeric_error("kolmogorov_evolve: row-sum drift exceeds 1e-6");
  if (drift > 1e-12)
    for (double& v : p) v /= sum;
  return p;
}

MarkovPath sample_path(const MarkovChainSpec& spec, double horizon, std::uint64_t seed,
                       int initial_mode) {
  const int r = spec.r();
  if (horizon <= 0.0) throw std::invalid_argument("sample_path: horizon must be positive");
  int mode = initial_mode >= 0 ? initial_mode : spec.initial_mode;
  if (mode < 0 || mode >= r) throw std::invalid_argument("sample_path: bad initial mode");

  MarkovPath path;
  path.horizon = horizon;
  path.jump_times.push_back(0.0);
  path.mode_indices.push_back(mode);

  if (spec.tau_star == 0.0) {
    if (r > 1) throw numeric_error("sample_path: tau_star = 0 with multiple modes");
    return path;
  }

  const double majorant = r * spec.tau_star;
  std::mt19937_64 rng(seed);
  double t = 0.0;
  while (true) {
    t -= std::log(uniform01(rng)) / majorant;
    if (t >= horizon) break;
    const double c = spec.exit_rate(mode, t);
    if (c > majorant)
      throw numeric_error("sample_path: exit rate exceeds declared majorant r*tau_star");
    if (uniform01(rng) * majorant > c) continue;  // thinned-out candidate
    // accepted: next mode with probability tau_{mode,k}(t) / c
    double u = uniform01(rng) * c;
    int next = mode;
    for (int k = 0; k < r; ++k) {
      if (k == mode) continue;
      u -= spec.rates.rate(mode, k, t);
      if (u <= 0.0) {
        next = k;
        break;
      }
    }
    if (next == mode) continue;  // c == 0 numerical corner
    mode = next;
    path.jump_times.push_back(t);
    path.mode_indices.push_back(mode);
  }
  return path;
}

int mode_at(const MarkovPath& path, double t) {
  if (t < 0.0 || t > path.horizon) throw std::out_of_range("mode_at: t outside [0, horizon]");
  // right continuity: the segment starting at t itself wins
  auto it = std::upper_bound(path.jump_times.begin(), path.jump_times.end(), t);
  const std::size_t k = static_cast<std::size_t>(it - path.jump_times.begin());
  return path.mode_indices[k - 1];
}

}  // namespace bkno
