#include "bkno/neural_operator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "bkno/errors.hpp"
#include "json.hpp"

namespace bkno {
namespace {

using Json = nlohmann::json;

constexpr const char* kEntryNames[kParamVectorSize] = {
    "lambda_plus_1", "lambda_plus_2", "lambda_plus_3", "lambda_minus",
    "sigma_pp_11",   "sigma_pp_12",   "sigma_pp_13",   "sigma_pp_21",
    "sigma_pp_22",   "sigma_pp_23",   "sigma_pp_31",   "sigma_pp_32",
    "sigma_pp_33",   "sigma_pm_1",    "sigma_pm_2",    "sigma_pm_3",
    "sigma_mp_1",    "sigma_mp_2",    "sigma_mp_3",    "sigma_mm",
    "Q_1",           "Q_2",           "Q_3",           "R_1",
    "R_2",           "R_3"};

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>((rng() >> 11) + 1) * 0x1.0p-53;
}

// run fn(a_lo, a_hi) over row ranges of a triangular lattice with 0..n rows,
// split so each task sees roughly the same node count
template <typename Fn>
void parallel_rows(int n, Fn&& fn) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const int tasks = static_cast<int>(std::min<unsigned>(hw, 16));
  if (tasks <= 1 || n < 4 * tasks) {
    fn(0, n + 1);
    return;
  }
  const double total = (static_cast<double>(n) + 1.0) * (n + 2.0) / 2.0;
  std::vector<std::future<void>> futs;
  int a = 0;
  double done = 0.0;
  for (int t = 0; t < tasks && a <= n; ++t) {
    const double want = total * (t + 1) / tasks;
    int hi = a;
    while (hi <= n && (t + 1 == tasks || done < want)) done += ++hi;
    futs.push_back(std::async(std::launch::async, [&fn, a, hi] { fn(a, hi); }));
    a = hi;
  }
  for (auto& f : futs) f.get();
}

// forward pass keeping pre-activation outputs of every layer
struct ForwardCache {
  std::vector<std::vector<double>> acts;  // acts[0] = input, acts[k] activated output of layer k-1
};

std::vector<double> mlp_forward(const Mlp& net, const std::vector<double>& in,
                                ForwardCache* cache) {
  std::vector<double> cur = in;
  if (cache) {
    cache->acts.clear();
    cache->acts.push_back(cur);
  }
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Dense& d = net.layers[l];
    std::vector<double> next(static_cast<std::size_t>(d.out));
    for (int o = 0; o < d.out; ++o) {
      double acc = d.b[static_cast<std::size_t>(o)];
      const double* wrow = d.W.data() + static_cast<std::size_t>(o) * d.in;
      for (int i = 0; i < d.in; ++i) acc += wrow[i] * cur[static_cast<std::size_t>(i)];
      next[static_cast<std::size_t>(o)] = l + 1 < net.layers.size() ? std::tanh(acc) : acc;
    }
    cur = std::move(next);
    if (cache) cache->acts.push_back(cur);
  }
  return cur;
}

// reverse pass; grad_out is d loss / d (network output); accumulates into g
void mlp_backward(const Mlp& net, const ForwardCache& cache, std::vector<double> grad_out,
                  std::vector<Dense>& g) {
  for (int l = static_cast<int>(net.layers.size()) - 1; l >= 0; --l) {
    const Dense& d = net.layers[static_cast<std::size_t>(l)];
    Dense& gd = g[static_cast<std::size_t>(l)];
    const auto& in = cache.acts[static_cast<std::size_t>(l)];
    const auto& out = cache.acts[static_cast<std::size_t>(l) + 1];
    // through tanh (hidden layers only); cache stores activated values
    if (l + 1 < static_cast<int>(net.layers.size()))
      for (int o = 0; o < d.out; ++o)
        grad_out[static_cast<std::size_t>(o)] *=
            1.0 - out[static_cast<std::size_t>(o)] * out[static_cast<std::size_t>(o)];
    std::vector<double> grad_in(static_cast<std::size_t>(d.in), 0.0);
    for (int o = 0; o < d.out; ++o) {
      const double go = grad_out[static_cast<std::size_t>(o)];
      gd.b[static_cast<std::size_t>(o)] += go;
      double* gw = gd.W.data() + static_cast<std::size_t>(o) * d.in;
      const double* w = d.W.data() + static_cast<std::size_t>(o) * d.in;
      for (int i = 0; i < d.in; ++i) {
        gw[i] += go * in[static_cast<std::size_t>(i)];
        grad_in[static_cast<std::size_t>(i)] += go * w[i];
      }
    }
    grad_out = std::move(grad_in);
  }
}

Mlp make_mlp(int in, const std::vector<int>& hidden, int out, std::mt19937_64& rng) {
  Mlp net;
  std::vector<int> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Dense d;
    d.in = dims[l];
    d.out = dims[l + 1];
    const double s = std::sqrt(6.0 / (d.in + d.out));
    d.W.resize(static_cast<std::size_t>(d.in) * d.out);
    for (double& w : d.W) w = s * (2.0 * uniform01(rng) - 1.0);
    d.b.assign(static_cast<std::size_t>(d.out), 0.0);
    net.layers.push_back(std::move(d));
  }
  return net;
}

std::vector<Dense> zero_like(const Mlp& net) {
  std::vector<Dense> g;
  for (const auto& d : net.layers) {
    Dense z;
    z.in = d.in;
    z.out = d.out;
    z.W.assign(d.W.size(), 0.0);
    z.b.assign(d.b.size(), 0.0);
    g.push_back(std::move(z));
  }
  return g;
}

Json mlp_to_json(const Mlp& net) {
  Json layers = Json::array();
  for (const auto& d : net.layers)
    layers.push_back({{"in", d.in}, {"out", d.out}, {"W", d.W}, {"b", d.b}});
  return layers;
}

Mlp mlp_from_json(const Json& j) {
  Mlp net;
  for (const auto& lj : j) {
    Dense d;
    d.in = lj.at("in").get<int>();
    d.out = lj.at("out").get<int>();
    lj.at("W").get_to(d.W);
    lj.at("b").get_to(d.b);
    if (d.W.size() != static_cast<std::size_t>(d.in) * d.out ||
        d.b.size() != static_cast<std::size_t>(d.out))
      throw parse_error("model: layer shape mismatch");
    for (double w : d.W)
      if (!std::isfinite(w)) throw parse_error("model: non-finite weight");
    net.layers.push_back(std::move(d));
  }
  if (net.layers.empty()) throw parse_error("model: empty network");
  return net;
}

Json mode_to_json(const ModeParams& m) {
  return Json{{"lambda_plus", m.lambda_plus}, {"lambda_minus", m.lambda_minus},
              {"sigma_pp", m.sigma_pp.a},     {"sigma_pm", m.sigma_pm.a},
              {"sigma_mp", m.sigma_mp.a},     {"sigma_mm", m.sigma_mm},
              {"Q", m.Q.a},                   {"R", m.R.a}};
}

ModeParams mode_from_json(const Json& j) {
  ModeParams m;
  j.at("lambda_plus").get_to(m.lambda_plus);
  m.lambda_minus = j.at("lambda_minus").get<double>();
  j.at("sigma_pp").get_to(m.sigma_pp.a);
  j.at("sigma_pm").get_to(m.sigma_pm.a);
  j.at("sigma_mp").get_to(m.sigma_mp.a);
  m.sigma_mm = j.at("sigma_mm").get<double>();
  j.at("Q").get_to(m.Q.a);
  j.at("R").get_to(m.R.a);
  return m;
}

Json ode_to_json(const OdeMatrices& o) {
  return Json{{"A", o.A.a}, {"B", o.B.a}, {"C", o.C.a}, {"K", o.K.a}};
}

OdeMatrices ode_from_json(const Json& j) {
  OdeMatrices o;
  j.at("A").get_to(o.A.a);
  j.at("B").get_to(o.B.a);
  j.at("C").get_to(o.C.a);
  j.at("K").get_to(o.K.a);
  return o;
}

Json spec_to_json(const ParamSpec& s) {
  Json entries = Json::array();
  for (const auto& e : s.entries)
    entries.push_back({{"index", e.index}, {"lo", e.lo}, {"hi", e.hi}});
  return Json{{"entries", entries}};
}

ParamSpec spec_from_json(const Json& j) {
  ParamSpec s;
  for (const auto& ej : j.at("entries")) {
    ParamEntry e;
    e.index = ej.at("index").get<int>();
    e.lo = ej.at("lo").get<double>();
    e.hi = ej.at("hi").get<double>();
    if (e.index < 0 || e.index >= kParamVectorSize || e.hi < e.lo)
      throw parse_error("param spec: bad entry");
    s.entries.push_back(e);
  }
  return s;
}

}  // namespace

std::array<double, kParamVectorSize> flatten_params(const ModeParams& m) {
  std::array<double, kParamVectorSize> v{};
  int k = 0;
  for (int i = 0; i < 3; ++i) v[k++] = m.lambda_plus[static_cast<std::size_t>(i)];
  v[k++] = m.lambda_minus;
  for (int i = 0; i < 9; ++i) v[k++] = m.sigma_pp.a[static_cast<std::size_t>(i)];
  for (int i = 0; i < 3; ++i) v[k++] = m.sigma_pm.a[static_cast<std::size_t>(i)];
  for (int i = 0; i < 3; ++i) v[k++] = m.sigma_mp.a[static_cast<std::size_t>(i)];
  v[k++] = m.sigma_mm;
  for (int i = 0; i < 3; ++i) v[k++] = m.Q.a[static_cast<std::size_t>(i)];
  for (int i = 0; i < 3; ++i) v[k++] = m.R.a[static_cast<std::size_t>(i)];
  return v;
}

ModeParams unflatten_params(const std::array<double, kParamVectorSize>& v) {
  ModeParams m;
  int k = 0;
  for (int i = 0; i < 3; ++i) m.lambda_plus[static_cast<std::size_t>(i)] = v[k++];
  m.lambda_minus = v[k++];
  for (int i = 0; i < 9; ++i) m.sigma_pp.a[static_cast<std::size_t>(i)] = v[k++];
  for (int i = 0; i < 3; ++i) m.sigma_pm.a[static_cast<std::size_t>(i)] = v[k++];
  for (int i = 0; i < 3; ++i) m.sigma_mp.a[static_cast<std::size_t>(i)] = v[k++];
  m.sigma_mm = v[k++];
  for (int i = 0; i < 3; ++i) m.Q.a[static_cast<std::size_t>(i)] = v[k++];
  for (int i = 0; i < 3; ++i) m.R.a[static_cast<std::size_t>(i)] = v[k++];
  return m;
}

const char* param_entry_name(int index) {
  if (index < 0 || index >= kParamVectorSize)
    throw std::out_of_range("param_entry_name: index");
  return kEntryNames[index];
}

ModeParams ParamSpec::apply(const ModeParams& base, const std::vector<double>& values) const {
  if (values.size() != entries.size())
    throw validation_error("ParamSpec::apply: value count mismatch");
  auto v = flatten_params(base);
  for (std::size_t k = 0; k < entries.size(); ++k)
    v[static_cast<std::size_t>(entries[k].index)] = values[k];
  return unflatten_params(v);
}

bool ParamSpec::in_range(const std::vector<double>& values) const {
  if (values.size() != entries.size()) return false;
  for (std::size_t k = 0; k < entries.size(); ++k)
    if (values[k] < entries[k].lo || values[k] > entries[k].hi) return false;
  return true;
}

KernelDataset generate_dataset(const OdeMatrices& ode, const ModeParams& base,
                               const ParamSpec& spec, int count, int n, std::uint64_t seed) {
  if (count < 1) throw validation_error("generate_dataset: count >= 1 required");
  if (spec.entries.empty()) throw validation_error("generate_dataset: empty param spec");

  KernelDataset ds;
  ds.spec = spec;
  ds.n = n;
  ds.ode = ode;
  ds.base = base;

  // draw every parameter vector first so draws are independent of scheduling
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> draws(static_cast<std::size_t>(count));
  for (auto& d : draws) {
    d.reserve(spec.entries.size());
    for (const auto& e : spec.entries) d.push_back(e.lo + (e.hi - e.lo) * uniform01(rng));
  }

  auto solve_one = [&](const std::vector<double>& params) {
    const ModeParams mode = spec.apply(base, params);
    try {
      KernelGrid g = solve_kernels(mode, ode, n);
      const ResidualReport rep = kernel_residual(g);
      if (rep.bc_diag > 1e-10)
        throw numeric_error("diagonal residual " + std::to_string(rep.bc_diag));
      return g;
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << "generate_dataset: solve failed (";
      for (std::size_t k = 0; k < params.size(); ++k)
        msg << (k ? ", " : "") << param_entry_name(spec.entries[k].index) << "=" << params[k];
      msg << "): " << e.what();
      throw numeric_error(msg.str());
    }
  };

  const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  ds.samples.resize(static_cast<std::size_t>(count));
  std::vector<std::future<void>> futs;
  for (unsigned w = 0; w < workers; ++w) {
    futs.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t k = w; k < draws.size(); k += workers) {
        ds.samples[k].params = draws[k];
        ds.samples[k].grid = solve_one(draws[k]);
      }
    }));
  }
  for (auto& f : futs) f.get();
  return ds;
}

std::string dataset_to_json(const KernelDataset& ds) {
  Json j;
  j["param_spec"] = spec_to_json(ds.spec);
  j["n"] = ds.n;
  j["ode"] = ode_to_json(ds.ode);
  j["base"] = mode_to_json(ds.base);
  Json samples = Json::array();
  for (const auto& s : ds.samples)
    samples.push_back({{"params", s.params}, {"grid", Json::parse(kernel_grid_to_json(s.grid))}});
  j["samples"] = std::move(samples);
  return j.dump();
}

KernelDataset dataset_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw parse_error(std::string("dataset: ") + e.what());
  }
  try {
    KernelDataset ds;
    ds.spec = spec_from_json(j.at("param_spec"));
    ds.n = j.at("n").get<int>();
    ds.ode = ode_from_json(j.at("ode"));
    ds.base = mode_from_json(j.at("base"));
    for (const auto& sj : j.at("samples")) {
      KernelDataset::Sample s;
      sj.at("params").get_to(s.params);
      s.grid = kernel_grid_from_json(sj.at("grid").dump());
      if (s.grid.mesh.n != ds.n) throw parse_error("dataset: sample mesh size mismatch");
      ds.samples.push_back(std::move(s));
    }
    return ds;
  } catch (const Json::exception& e) {
    throw parse_error(std::string("dataset: ") + e.what());
  }
}

std::vector<double> Mlp::forward(const std::vector<double>& in) const {
  return mlp_forward(*this, in, nullptr);
}

std::vector<double> OperatorModel::normalize_params(const std::vector<double>& params) const {
  if (params.size() != spec.entries.size())
    throw validation_error("OperatorModel: parameter dimension mismatch");
  // raw entries first, then the reciprocal of each varying transport speed:
  // the kernels depend on the speeds through x / lambda, so 1/lambda is the
  // natural branch coordinate near the slow end of the range
  std::vector<double> raw(params);
  for (std::size_t i = 0; i < params.size(); ++i)
    if (spec.entries[i].index < 4 && spec.entries[i].lo > 0.0) raw.push_back(1.0 / params[i]);
  if (raw.size() != branch_lo.size())
    throw validation_error("OperatorModel: normalization dimension mismatch");
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double span = branch_hi[i] - branch_lo[i];
    out[i] = span == 0.0 ? 0.0 : 2.0 * (raw[i] - branch_lo[i]) / span - 1.0;
  }
  return out;
}

namespace {

// Decoupled closed-form kernels gamma_b(x) = K exp((A - sigma_mm I) x / lam)
// and N_b(x, xi) = gamma_b(x - xi) B / lam, exact when Sigma-+ and C vanish.
// The network is trained on the remainder (coupling correction), several
// times smaller in sup norm than the full kernels, and infer() adds the
// closed form back; the K0 channels have no cheap analogue and stay direct.
struct Baseline {
  std::vector<std::array<double, 2>> gamma;  // gamma_b(a / n)
  std::vector<double> nb;                    // N_b at lattice offset a - b
};

Baseline closed_form_baseline(const OdeMatrices& ode, const ModeParams& m, int n) {
  Mat2 M = ode.A;
  M(0, 0) -= m.sigma_mm;
  M(1, 1) -= m.sigma_mm;
  const Mat2 step = expm((1.0 / (n * m.lambda_minus)) * M);
  Baseline bl;
  bl.gamma.resize(static_cast<std::size_t>(n) + 1);
  bl.nb.resize(static_cast<std::size_t>(n) + 1);
  Row2 g = ode.K;
  for (int a = 0; a <= n; ++a) {
    bl.gamma[static_cast<std::size_t>(a)] = {g(0, 0), g(0, 1)};
    bl.nb[static_cast<std::size_t>(a)] =
        (g(0, 0) * ode.B(0, 0) + g(0, 1) * ode.B(1, 0)) / m.lambda_minus;
    g = g * step;
  }
  return bl;
}

}  // namespace

namespace detail {

double loss_and_grad(const OperatorModel& m,
                     const std::vector<std::array<double, 2>>& trunk_in,
                     const std::vector<std::vector<double>>& branch_in,
                     const std::vector<std::vector<std::array<double, kChannels>>>& target,
                     const std::vector<std::array<double, kChannels>>& weight, Gradients* grads) {
  const int p = m.p;
  const std::size_t nodes = trunk_in.size();
  const std::size_t ns = branch_in.size();

  std::vector<ForwardCache> tcache(grads ? nodes : 0), bcache(grads ? ns : 0);
  std::vector<std::vector<double>> trow(nodes), brow(ns);
  for (std::size_t k = 0; k < nodes; ++k)
    trow[k] = mlp_forward(m.trunk, {trunk_in[k][0], trunk_in[k][1]}, grads ? &tcache[k] : nullptr);
  for (std::size_t s = 0; s < ns; ++s)
    brow[s] = mlp_forward(m.branch, branch_in[s], grads ? &bcache[s] : nullptr);

  // balanced MSE: per-channel weighted mean over that channel's contributing
  // triples, averaged over the populated channels; keeps the sparse gamma
  // rows (one node per lattice row) from being drowned out by the areal K/N
  // channels, and lets the caller emphasize individual nodes
  std::array<double, kChannels> wsum{};
  for (std::size_t k = 0; k < nodes; ++k)
    for (int c = 0; c < kChannels; ++c) wsum[static_cast<std::size_t>(c)] += weight[k][static_cast<std::size_t>(c)];
  int populated = 0;
  std::array<double, kChannels> inv_c{};
  for (int c = 0; c < kChannels; ++c)
    if (wsum[static_cast<std::size_t>(c)] > 0.0) {
      ++populated;
      inv_c[static_cast<std::size_t>(c)] =
          1.0 / (wsum[static_cast<std::size_t>(c)] * static_cast<double>(ns));
    }
  if (populated == 0) throw validation_error("loss_and_grad: no contributing targets");
  for (double& v : inv_c) v /= populated;

  std::vector<std::vector<double>> gt, gb;
  if (grads) {
    gt.assign(nodes, std::vector<double>(static_cast<std::size_t>(p * kChannels), 0.0));
    gb.assign(ns, std::vector<double>(static_cast<std::size_t>(p * kChannels), 0.0));
  }

  double loss = 0.0;
  for (std::size_t k = 0; k < nodes; ++k) {
    const double* t = trow[k].data();
    for (std::size_t s = 0; s < ns; ++s) {
      const double* b = brow[s].data();
      for (int c = 0; c < kChannels; ++c) {
        const double w = weight[k][static_cast<std::size_t>(c)];
        if (w == 0.0) continue;
        const double* tc = t + static_cast<std::size_t>(c) * p;
        const double* bc = b + static_cast<std::size_t>(c) * p;
        double pred = 0.0;
        for (int i = 0; i < p; ++i) pred += bc[i] * tc[i];
        const double err = pred - target[s][k][static_cast<std::size_t>(c)];
        loss += w * err * err * inv_c[static_cast<std::size_t>(c)];
        if (grads) {
          const double g = 2.0 * w * err * inv_c[static_cast<std::size_t>(c)];
          double* gtk = gt[k].data() + static_cast<std::size_t>(c) * p;
          double* gbs = gb[s].data() + static_cast<std::size_t>(c) * p;
          for (int i = 0; i < p; ++i) {
            gtk[i] += g * bc[i];
            gbs[i] += g * tc[i];
          }
        }
      }
    }
  }
  if (grads) {
    for (std::size_t k = 0; k < nodes; ++k)
      mlp_backward(m.trunk, tcache[k], std::move(gt[k]), grads->trunk);
    for (std::size_t s = 0; s < ns; ++s)
      mlp_backward(m.branch, bcache[s], std::move(gb[s]), grads->branch);
  }
  return loss;
}

}  // namespace detail

OperatorModel train(const KernelDataset& ds, const TrainOptions& opts, TrainHistory* history) {
  if (ds.samples.empty()) throw validation_error("train: empty dataset");
  const int d = ds.spec.dim();
  const TriMesh mesh{ds.n};
  const std::size_t nodes = static_cast<std::size_t>(mesh.node_count());

  std::mt19937_64 rng(opts.seed);
  OperatorModel model;
  model.p = opts.p;
  model.eval_mesh = opts.eval_mesh;
  model.spec = ds.spec;
  model.ode = ds.ode;
  model.base = ds.base;
  model.gain = ds.ode.K;
  for (const auto& e : ds.spec.entries) {
    model.branch_lo.push_back(e.lo);
    model.branch_hi.push_back(e.hi);
  }
  for (const auto& e : ds.spec.entries)
    if (e.index < 4 && e.lo > 0.0) {  // reciprocal speed features, see normalize_params
      model.branch_lo.push_back(1.0 / e.hi);
      model.branch_hi.push_back(1.0 / e.lo);
    }
  model.branch = make_mlp(static_cast<int>(model.branch_lo.size()), opts.hidden,
                          opts.p * kChannels, rng);
  model.trunk = make_mlp(2, opts.hidden, opts.p * kChannels, rng);

  // trunk inputs ((x, xi) mapped to [-1,1]^2) and per-node channel weights
  std::vector<std::array<double, 2>> trunk_in(nodes);
  std::vector<std::array<double, kChannels>> wgt(nodes);
  std::vector<std::pair<int, int>> node_ab(nodes);
  for (int a = 0; a <= mesh.n; ++a)
    for (int b = 0; b <= a; ++b) {
      const std::size_t k = static_cast<std::size_t>(mesh.index(a, b));
      trunk_in[k] = {2.0 * a / mesh.n - 1.0, 2.0 * b / mesh.n - 1.0};
      wgt[k] = {1.0, 1.0, 1.0, 1.0, b == 0 ? 1.0 : 0.0, b == 0 ? 1.0 : 0.0};
      node_ab[k] = {a, b};
    }
  // emphasize the x = 1 row -- where the feedback law reads the kernels and
  // where the fit error otherwise concentrates -- by replicating its nodes;
  // replication gives the same expected gradient as loss weighting with far
  // lower per-batch variance
  for (int r = 1; r < std::max(1, static_cast<int>(std::lround(opts.boundary_weight))); ++r)
    for (int b = 0; b <= mesh.n; ++b) {
      const std::size_t src = static_cast<std::size_t>(mesh.index(mesh.n, b));
      trunk_in.push_back(trunk_in[src]);
      wgt.push_back(wgt[src]);
      node_ab.push_back(node_ab[src]);
    }
  const std::size_t nodes_ext = trunk_in.size();

  std::vector<std::vector<double>> branch_in(ds.samples.size());
  std::vector<std::vector<std::array<double, kChannels>>> target(ds.samples.size());
  for (std::size_t s = 0; s < ds.samples.size(); ++s) {
    branch_in[s] = model.normalize_params(ds.samples[s].params);
    target[s].resize(nodes_ext);
    const KernelGrid& g = ds.samples[s].grid;
    const Baseline bl =
        closed_form_baseline(ds.ode, ds.spec.apply(ds.base, ds.samples[s].params), ds.n);
    for (std::size_t k = 0; k < nodes_ext; ++k) {
      const auto [a, b] = node_ab[k];
      const std::size_t j = static_cast<std::size_t>(mesh.index(a, b));
      for (int c = 0; c < 3; ++c) target[s][k][static_cast<std::size_t>(c)] = g.K[j][static_cast<std::size_t>(c)];
      target[s][k][3] = g.N[j] - bl.nb[static_cast<std::size_t>(a - b)];
      target[s][k][4] =
          b == 0 ? g.gamma[static_cast<std::size_t>(a)][0] - bl.gamma[static_cast<std::size_t>(a)][0] : 0.0;
      target[s][k][5] =
          b == 0 ? g.gamma[static_cast<std::size_t>(a)][1] - bl.gamma[static_cast<std::size_t>(a)][1] : 0.0;
    }
  }

  // split by sample
  std::vector<std::size_t> order(ds.samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(uniform01(rng) * i)]);
  const std::size_t nval =
      std::min(ds.samples.size() - 1,
               static_cast<std::size_t>(std::lround(opts.val_fraction * ds.samples.size())));
  std::vector<std::vector<double>> train_b, val_b;
  std::vector<std::vector<std::array<double, kChannels>>> train_t, val_t;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const bool val = i < nval;
    (val ? val_b : train_b).push_back(branch_in[order[i]]);
    (val ? val_t : train_t).push_back(target[order[i]]);
  }

  // Adam state
  detail::Gradients g{zero_like(model.branch), zero_like(model.trunk)};
  detail::Gradients m1{zero_like(model.branch), zero_like(model.trunk)};
  detail::Gradients m2{zero_like(model.branch), zero_like(model.trunk)};
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long step = 0;
  double lr = opts.lr;

  auto adam_update = [&](Mlp& net, std::vector<Dense>& gr, std::vector<Dense>& mm,
                         std::vector<Dense>& vv) {
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      auto upd = [&](std::vector<double>& w, std::vector<double>& gw, std::vector<double>& mw,
                     std::vector<double>& vw) {
        for (std::size_t i = 0; i < w.size(); ++i) {
          mw[i] = b1 * mw[i] + (1.0 - b1) * gw[i];
          vw[i] = b2 * vw[i] + (1.0 - b2) * gw[i] * gw[i];
          w[i] -= lr * (mw[i] / c1) / (std::sqrt(vw[i] / c2) + eps);
          gw[i] = 0.0;
        }
      };
      upd(net.layers[l].W, gr[l].W, mm[l].W, vv[l].W);
      upd(net.layers[l].b, gr[l].b, mm[l].b, vv[l].b);
    }
  };

  std::vector<std::size_t> node_order(nodes_ext);
  std::iota(node_order.begin(), node_order.end(), 0);
  const int batch = std::max(1, opts.batch);

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    // cosine decay to lr/100: a constant step keeps Adam hovering above the
    // attainable loss once the gradient signal is small
    const double phase = opts.epochs > 1 ? double(epoch) / (opts.epochs - 1) : 0.0;
    lr = opts.lr * (0.01 + 0.99 * 0.5 * (1.0 + std::cos(M_PI * phase)));
    for (std::size_t i = node_order.size(); i > 1; --i)
      std::swap(node_order[i - 1], node_order[static_cast<std::size_t>(uniform01(rng) * i)]);
    for (std::size_t start = 0; start < nodes_ext; start += static_cast<std::size_t>(batch)) {
      const std::size_t stop = std::min(nodes_ext, start + static_cast<std::size_t>(batch));
      std::vector<std::array<double, 2>> bt(stop - start);
      std::vector<std::array<double, kChannels>> bw(stop - start);
      std::vector<std::vector<std::array<double, kChannels>>> btg(train_t.size());
      for (auto& v : btg) v.resize(stop - start);
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t src = node_order[k];
        bt[k - start] = trunk_in[src];
        bw[k - start] = wgt[src];
        for (std::size_t s = 0; s < train_t.size(); ++s) btg[s][k - start] = train_t[s][src];
      }
      const double loss = detail::loss_and_grad(model, bt, train_b, btg, bw, &g);
      if (!std::isfinite(loss))
        throw numeric_error("train: non-finite loss at epoch " + std::to_string(epoch));
      ++step;
      adam_update(model.branch, g.branch, m1.branch, m2.branch);
      adam_update(model.trunk, g.trunk, m1.trunk, m2.trunk);
    }
    if (history) {
      history->train_mse.push_back(
          detail::loss_and_grad(model, trunk_in, train_b, train_t, wgt, nullptr));
      history->val_mse.push_back(
          val_b.empty() ? 0.0
                        : detail::loss_and_grad(model, trunk_in, val_b, val_t, wgt, nullptr));
      if (!std::isfinite(history->train_mse.back()))
        throw numeric_error("train: non-finite loss at epoch " + std::to_string(epoch));
    }
  }
  return model;
}

KernelGrid infer(const OperatorModel& model, const std::vector<double>& params, int n) {
  const std::vector<double> bin = model.normalize_params(params);
  const std::vector<double> brow = model.branch.forward(bin);
  const int p = model.p;

  // evaluate on the model's fixed internal lattice, then resample; keeps
  // inference cost independent of the requested mesh
  const TriMesh emesh{model.eval_mesh};
  KernelGrid eval;
  eval.mesh = emesh;
  eval.nominal = model.spec.apply(model.base, params);
  eval.ode = model.ode;
  eval.gain = model.gain;
  eval.predicted = true;
  eval.extrapolated = !model.spec.in_range(params);
  eval.K.assign(static_cast<std::size_t>(emesh.node_count()), {});
  eval.N.assign(static_cast<std::size_t>(emesh.node_count()), 0.0);
  eval.gamma.assign(static_cast<std::size_t>(emesh.n + 1), {});

  // the branch row is fixed for this call, so fold it into the trunk's last
  // layer: per channel c the prediction is (sum_i brow[c*p+i] W_last[c*p+i,:])
  // . h + const, which shrinks the per-node output layer from p*channels rows
  // to one row per channel
  const Dense& dlast = model.trunk.layers.back();
  std::vector<double> Wf(static_cast<std::size_t>(kChannels) * dlast.in, 0.0);
  std::array<double, kChannels> bf{};
  for (int c = 0; c < kChannels; ++c)
    for (int i = 0; i < p; ++i) {
      const std::size_t row = static_cast<std::size_t>(c) * p + static_cast<std::size_t>(i);
      const double bw = brow[row];
      bf[static_cast<std::size_t>(c)] += bw * dlast.b[row];
      const double* w = dlast.W.data() + row * dlast.in;
      double* wf = Wf.data() + static_cast<std::size_t>(c) * dlast.in;
      for (int j = 0; j < dlast.in; ++j) wf[j] += bw * w[j];
    }

  std::size_t width = 2;
  for (const auto& d : model.trunk.layers) width = std::max(width, static_cast<std::size_t>(d.out));
  const std::size_t nhidden = model.trunk.layers.size() - 1;

  parallel_rows(emesh.n, [&](int a_lo, int a_hi) {
  std::vector<double> act(width), nxt(width);
  for (int a = a_lo; a < a_hi; ++a)
    for (int b = 0; b <= a; ++b) {
      const std::size_t k = static_cast<std::size_t>(emesh.index(a, b));
      act[0] = 2.0 * a / emesh.n - 1.0;
      act[1] = 2.0 * b / emesh.n - 1.0;
      for (std::size_t l = 0; l < nhidden; ++l) {
        const Dense& d = model.trunk.layers[l];
        for (int o = 0; o < d.out; ++o) {
          const double* w = d.W.data() + static_cast<std::size_t>(o) * d.in;
          double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
          int i = 0;
          for (; i + 4 <= d.in; i += 4) {
            s0 += w[i] * act[static_cast<std::size_t>(i)];
            s1 += w[i + 1] * act[static_cast<std::size_t>(i + 1)];
            s2 += w[i + 2] * act[static_cast<std::size_t>(i + 2)];
            s3 += w[i + 3] * act[static_cast<std::size_t>(i + 3)];
          }
          for (; i < d.in; ++i) s0 += w[i] * act[static_cast<std::size_t>(i)];
          nxt[static_cast<std::size_t>(o)] =
              std::tanh(d.b[static_cast<std::size_t>(o)] + ((s0 + s1) + (s2 + s3)));
        }
        std::swap(act, nxt);
      }
      auto channel = [&](int c) {
        const double* wf = Wf.data() + static_cast<std::size_t>(c) * dlast.in;
        double s0 = 0.0, s1 = 0.0;
        int i = 0;
        for (; i + 2 <= dlast.in; i += 2) {
          s0 += wf[i] * act[static_cast<std::size_t>(i)];
          s1 += wf[i + 1] * act[static_cast<std::size_t>(i + 1)];
        }
        for (; i < dlast.in; ++i) s0 += wf[i] * act[static_cast<std::size_t>(i)];
        const double acc = bf[static_cast<std::size_t>(c)] + s0 + s1;
        if (!std::isfinite(acc)) throw numeric_error("infer: non-finite prediction");
        return acc;
      };
      for (int c = 0; c < 3; ++c) eval.K[k][static_cast<std::size_t>(c)] = channel(c);
      eval.N[k] = channel(3);
      if (b == 0) eval.gamma[static_cast<std::size_t>(a)] = {channel(4), channel(5)};
    }
  });

  // the closed-form component is applied at the output resolution, so only
  // the learned correction is subject to resampling error
  auto add_baseline = [&](KernelGrid& g) {
    const Baseline bl = closed_form_baseline(model.ode, g.nominal, g.mesh.n);
    for (int a = 0; a <= g.mesh.n; ++a) {
      auto& ga = g.gamma[static_cast<std::size_t>(a)];
      ga[0] += bl.gamma[static_cast<std::size_t>(a)][0];
      ga[1] += bl.gamma[static_cast<std::size_t>(a)][1];
      std::size_t k = static_cast<std::size_t>(g.mesh.index(a, 0));
      for (int b = 0; b <= a; ++b, ++k) g.N[k] += bl.nb[static_cast<std::size_t>(a - b)];
    }
  };

  if (n == emesh.n) {
    add_baseline(eval);
    return eval;
  }

  KernelGrid out;
  out.mesh = TriMesh{n};
  out.nominal = eval.nominal;
  out.ode = eval.ode;
  out.gain = eval.gain;
  out.predicted = true;
  out.extrapolated = eval.extrapolated;
  out.K.assign(static_cast<std::size_t>(out.mesh.node_count()), {});
  out.N.assign(static_cast<std::size_t>(out.mesh.node_count()), 0.0);
  out.gamma.assign(static_cast<std::size_t>(n + 1), {});
  // fused bilinear resample, same cell rule as KernelGrid::evaluate but with
  // the per-row values hoisted out of the inner loop
  const int en = emesh.n;
  const double s = static_cast<double>(en) / n;
  parallel_rows(n, [&](int a_lo, int a_hi) {
  for (int a = a_lo; a < a_hi; ++a) {
    const double fa = a * s;
    const int a0 = std::min(static_cast<int>(fa), en - 1);
    const double tx = fa - a0;
    const auto& g0 = eval.gamma[static_cast<std::size_t>(a0)];
    const auto& g1 = eval.gamma[static_cast<std::size_t>(a0 + 1)];
    out.gamma[static_cast<std::size_t>(a)] = {g0[0] + tx * (g1[0] - g0[0]),
                                              g0[1] + tx * (g1[1] - g0[1])};
    const std::size_t row0 = static_cast<std::size_t>(emesh.index(a0, 0));
    const std::size_t row1 = static_cast<std::size_t>(emesh.index(a0 + 1, 0));
    const double ux = 1.0 - tx;
    std::size_t k = static_cast<std::size_t>(out.mesh.index(a, 0));
    int b = 0;
    // march cell by cell; all target nodes in one cell share its corners
    for (int b0 = 0; b0 <= a0 && b <= a; ++b0) {
      const std::size_t i00 = row0 + static_cast<std::size_t>(b0);
      const std::size_t i10 = row1 + static_cast<std::size_t>(b0);
      const bool diag_cell = b0 >= a0;
      const double k00a = eval.K[i00][0], k00b = eval.K[i00][1], k00c = eval.K[i00][2];
      const double k10a = eval.K[i10][0], k10b = eval.K[i10][1], k10c = eval.K[i10][2];
      const double k11a = eval.K[i10 + 1][0], k11b = eval.K[i10 + 1][1],
                   k11c = eval.K[i10 + 1][2];
      const double n00 = eval.N[i00], n10 = eval.N[i10], n11 = eval.N[i10 + 1];
      // the square cell's fourth corner is outside the triangle when b0 == a0
      const double k01a = diag_cell ? 0.0 : eval.K[i00 + 1][0];
      const double k01b = diag_cell ? 0.0 : eval.K[i00 + 1][1];
      const double k01c = diag_cell ? 0.0 : eval.K[i00 + 1][2];
      const double n01 = diag_cell ? 0.0 : eval.N[i00 + 1];
      // last b with b*s < b0+1, via the exact integer test b*en < (b0+1)*n
      const int b_end = b0 == a0 ? a : std::min(a, ((b0 + 1) * n - 1) / en);
      if (diag_cell) {
        for (; b <= b_end; ++b, ++k) {
          const double tb = b * s - b0;
          const double w10 = tx - tb;
          auto& kk = out.K[k];
          kk[0] = ux * k00a + w10 * k10a + tb * k11a;
          kk[1] = ux * k00b + w10 * k10b + tb * k11b;
          kk[2] = ux * k00c + w10 * k10c + tb * k11c;
          out.N[k] = ux * n00 + w10 * n10 + tb * n11;
        }
      } else {
        for (; b <= b_end; ++b, ++k) {
          const double tb = b * s - b0, ub = 1.0 - tb;
          const double w00 = ux * ub, w10 = tx * ub, w01 = ux * tb, w11 = tx * tb;
          auto& kk = out.K[k];
          kk[0] = w00 * k00a + w10 * k10a + w01 * k01a + w11 * k11a;
          kk[1] = w00 * k00b + w10 * k10b + w01 * k01b + w11 * k11b;
          kk[2] = w00 * k00c + w10 * k10c + w01 * k01c + w11 * k11c;
          out.N[k] = w00 * n00 + w10 * n10 + w01 * n01 + w11 * n11;
        }
      }
    }
  }
  });
  add_baseline(out);
  return out;
}

std::string model_to_json(const OperatorModel& model) {
  Json j;
  j["arch"] = {{"activation", "tanh"}, {"p", model.p}, {"channels", kChannels}};
  j["p"] = model.p;
  j["channels"] = kChannels;
  j["eval_mesh"] = model.eval_mesh;
  j["normalization"] = {{"lo", model.branch_lo}, {"hi", model.branch_hi}};
  j["branch"] = mlp_to_json(model.branch);
  j["trunk"] = mlp_to_json(model.trunk);
  j["param_spec"] = spec_to_json(model.spec);
  j["ode"] = ode_to_json(model.ode);
  j["base"] = mode_to_json(model.base);
  j["gain"] = model.gain.a;
  return j.dump();
}

OperatorModel model_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw parse_error(std::string("model: ") + e.what());
  }
  try {
    OperatorModel m;
    m.p = j.at("p").get<int>();
    if (j.at("channels").get<int>() != kChannels)
      throw parse_error("model: unexpected channel count");
    m.eval_mesh = j.at("eval_mesh").get<int>();
    j.at("normalization").at("lo").get_to(m.branch_lo);
    j.at("normalization").at("hi").get_to(m.branch_hi);
    m.branch = mlp_from_json(j.at("branch"));
    m.trunk = mlp_from_json(j.at("trunk"));
    m.spec = spec_from_json(j.at("param_spec"));
    m.ode = ode_from_json(j.at("ode"));
    m.base = mode_from_json(j.at("base"));
    j.at("gain").get_to(m.gain.a);
    if (m.branch.output_dim() != m.p * kChannels || m.trunk.output_dim() != m.p * kChannels)
      throw parse_error("model: head width does not match p * channels");
    if (m.branch.input_dim() != static_cast<int>(m.branch_lo.size()))
      throw parse_error("model: normalization dimension mismatch");
    return m;
  } catch (const Json::exception& e) {
    throw parse_error(std::string("model: ") + e.what());
  }
}

void save_model(const OperatorModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw parse_error("model: cannot open " + path.string() + " for writing");
  out << model_to_json(model);
}

OperatorModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("model: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

}  // namespace bkno
