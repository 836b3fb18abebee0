#include <cmath>
#include <cstdio>
#include <random>

#include "bkno/config.hpp"
#include "bkno/errors.hpp"
#include "bkno/neural_operator.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bkno;

namespace {

ScenarioConfig section() {
  return load_config_file(std::string(BKNO_DATA_DIR) + "/paper_s61.json");
}

int lambda_minus_index() {
  for (int i = 0; i < kParamVectorSize; ++i)
    if (std::string(param_entry_name(i)) == "lambda_minus") return i;
  FAIL("lambda_minus entry missing");
  return -1;
}

ParamSpec lambda_spec(double lo, double hi) {
  ParamSpec s;
  s.entries.push_back({lambda_minus_index(), lo, hi});
  return s;
}

}  // namespace

TEST_CASE("parameter flattening round trip") {
  const auto cfg = section();
  const auto v = flatten_params(cfg.nominal);
  CHECK(unflatten_params(v) == cfg.nominal);
  CHECK(v[static_cast<std::size_t>(lambda_minus_index())] == 1.0);
  const auto spec = lambda_spec(0.8, 1.8);
  const ModeParams m = spec.apply(cfg.nominal, {1.3});
  CHECK(m.lambda_minus == 1.3);
  CHECK(m.Q == cfg.nominal.Q);
  CHECK(spec.in_range({1.0}));
  CHECK_FALSE(spec.in_range({2.0}));
}

TEST_CASE("dataset draws are deterministic; degenerate range hits the nominal") {
  const auto cfg = section();
  const auto a = generate_dataset(cfg.ode, cfg.nominal, lambda_spec(0.8, 1.8), 4, 12, 5);
  const auto b = generate_dataset(cfg.ode, cfg.nominal, lambda_spec(0.8, 1.8), 4, 12, 5);
  for (int i = 0; i < 4; ++i)
    CHECK(a.samples[static_cast<std::size_t>(i)].params ==
          b.samples[static_cast<std::size_t>(i)].params);

  const auto d = generate_dataset(cfg.ode, cfg.nominal, lambda_spec(1.0, 1.0), 1, 12, 5);
  const auto nominal = solve_kernels(cfg.nominal, cfg.ode, 12);
  CHECK(d.samples[0].grid.K == nominal.K);
  CHECK(d.samples[0].grid.N == nominal.N);
}

TEST_CASE("dataset JSON round trip") {
  const auto cfg = section();
  const auto ds = generate_dataset(cfg.ode, cfg.nominal, lambda_spec(0.8, 1.8), 3, 10, 11);
  const auto again = dataset_from_json(dataset_to_json(ds));
  REQUIRE(again.samples.size() == 3);
  CHECK(again.n == 10);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(again.samples[i].params == ds.samples[i].params);
    CHECK(again.samples[i].grid.K == ds.samples[i].grid.K);
  }
  CHECK_THROWS_AS(dataset_from_json("{\"n\": 3}"), parse_error);
}

TEST_CASE("reverse-mode gradients match central finite differences") {
  const auto cfg = section();
  const auto ds = generate_dataset(cfg.ode, cfg.nominal, lambda_spec(0.8, 1.8), 3, 6, 3);
  TrainOptions opts;
  opts.p = 2;
  opts.hidden = {4};
  opts.epochs = 1;
  opts.batch = 1000;
  opts.seed = 9;
  opts.val_fraction = 0.0;
  OperatorModel model = train(ds, opts, nullptr);

  // rebuild the training tensors the way train() does
  const TriMesh mesh{ds.n};
  std::vector<std::array<double, 2>> trunk_in;
  std::vector<std::array<double, kChannels>> mask;
  for (int a = 0; a <= mesh.n; ++a)
    for (int b = 0; b <= a; ++b) {
      trunk_in.push_back({2.0 * a / mesh.n - 1.0, 2.0 * b / mesh.n - 1.0});
      mask.push_back({1.0, 1.0, 1.0, 1.0, b == 0 ? 1.0 : 0.0, b == 0 ? 1.0 : 0.0});
    }
  std::vector<std::vector<double>> branch_in;
  std::vector<std::vector<std::array<double, kChannels>>> target;
  for (const auto& s : ds.samples) {
    branch_in.push_back(model.normalize_params(s.params));
    std::vector<std::array<double, kChannels>> rows;
    for (int a = 0; a <= mesh.n; ++a)
      for (int b = 0; b <= a; ++b) {
        const std::size_t k = static_cast<std::size_t>(mesh.index(a, b));
        rows.push_back({s.grid.K[k][0], s.grid.K[k][1], s.grid.K[k][2], s.grid.N[k],
                        b == 0 ? s.grid.gamma[static_cast<std::size_t>(a)][0] : 0.0,
                        b == 0 ? s.grid.gamma[static_cast<std::size_t>(a)][1] : 0.0});
      }
    target.push_back(std::move(rows));
  }

  detail::Gradients g;
  for (const auto& d : model.branch.layers) g.branch.push_back({d.in, d.out,
      std::vector<double>(d.W.size(), 0.0), std::vector<double>(d.b.size(), 0.0)});
  for (const auto& d : model.trunk.layers) g.trunk.push_back({d.in, d.out,
      std::vector<double>(d.W.size(), 0.0), std::vector<double>(d.b.size(), 0.0)});
  detail::loss_and_grad(model, trunk_in, branch_in, target, mask, &g);

  auto loss_at = [&] { return detail::loss_and_grad(model, trunk_in, branch_in, target, mask, nullptr); };
  // block-wise norm comparison: elementwise ratios on near-zero entries sit
  // at the O(h^2) truncation floor of the difference quotient itself
  auto check_block = [&](std::vector<double>& w, const std::vector<double>& gw) {
    double diff2 = 0.0, ref2 = 0.0;
    for (std::size_t i = 0; i < w.size(); i += std::max<std::size_t>(1, w.size() / 7)) {
      const double keep = w[i], h = 1e-5;
      w[i] = keep + h;
      const double lp = loss_at();
      w[i] = keep - h;
      const double lm = loss_at();
      w[i] = keep;
      const double fd = (lp - lm) / (2 * h);
      diff2 += (fd - gw[i]) * (fd - gw[i]);
      ref2 += std::max(fd * fd, gw[i] * gw[i]);
    }
    CHECK(std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-12) <= 1e-4);
  };
  for (std::size_t l = 0; l < model.branch.layers.size(); ++l) {
    check_block(model.branch.layers[l].W, g.branch[l].W);
    check_block(model.branch.layers[l].b, g.branch[l].b);
  }
  for (std::size_t l = 0; l < model.trunk.layers.size(); ++l) {
    check_block(model.trunk.layers[l].W, g.trunk[l].W);
    check_block(model.trunk.layers[l].b, g.trunk[l].b);
  }
}

TEST_CASE("single sample is interpolated to tiny loss") {
  const auto cfg = section();
  const auto ds = generate_dataset(cfg.ode, cfg.nominal, lambda_spec(1.0, 1.0), 1, 8, 2);
  TrainOptions opts;
  opts.p = 8;
  opts.hidden = {32, 32};
  opts.epochs = 30000;
  opts.batch = 64;
  opts.lr = 3e-3;
  opts.seed = 1;
  opts.val_fraction = 0.0;
  TrainHistory hist;
  train(ds, opts, &hist);
  CHECK(hist.train_mse.back() <= 5e-6);
}

TEST_CASE("prediction is the branch-trunk inner product; normalization inverts") {
  const auto cfg = section();
  const auto ds = generate_dataset(cfg.ode, cfg.nominal, lambda_spec(0.8, 1.8), 2, 8, 4);
  TrainOptions opts;
  opts.p = 4;
  opts.hidden = {8};
  opts.epochs = 2;
  opts.seed = 3;
  opts.val_fraction = 0.0;
  OperatorModel model = train(ds, opts, nullptr);
  model.eval_mesh = 8;

  const std::vector<double> params{1.23};
  const KernelGrid g = infer(model, params, 8);
  CHECK(g.predicted);
  const auto brow = model.branch.forward(model.normalize_params(params));
  // N carries the closed-form component on top of the inner product
  Mat2 decoupled = cfg.ode.A;
  decoupled(0, 0) -= cfg.nominal.sigma_mm;
  decoupled(1, 1) -= cfg.nominal.sigma_mm;
  auto n_base = [&](double x) {
    const Row2 gb = cfg.ode.K * oracle::expm2((x / params[0]) * decoupled);
    return (gb(0, 0) * cfg.ode.B(0, 0) + gb(0, 1) * cfg.ode.B(1, 0)) / params[0];
  };
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const int a = static_cast<int>(rng() % 9);
    const int b = a == 0 ? 0 : static_cast<int>(rng() % (a + 1));
    const auto trow = model.trunk.forward({2.0 * a / 8.0 - 1.0, 2.0 * b / 8.0 - 1.0});
    for (int c = 0; c < 4; ++c) {
      double dot = 0.0;
      for (int i = 0; i < model.p; ++i)
        dot += brow[static_cast<std::size_t>(c * model.p + i)] *
               trow[static_cast<std::size_t>(c * model.p + i)];
      const std::size_t k = static_cast<std::size_t>(g.mesh.index(a, b));
      const double got = c < 3 ? g.K[k][static_cast<std::size_t>(c)] : g.N[k];
      const double want = c < 3 ? dot : dot + n_base((a - b) / 8.0);
      CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
  }

  const auto z = model.normalize_params(params);
  const double back = model.branch_lo[0] + (z[0] + 1.0) / 2.0 * (model.branch_hi[0] - model.branch_lo[0]);
  CHECK(std::abs(back - params[0]) <= 1e-12);
}

TEST_CASE("extrapolation beyond training ranges is flagged") {
  const auto cfg = section();
  const auto ds = generate_dataset(cfg.ode, cfg.nominal, lambda_spec(0.8, 1.8), 2, 8, 4);
  TrainOptions opts;
  opts.p = 4;
  opts.hidden = {8};
  opts.epochs = 1;
  opts.seed = 3;
  const OperatorModel model = train(ds, opts, nullptr);
  CHECK_FALSE(infer(model, {1.0}, 8).extrapolated);
  CHECK(infer(model, {2.5}, 8).extrapolated);
}

TEST_CASE("model JSON round trip preserves predictions and survives truncation") {
  const auto cfg = section();
  const auto ds = generate_dataset(cfg.ode, cfg.nominal, lambda_spec(0.8, 1.8), 2, 8, 4);
  TrainOptions opts;
  opts.p = 4;
  opts.hidden = {8};
  opts.epochs = 2;
  opts.seed = 3;
  const OperatorModel model = train(ds, opts, nullptr);
  const std::string text = model_to_json(model);
  const OperatorModel again = model_from_json(text);
  std::mt19937_64 rng(23);
  auto u = [&] { return static_cast<double>((rng() >> 11) + 1) * 0x1.0p-53; };
  for (int trial = 0; trial < 100; ++trial) {
    const std::vector<double> in{2.0 * u() - 1.0, 2.0 * u() - 1.0};
    CHECK(model.trunk.forward(in) == again.trunk.forward(in));
  }
  CHECK_THROWS_AS(model_from_json(text.substr(0, text.size() / 2)), parse_error);
}

TEST_CASE("training loss trends downward") {
  const auto cfg = section();
  const auto ds = generate_dataset(cfg.ode, cfg.nominal, lambda_spec(0.8, 1.8), 6, 10, 8);
  TrainOptions opts;
  opts.p = 8;
  opts.hidden = {16, 16};
  opts.epochs = 60;
  opts.seed = 4;
  TrainHistory hist;
  train(ds, opts, &hist);
  auto window = [&](std::size_t k) {
    double acc = 0.0;
    for (std::size_t j = k; j < k + 5; ++j) acc += hist.train_mse[j];
    return acc / 5.0;
  };
  for (std::size_t k = 10; k + 10 < hist.train_mse.size(); k += 5)
    CHECK(window(k + 5) <= window(k) * 1.05);
  CHECK(hist.train_mse.back() < hist.train_mse.front());
}
