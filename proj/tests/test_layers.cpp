#include <doctest.h>

#include <cmath>
#include <functional>

#include "msrgcn/errors.hpp"
#include "msrgcn/layers.hpp"
#include "test_util.hpp"

using namespace msrgcn;
using namespace msrgcn::layers;
using testutil::random_matrix;

namespace {

using LayerFn = std::function<Var(ForwardContext&, Var)>;

struct Run {
  Matrix out;
  std::vector<Matrix> param_grads;
  Matrix input_grad;
};

Run run_layer(const ModelParams& store, const LayerFn& f, const Matrix& x, std::size_t batch, Mode mode,
              const Matrix* weights, std::uint64_t dropout_seed = 3) {
  Rng rng(dropout_seed);
  Tape t;
  ForwardContext ctx(t, store, mode, &rng, batch);
  const Var in = t.input(x);
  const Var y = f(ctx, in);
  Run r;
  r.out = t.value(y);
  if (weights) {
    const std::pair<Var, Matrix> seed{y, *weights};
    t.backward(std::span<const std::pair<Var, Matrix>>(&seed, 1));
    r.param_grads.resize(store.size());
    t.for_each_parameter_grad([&](std::size_t id, const Matrix& g) { r.param_grads[id] = g; });
    r.input_grad = t.grad(in);
  }
  return r;
}

double weighted_sum(const Matrix& y, const Matrix& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

/// Max relative error over every learnable parameter entry and input entry.
double layer_gradcheck(ModelParams& store, const LayerFn& f, Matrix x, std::size_t batch, Mode mode) {
  Rng rng(11);
  const Matrix probe = run_layer(store, f, x, batch, mode, nullptr).out;
  const Matrix w = random_matrix(rng, probe.rows(), probe.cols());
  const Run base = run_layer(store, f, x, batch, mode, &w);
  const double eps = 1e-5;
  double worst = 0.0;
  auto numeric = [&](double& slot) {
    const double orig = slot;
    slot = orig + eps;
    const double up = weighted_sum(run_layer(store, f, x, batch, mode, nullptr).out, w);
    slot = orig - eps;
    const double down = weighted_sum(run_layer(store, f, x, batch, mode, nullptr).out, w);
    slot = orig;
    return (up - down) / (2 * eps);
  };
  for (std::size_t id = 0; id < store.size(); ++id) {
    if (!store.learnable(id)) continue;
    Matrix& p = store.at(id);
    const Matrix& g = base.param_grads[id];
    REQUIRE(g.size() == p.size());
    for (std::size_t i = 0; i < p.size(); ++i) worst = std::max(worst, testutil::rel_err(g[i], numeric(p[i])));
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    worst = std::max(worst, testutil::rel_err(base.input_grad[i], numeric(x[i])));
  }
  return worst;
}

}  // namespace

TEST_CASE("GCL forward equals tanh(gamma * (A H W) + beta) without statistics") {
  Rng rng(1);
  ModelParams store;
  const GclParams p = make_gcl(store, "g", 3, 2, 4, {NormMode::passthrough, 0.0}, rng);
  store.at(p.norm.gamma) = random_matrix(rng, 3, 4);
  store.at(p.norm.beta) = random_matrix(rng, 3, 4);
  const Matrix h = random_matrix(rng, 3, 2);
  const Run r = run_layer(store, [&](ForwardContext& c, Var v) { return gcl_forward(c, v, p); }, h, 1,
                          Mode::eval, nullptr);
  const Matrix& a = store.at(p.adjacency);
  const Matrix& w = store.at(p.weight);
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t f = 0; f < 4; ++f) {
      double s = 0.0;
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t i = 0; i < 2; ++i) s += a(k, j) * h(j, i) * w(i, f);
      const double want = std::tanh(store.at(p.norm.gamma)(k, f) * s + store.at(p.norm.beta)(k, f));
      CHECK(r.out(k, f) == doctest::Approx(want).epsilon(1e-13));
    }
  }
}

TEST_CASE("parameter shapes and init ranges") {
  Rng rng(2);
  ModelParams store;
  const GclParams p = make_gcl(store, "g", 9, 5, 7, {}, rng);
  CHECK(store.at(p.adjacency).rows() == 9);
  CHECK(store.at(p.adjacency).cols() == 9);
  CHECK(store.at(p.weight).rows() == 5);
  CHECK(store.at(p.weight).cols() == 7);
  CHECK(max_abs(store.at(p.adjacency)) <= 1.0 / 3.0);
  CHECK(max_abs(store.at(p.weight)) <= 1.0 / std::sqrt(5.0));
  CHECK(store.path(p.norm.gamma) == "g/norm/gamma");
  CHECK_FALSE(store.learnable(p.norm.running_mean));
  CHECK(store.at(p.norm.running_var)(3, 2) == 1.0);
  CHECK_THROWS_AS(make_gcl(store, "bad", 3, 0, 2, {}, rng), ConfigError);
}

TEST_CASE("learnable count of a res-GCN block is 2(K² + F² + 2KF)") {
  Rng rng(3);
  for (auto [k, f] : {std::pair<std::size_t, std::size_t>{66, 64}, {12, 512}, {6, 4}}) {
    ModelParams store;
    const ResBlock b = make_res_block(store, "b", LayerKind::gcn, k, f, {}, rng);
    CHECK(learnable_scalars(store, b) == 2 * (k * k + f * f + 2 * k * f));
    ModelParams fstore;
    const ResBlock fb = make_res_block(fstore, "b", LayerKind::fcl, k, f, {}, rng);
    CHECK(learnable_scalars(fstore, fb) == 2 * ((k * f) * (k * f) + 2 * k * f));
    CHECK(learnable_scalars(fstore, fb) > learnable_scalars(store, b));
  }
}

TEST_CASE("per-entry normalization standardizes each entry across the batch") {
  Rng rng(4);
  ModelParams store;
  const NormParams n = make_norm(store, "n", 3, 2, NormMode::per_entry);
  const std::size_t batch = 5;
  const Matrix x = random_matrix(rng, 3 * batch, 2, -3, 3);
  const Run r = run_layer(store, [&](ForwardContext& c, Var v) { return norm_forward(c, v, n); }, x, batch,
                          Mode::train, nullptr);
  for (std::size_t e = 0; e < 6; ++e) {
    double m = 0, v = 0;
    for (std::size_t b = 0; b < batch; ++b) m += r.out[b * 6 + e];
    m /= batch;
    for (std::size_t b = 0; b < batch; ++b) v += (r.out[b * 6 + e] - m) * (r.out[b * 6 + e] - m);
    v /= batch;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("per-feature normalization pools nodes and batch") {
  Rng rng(5);
  ModelParams store;
  const NormParams n = make_norm(store, "n", 4, 3, NormMode::per_feature);
  CHECK(store.at(n.gamma).rows() == 1);
  const Matrix x = random_matrix(rng, 8, 3, -2, 2);
  const Run r = run_layer(store, [&](ForwardContext& c, Var v) { return norm_forward(c, v, n); }, x, 2,
                          Mode::train, nullptr);
  for (std::size_t f = 0; f < 3; ++f) {
    double m = 0;
    for (std::size_t row = 0; row < 8; ++row) m += r.out(row, f);
    CHECK(std::abs(m / 8) < 1e-12);
  }
}

TEST_CASE("eval mode normalizes with running statistics") {
  ModelParams store;
  const NormParams n = make_norm(store, "n", 1, 2, NormMode::per_entry);
  store.at(n.running_mean) = Matrix{{1.0, -1.0}};
  store.at(n.running_var) = Matrix{{4.0, 0.25}};
  store.at(n.gamma) = Matrix{{2.0, 1.0}};
  store.at(n.beta) = Matrix{{0.5, 0.0}};
  const Matrix x{{3.0, 0.0}};
  const Run r = run_layer(store, [&](ForwardContext& c, Var v) { return norm_forward(c, v, n); }, x, 1,
                          Mode::eval, nullptr);
  CHECK(r.out(0, 0) == doctest::Approx(2.0 * 2.0 / std::sqrt(4.0 + kNormEps) + 0.5));
  CHECK(r.out(0, 1) == doctest::Approx(1.0 / std::sqrt(0.25 + kNormEps)));
}

TEST_CASE("running statistics follow momentum with unbiased variance") {
  ModelParams store;
  const NormParams n = make_norm(store, "n", 1, 1, NormMode::per_entry);
  const Matrix x{{1.0}, {2.0}, {6.0}};
  Rng rng(0);
  Tape t;
  ForwardContext ctx(t, store, Mode::train, &rng, 3);
  (void)norm_forward(ctx, t.input(x), n);
  REQUIRE(ctx.stat_updates().size() == 1);
  apply_stat_updates(store, ctx.stat_updates());
  // mean 3, unbiased variance (4 + 1 + 9) / 2 = 7
  CHECK(store.at(n.running_mean)(0, 0) == doctest::Approx(0.9 * 0.0 + 0.1 * 3.0));
  CHECK(store.at(n.running_var)(0, 0) == doctest::Approx(0.9 * 1.0 + 0.1 * 7.0));
}

TEST_CASE("gradients of layers match central differences") {
  Rng rng(6);
  const double tol = 1e-6;
  SUBCASE("GCL, passthrough") {
    ModelParams store;
    const GclParams p = make_gcl(store, "g", 4, 3, 2, {NormMode::passthrough, 0.0}, rng);
    CHECK(layer_gradcheck(store, [&](ForwardContext& c, Var v) { return gcl_forward(c, v, p); },
                          random_matrix(rng, 8, 3), 2, Mode::train) < tol);
  }
  SUBCASE("GCL, per-entry batch statistics") {
    ModelParams store;
    const GclParams p = make_gcl(store, "g", 3, 2, 2, {NormMode::per_entry, 0.0}, rng);
    CHECK(layer_gradcheck(store, [&](ForwardContext& c, Var v) { return gcl_forward(c, v, p); },
                          random_matrix(rng, 12, 2), 4, Mode::train) < tol);
  }
  SUBCASE("GCL, per-feature batch statistics") {
    ModelParams store;
    const GclParams p = make_gcl(store, "g", 3, 2, 3, {NormMode::per_feature, 0.0}, rng);
    CHECK(layer_gradcheck(store, [&](ForwardContext& c, Var v) { return gcl_forward(c, v, p); },
                          random_matrix(rng, 9, 2), 3, Mode::train) < tol);
  }
  SUBCASE("GCL, eval running statistics") {
    ModelParams store;
    const GclParams p = make_gcl(store, "g", 3, 2, 3, {NormMode::per_entry, 0.0}, rng);
    store.at(p.norm.running_mean) = random_matrix(rng, 3, 3);
    store.at(p.norm.running_var) = random_matrix(rng, 3, 3, 0.5, 2.0);
    CHECK(layer_gradcheck(store, [&](ForwardContext& c, Var v) { return gcl_forward(c, v, p); },
                          random_matrix(rng, 6, 2), 2, Mode::eval) < tol);
  }
  SUBCASE("GCL with dropout, fixed mask") {
    ModelParams store;
    const GclParams p = make_gcl(store, "g", 3, 2, 3, {NormMode::passthrough, 0.3}, rng);
    CHECK(layer_gradcheck(store, [&](ForwardContext& c, Var v) { return gcl_forward(c, v, p); },
                          random_matrix(rng, 6, 2), 2, Mode::train) < tol);
  }
  SUBCASE("res-GCN block") {
    ModelParams store;
    const ResBlock b = make_res_block(store, "b", LayerKind::gcn, 3, 4, {NormMode::per_entry, 0.0}, rng);
    CHECK(layer_gradcheck(store, [&](ForwardContext& c, Var v) { return res_block_forward(c, v, b); },
                          random_matrix(rng, 9, 4), 3, Mode::train) < tol);
  }
  SUBCASE("res-FCL block") {
    ModelParams store;
    const ResBlock b = make_res_block(store, "b", LayerKind::fcl, 3, 2, {NormMode::passthrough, 0.0}, rng);
    CHECK(layer_gradcheck(store, [&](ForwardContext& c, Var v) { return res_block_forward(c, v, b); },
                          random_matrix(rng, 6, 2), 2, Mode::train) < tol);
  }
  SUBCASE("resample") {
    ModelParams store;
    const ResampleParams p = make_resample(store, "r", 6, 3, 4, 5, rng);
    CHECK(layer_gradcheck(store, [&](ForwardContext& c, Var v) { return resample(c, v, p); },
                          random_matrix(rng, 12, 4), 2, Mode::train) < tol);
  }
}

TEST_CASE("resample maps nodes then features without a nonlinearity") {
  Rng rng(8);
  ModelParams store;
  const ResampleParams p = make_resample(store, "r", 4, 2, 3, 5, rng);
  const Matrix h = random_matrix(rng, 4, 3);
  const Run r = run_layer(store, [&](ForwardContext& c, Var v) { return resample(c, v, p); }, h, 1, Mode::eval,
                          nullptr);
  const Matrix want = matmul(matmul(store.at(p.node_map).transposed(), h), store.at(p.feat_map));
  CHECK(r.out.rows() == 2);
  CHECK(r.out.cols() == 5);
  CHECK(max_abs(subtract(r.out, want)) < 1e-14);
}

TEST_CASE("res block with zeroed second layer is the identity") {
  Rng rng(9);
  ModelParams store;
  const ResBlock b = make_res_block(store, "b", LayerKind::gcn, 3, 4, {NormMode::passthrough, 0.0}, rng);
  const auto& blk = std::get<ResGcnBlock>(b);
  store.at(blk.second.weight).fill(0.0);
  const Matrix h = random_matrix(rng, 6, 4);
  const Run r = run_layer(store, [&](ForwardContext& c, Var v) { return res_block_forward(c, v, b); }, h, 2,
                          Mode::eval, nullptr);
  CHECK(r.out == h);
}

TEST_CASE("dropout") {
  ModelParams store;
  const Matrix x(100, 100, 1.0);
  SUBCASE("preserves the expectation within 2% over 10^4 masks") {
    const Run r = run_layer(store, [](ForwardContext& c, Var v) { return dropout_forward(c, v, 0.3); }, x, 1,
                            Mode::train, nullptr, 1234);
    double mean = 0.0;
    std::size_t zeros = 0;
    for (double v : r.out.data()) {
      mean += v;
      zeros += v == 0.0;
    }
    mean /= double(r.out.size());
    CHECK(std::abs(mean - 1.0) < 0.02);
    CHECK(std::abs(double(zeros) / 1e4 - 0.3) < 0.02);
  }
  SUBCASE("is the identity in eval mode and at rate 0") {
    CHECK(run_layer(store, [](ForwardContext& c, Var v) { return dropout_forward(c, v, 0.5); }, x, 1, Mode::eval,
                    nullptr)
              .out == x);
    CHECK(run_layer(store, [](ForwardContext& c, Var v) { return dropout_forward(c, v, 0.0); }, x, 1, Mode::train,
                    nullptr)
              .out == x);
  }
  SUBCASE("train mode needs a random stream") {
    Tape t;
    ForwardContext ctx(t, store, Mode::train, nullptr, 1);
    CHECK_THROWS_AS(dropout_forward(ctx, t.input(x), 0.5), UsageError);
  }
}

TEST_CASE("GCL rejects inputs of the wrong shape") {
  Rng rng(10);
  ModelParams store;
  const GclParams p = make_gcl(store, "g", 3, 2, 2, {}, rng);
  Tape t;
  ForwardContext ctx(t, store, Mode::eval, nullptr, 2);
  CHECK_THROWS_AS(gcl_forward(ctx, t.input(Matrix(3, 2)), p), ShapeError);
}
