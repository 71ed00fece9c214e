#include <doctest.h>

#include <cmath>
#include <limits>

#include "msrgcn/adam.hpp"
#include "msrgcn/errors.hpp"
#include "msrgcn/matrix.hpp"
#include "msrgcn/params.hpp"
#include "msrgcn/tape.hpp"
#include "test_util.hpp"

using namespace msrgcn;
using testutil::op_gradcheck;
using testutil::random_matrix;

namespace {

Matrix triple_loop(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += (long double)a(i, p) * b(p, j);
      c(i, j) = (double)s;
    }
  return c;
}

}  // namespace

TEST_CASE("matrix construction and access") {
  Matrix m{{1, 2, 3}, {4, 5, 6}};
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m(1, 0) == 4);
  CHECK(m[5] == 6);
  CHECK(m.transposed()(2, 1) == 6);
  CHECK(m.reshaped(3, 2)(1, 0) == 3);
  CHECK_THROWS_AS(m.reshaped(4, 2), ShapeError);
  CHECK(Matrix::identity(3)(1, 1) == 1);
  CHECK(Matrix::identity(3)(1, 2) == 0);
  CHECK_THROWS_AS(Matrix(1, 2, std::vector<double>{1.0, std::nan("")}), DataError);
  CHECK_THROWS_AS(Matrix(1, 2, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("matmul matches a triple-loop oracle on 100 random cases") {
  Rng rng(42);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const std::size_t r = 1 + rng.below(9), p = 1 + rng.below(9), c = 1 + rng.below(9);
    const Matrix a = random_matrix(rng, r, p, -10, 10);
    const Matrix b = random_matrix(rng, p, c, -10, 10);
    const Matrix got = matmul(a, b);
    const Matrix want = triple_loop(a, b);
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, testutil::rel_err(got[i], want[i]));
    const Matrix at = a.transposed();
    const Matrix bt = b.transposed();
    CHECK(max_abs(subtract(matmul_tn(at, b), got)) <= 1e-12 * (1 + max_abs(got)));
    CHECK(max_abs(subtract(matmul_nt(a, bt), got)) <= 1e-12 * (1 + max_abs(got)));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("shape errors name both operands") {
  const Matrix a(2, 3), b(2, 3);
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    const auto first = what.find(a.shape_string());
    CHECK(first != std::string::npos);
    CHECK(what.find(b.shape_string(), first + 1) != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, Matrix(3, 2)), ShapeError);
}

TEST_CASE("tanh value oracle") {
  Tape t;
  const Var x = t.input(Matrix{{0.5, 0.0, -0.5}});
  const Matrix& y = t.value(msrgcn::tanh(t, x));
  CHECK(y(0, 0) == doctest::Approx(0.46211715726).epsilon(1e-10));
  CHECK(y(0, 1) == 0.0);
  CHECK(y(0, 2) == doctest::Approx(-0.46211715726).epsilon(1e-10));
}

TEST_CASE("op gradients match central differences") {
  Rng rng(7);
  const double tol = 1e-6;
  SUBCASE("matmul") {
    CHECK(op_gradcheck([](Tape& t, auto& v) { return matmul(t, v[0], v[1]); },
                       {random_matrix(rng, 3, 4), random_matrix(rng, 4, 2)}) < tol);
  }
  SUBCASE("add") {
    CHECK(op_gradcheck([](Tape& t, auto& v) { return add(t, v[0], v[1]); },
                       {random_matrix(rng, 3, 4), random_matrix(rng, 3, 4)}) < tol);
  }
  SUBCASE("tanh") {
    CHECK(op_gradcheck([](Tape& t, auto& v) { return msrgcn::tanh(t, v[0]); }, {random_matrix(rng, 4, 5, -2, 2)}) < tol);
  }
  SUBCASE("transpose and reshape") {
    CHECK(op_gradcheck([](Tape& t, auto& v) { return reshape(t, transpose(t, v[0]), 2, 6); },
                       {random_matrix(rng, 3, 4)}) < tol);
  }
  SUBCASE("mul_const") {
    const Matrix mask = random_matrix(rng, 3, 3);
    CHECK(op_gradcheck([&](Tape& t, auto& v) { return mul_const(t, v[0], mask); }, {random_matrix(rng, 3, 3)}) < tol);
  }
  SUBCASE("concat_cols") {
    CHECK(op_gradcheck([](Tape& t, auto& v) { return concat_cols(t, v[0], v[1]); },
                       {random_matrix(rng, 3, 2), random_matrix(rng, 3, 4)}) < tol);
  }
  SUBCASE("node_mix square and rectangular") {
    CHECK(op_gradcheck([](Tape& t, auto& v) { return node_mix(t, v[0], v[1]); },
                       {random_matrix(rng, 4, 4), random_matrix(rng, 12, 3)}) < tol);
    CHECK(op_gradcheck([](Tape& t, auto& v) { return node_mix(t, v[0], v[1]); },
                       {random_matrix(rng, 2, 4), random_matrix(rng, 8, 3)}) < tol);
  }
  SUBCASE("composite chain") {
    CHECK(op_gradcheck(
              [](Tape& t, auto& v) {
                return msrgcn::tanh(t, add(t, matmul(t, node_mix(t, v[0], v[1]), v[2]), v[1]));
              },
              {random_matrix(rng, 3, 3), random_matrix(rng, 6, 2), random_matrix(rng, 2, 2)}) < tol);
  }
}

TEST_CASE("node_mix applies the operator per stacked block") {
  const Matrix a{{1, 2}, {0, 1}};
  const Matrix h{{1, 0}, {0, 1}, {2, 3}, {4, 5}};
  Tape t;
  const Matrix& y = t.value(node_mix(t, t.input(a), t.input(h)));
  const Matrix want{{1, 2}, {0, 1}, {10, 13}, {4, 5}};
  CHECK(y == want);
}

TEST_CASE("non-finite op output aborts naming the op") {
  Tape t;
  const Var a = t.input(Matrix{{1e308}});
  try {
    (void)add(t, a, a);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
}

TEST_CASE("backward runs once and only reaches operands requiring gradients") {
  Tape t;
  const Var c = t.constant(Matrix{{2.0}});
  const Var x = t.input(Matrix{{3.0}});
  const Var y = matmul(t, c, x);
  const std::pair<Var, Matrix> seed{y, Matrix{{1.0}}};
  t.backward(std::span<const std::pair<Var, Matrix>>(&seed, 1));
  CHECK(t.grad(x)(0, 0) == 2.0);
  CHECK_FALSE(t.has_grad(c));
  CHECK_THROWS_AS(t.backward(std::span<const std::pair<Var, Matrix>>(&seed, 1)), UsageError);
}

TEST_CASE("parameter leaves accumulate into their ids") {
  Matrix w{{1.0, 2.0}};
  Tape t;
  const Var p = t.parameter(w, 5);
  const Var y = add(t, p, p);
  const std::pair<Var, Matrix> seed{y, Matrix{{1.0, 3.0}}};
  t.backward(std::span<const std::pair<Var, Matrix>>(&seed, 1));
  int calls = 0;
  t.for_each_parameter_grad([&](std::size_t id, const Matrix& g) {
    ++calls;
    CHECK(id == 5);
    CHECK(g == Matrix{{2.0, 6.0}});
  });
  CHECK(calls == 1);
}

TEST_CASE("adam single step oracle") {
  Matrix p{{1.0}};
  p.ensure_grad();
  p.grad()[0] = 0.5;
  AdamState s(p);
  adam_step(p, s, 2e-4);
  // m̂ = g and v̂ = g², so the first step moves by lr·g/(|g| + eps).
  const double want = 1.0 - 2e-4 * 0.5 / (0.5 + 1e-8);
  CHECK(p(0, 0) == doctest::Approx(want).epsilon(1e-14));
  CHECK(p(0, 0) == doctest::Approx(0.9998).epsilon(1e-9));
  CHECK(s.t == 1);
}

TEST_CASE("adam two steps follow the bias-corrected recurrence") {
  Matrix p{{0.3, -0.2}};
  p.ensure_grad();
  AdamState s(p);
  const double g1[2] = {0.1, -2.0}, g2[2] = {-0.4, 1.0};
  double m[2] = {0, 0}, v[2] = {0, 0}, want[2] = {0.3, -0.2};
  for (int step = 1; step <= 2; ++step) {
    const double* g = step == 1 ? g1 : g2;
    for (int i = 0; i < 2; ++i) {
      p.grad()[i] = g[i];
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, step));
      const double vh = v[i] / (1 - std::pow(0.999, step));
      want[i] -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
    }
    adam_step(p, s, 1e-3);
  }
  CHECK(p(0, 0) == doctest::Approx(want[0]).epsilon(1e-13));
  CHECK(p(0, 1) == doctest::Approx(want[1]).epsilon(1e-13));
}

TEST_CASE("adam rejects missing or non-finite gradients") {
  Matrix p{{1.0}};
  AdamState s(p);
  CHECK_THROWS_AS(adam_step(p, s, 1e-3), UsageError);
  p.ensure_grad();
  p.grad()[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(adam_step(p, s, 1e-3), NumericError);
}

TEST_CASE("learning rate schedule") {
  CHECK(lr_at(0) == 2e-4);
  CHECK(lr_at(1) == 2e-4);
  CHECK(lr_at(2) == doctest::Approx(1.96e-4).epsilon(1e-12));
  CHECK(lr_at(5) == doctest::Approx(2e-4 * 0.98 * 0.98).epsilon(1e-12));
  CHECK(lr_at(10, {1.0, 0.5, 5}) == doctest::Approx(0.25));
}

TEST_CASE("parameter registry") {
  ModelParams ps;
  const auto a = ps.add("x/A", Matrix(2, 2));
  const auto b = ps.add("x/running_mean", Matrix(1, 2), false);
  CHECK_THROWS_AS(ps.add("x/A", Matrix(1, 1)), UsageError);
  CHECK(ps.find("x/A") == a);
  CHECK_FALSE(ps.find("nope"));
  CHECK(ps.learnable_scalars() == 4);
  ps.zero_grads();
  CHECK(ps.at(a).has_grad());
  CHECK_FALSE(ps.at(b).has_grad());
}

TEST_CASE("rng is deterministic per seed") {
  Rng a(3), b(3), c(4);
  for (int i = 0; i < 10; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    (void)c;
  }
  Rng d(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = d.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    CHECK(d.below(7) < 7);
  }
}
