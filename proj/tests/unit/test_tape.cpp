#include "helpers.hpp"

#include <doctest.h>

using namespace tpose;
using namespace tpose::testing;

namespace {

Matrix mat(Eigen::Index r, Eigen::Index c, std::initializer_list<double> v) {
  Matrix m(r, c);
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

}  // namespace

TEST_CASE("eager ops follow their definitions") {
  const Matrix a = mat(2, 2, {1, 2, 3, 4});
  CHECK(matmul(Matrix(Matrix::Identity(2, 2)), a) == a);
  CHECK(relu(mat(1, 2, {-3, 2})) == mat(1, 2, {0, 2}));
  CHECK(sigmoid(mat(1, 1, {0}))(0, 0) == 0.5);
  CHECK(tanh(mat(1, 1, {0}))(0, 0) == 0.0);
  CHECK(add(a, a) == scale(a, 2.0));
  CHECK(sub(a, a) == Matrix::Zero(2, 2));
  CHECK(hadamard(a, a) == mat(2, 2, {1, 4, 9, 16}));
  CHECK(add_rowwise(a, mat(1, 2, {10, 20})) == mat(2, 2, {11, 22, 13, 24}));
  CHECK(sum(a)(0, 0) == 10.0);
  CHECK(concat_cols(a, mat(2, 1, {5, 6})) == mat(2, 3, {1, 2, 5, 3, 4, 6}));
  CHECK(slice_cols(a, 1, 1) == mat(2, 1, {2, 4}));
}

TEST_CASE("exp is clamped and sigmoid is stable at the extremes") {
  const Matrix e = exp(mat(1, 3, {1000, -1000, 0}));
  CHECK(e(0, 0) == doctest::Approx(std::exp(40.0)));
  CHECK(e(0, 1) == doctest::Approx(std::exp(-40.0)));
  CHECK(e(0, 2) == 1.0);
  const Matrix s = sigmoid(mat(1, 2, {-800, 800}));
  CHECK(s.allFinite());
  CHECK(s(0, 0) >= 0.0);
  CHECK(s(0, 1) == 1.0);
}

TEST_CASE("shape mismatches name both shapes") {
  const Matrix a = Matrix::Zero(2, 3), b = Matrix::Zero(2, 3);
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, Matrix(Matrix::Zero(3, 2))), ShapeError);
  CHECK_THROWS_AS(add_rowwise(a, Matrix(Matrix::Zero(1, 2))), ShapeError);
  CHECK_THROWS_AS(slice_cols(a, 2, 2), ShapeError);
  CHECK_THROWS_AS(concat_cols(a, Matrix(Matrix::Zero(3, 1))), ShapeError);
}

TEST_CASE("backward: x^2 at 3 has gradient 6") {
  Tape<double> tape;
  const auto x = tape.variable(mat(1, 1, {3}));
  tape.backward(hadamard(x, x));
  CHECK(tape.gradient(x)(0, 0) == 6.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
  Tape<double> tape;
  const auto x = tape.variable(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(tape.backward(x), ShapeError);
}

TEST_CASE("unused parameters get a zero gradient") {
  Tape<double> tape;
  const auto x = tape.variable(mat(1, 1, {2}));
  const auto unused = tape.variable(Matrix::Ones(3, 2));
  tape.backward(scale(x, 4.0));
  CHECK(tape.gradient(x)(0, 0) == 4.0);
  CHECK(tape.gradient(unused) == Matrix::Zero(3, 2));
}

TEST_CASE("gradients accumulate over fan-out") {
  Tape<double> tape;
  const auto x = tape.variable(mat(1, 1, {1.5}));
  const auto y = add(scale(x, 2.0), hadamard(x, x));  // 2x + x^2
  tape.backward(y);
  CHECK(tape.gradient(x)(0, 0) == doctest::Approx(2.0 + 3.0));
}

TEST_CASE("sum(sigmoid(w.x)) matches central differences within 1e-6") {
  std::mt19937_64 rng(11);
  const Matrix w = random_matrix(3, 4, rng), x = random_matrix(2, 3, rng);
  const double err = gradient_check(
      [](Tape<double>&, const std::vector<Var<double>>& v) { return sum(sigmoid(matmul(v[1], v[0]))); }, {w, x});
  CHECK(err < 1e-6);
}

TEST_CASE("every op matches central differences within 1e-5") {
  std::mt19937_64 rng(5);
  const Matrix a = random_matrix(3, 4, rng), b = random_matrix(3, 4, rng), c = random_matrix(4, 2, rng);
  const Matrix row = random_matrix(1, 4, rng);
  // Keep relu inputs away from the kink, where differences straddle it.
  Matrix r = random_matrix(3, 4, rng);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] += r.data()[i] >= 0 ? 0.1 : -0.1;
  // Each op is followed by a fixed random weighting so its full Jacobian is exercised.
  const Matrix weight34 = random_matrix(3, 4, rng), weight32 = random_matrix(3, 2, rng);
  const Matrix weight36 = random_matrix(3, 6, rng), weight31 = random_matrix(3, 1, rng);

  auto weighted = [](const Matrix& m) {
    return [m](const Var<double>& v) {
      Tape<double>& t = *v.tape();
      return sum(hadamard(v, t.constant(m)));
    };
  };
  const auto w34 = weighted(weight34), w32 = weighted(weight32), w36 = weighted(weight36), w31 = weighted(weight31);

  struct Case {
    const char* name;
    ScalarFn fn;
    std::vector<Matrix> inputs;
  };
  const std::vector<Case> cases = {
      {"matmul", [&](Tape<double>&, const auto& v) { return w32(matmul(v[0], v[1])); }, {a, c}},
      {"add", [&](Tape<double>&, const auto& v) { return w34(add(v[0], v[1])); }, {a, b}},
      {"sub", [&](Tape<double>&, const auto& v) { return w34(sub(v[0], v[1])); }, {a, b}},
      {"hadamard", [&](Tape<double>&, const auto& v) { return w34(hadamard(v[0], v[1])); }, {a, b}},
      {"add_rowwise", [&](Tape<double>&, const auto& v) { return w34(add_rowwise(v[0], v[1])); }, {a, row}},
      {"scale", [&](Tape<double>&, const auto& v) { return w34(scale(v[0], -1.7)); }, {a}},
      {"sigmoid", [&](Tape<double>&, const auto& v) { return w34(sigmoid(v[0])); }, {a}},
      {"tanh", [&](Tape<double>&, const auto& v) { return w34(tanh(v[0])); }, {a}},
      {"relu", [&](Tape<double>&, const auto& v) { return w34(relu(v[0])); }, {r}},
      {"exp", [&](Tape<double>&, const auto& v) { return w34(exp(v[0])); }, {a}},
      {"sum", [&](Tape<double>&, const auto& v) { return scale(sum(v[0]), 0.3); }, {a}},
      {"concat_cols", [&](Tape<double>&, const auto& v) { return w36(concat_cols(v[0], v[1])); },
       {random_matrix(3, 2, rng), a}},
      {"slice_cols", [&](Tape<double>&, const auto& v) { return w31(slice_cols(v[0], 2, 1)); }, {a}},
  };
  for (const auto& c_ : cases) {
    CAPTURE(c_.name);
    CHECK(gradient_check(c_.fn, c_.inputs) < 1e-5);
  }
}

TEST_CASE("constants carry no gradient and cost no backward work") {
  Tape<double> tape;
  const auto k = tape.constant(mat(1, 1, {5}));
  const auto x = tape.variable(mat(1, 1, {2}));
  tape.backward(hadamard(k, x));
  CHECK_FALSE(tape.needs_grad(k.id()));
  CHECK(tape.gradient(x)(0, 0) == 5.0);
  CHECK(tape.gradient(k)(0, 0) == 0.0);
}
