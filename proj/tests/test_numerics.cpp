#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "test_helpers.hpp"
#include "tidsit/autodiff.hpp"
#include "tidsit/errors.hpp"
#include "tidsit/gradcheck.hpp"
#include "tidsit/rng.hpp"

using namespace tidsit;
using tidsit::test::random_tensor;

namespace {

// Wraps a single-tensor tape computation as f(params) for the FD oracle and
// checks reverse-mode against central differences.
double check_op_gradient(
    const Tensor& x0,
    const std::function<Tape::NodeId(Tape&, Tape::NodeId)>& build,
    double floor = 1e-4) {
  auto f = [&](const ParamMap& params) {
    Tape tape;
    Tape::NodeId x = tape.parameter(params.at("x"));
    return tape.value(tape.sum_all(build(tape, x))).item();
  };
  ParamMap params;
  params.emplace("x", x0);
  ParamMap numeric = finite_difference_gradient(f, params, 1e-6);

  Tape tape;
  Tape::NodeId x = tape.parameter(x0);
  tape.backward(tape.sum_all(build(tape, x)));
  ParamMap analytic;
  analytic.emplace("x", tape.adjoint(x));
  return max_relative_error(analytic, numeric, floor);
}

}  // namespace

TEST_SUITE_BEGIN("numerics");

TEST_CASE("rng streams are counter-based and reproducible") {
  RngStream a = RngStream::derive(7, "dropout", 3, 1);
  RngStream b = RngStream::derive(7, "dropout", 3, 1);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  RngStream c = RngStream::derive(7, "dropout", 3, 2);
  CHECK(a.next_u64() != c.next_u64());
  RngStream u = RngStream::derive(1, "u");
  for (int i = 0; i < 1000; ++i) {
    const double v = u.next_uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("matmul identity and hand-summed products") {
  Tape tape;
  Tape::NodeId eye = tape.input(Tensor(2, 2, {1, 0, 0, 1}));
  Tape::NodeId b = tape.input(Tensor(2, 3, {5, -1, 2, 0.5, 3, 7}));
  const Tensor& prod = tape.value(tape.matmul(eye, b));
  for (std::size_t i = 0; i < prod.size(); ++i) {
    CHECK(prod[i] == tape.value(b)[i]);
  }

  Tape::NodeId m = tape.input(Tensor(2, 2, {1, 2, 3, 4}));
  Tape::NodeId ones = tape.input(Tensor(2, 1, {1, 1}));
  const Tensor& r = tape.value(tape.matmul(m, ones));
  CHECK(r(0, 0) == 3.0);
  CHECK(r(1, 0) == 7.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions naming both shapes") {
  Tape tape;
  Tape::NodeId a = tape.input(Tensor(2, 3, 1.0));
  Tape::NodeId b = tape.input(Tensor(2, 2, 1.0));
  CHECK_THROWS_WITH_AS(tape.matmul(a, b),
                       doctest::Contains("2x3"), ShapeError);
}

TEST_CASE("matmul gradients match finite differences") {
  RngStream stream = RngStream::derive(11, "matmul-grad");
  Tensor a0 = random_tensor(stream, 5, 4);
  Tensor b0 = random_tensor(stream, 4, 3);
  Tensor c0 = random_tensor(stream, 5, 3, 0.5, 1.5);  // keeps grads O(1)

  auto f = [&](const ParamMap& p) {
    Tape tape;
    Tape::NodeId a = tape.parameter(p.at("a"));
    Tape::NodeId b = tape.parameter(p.at("b"));
    Tape::NodeId weighted = tape.mul(tape.matmul(a, b), tape.input(c0));
    return tape.value(tape.sum_all(weighted)).item();
  };
  ParamMap params;
  params.emplace("a", a0);
  params.emplace("b", b0);
  ParamMap numeric = finite_difference_gradient(f, params, 1e-6);

  Tape tape;
  Tape::NodeId a = tape.parameter(a0);
  Tape::NodeId b = tape.parameter(b0);
  tape.backward(tape.sum_all(tape.mul(tape.matmul(a, b), tape.input(c0))));
  ParamMap analytic;
  analytic.emplace("a", tape.adjoint(a));
  analytic.emplace("b", tape.adjoint(b));
  CHECK(max_relative_error(analytic, numeric, 1e-8) < 1e-6);
}

TEST_CASE("softmax_masked hand values") {
  Tape tape;
  Mask all_valid{1, 1, 1};

  const Tensor& uniform = tape.value(
      tape.softmax_masked(tape.input(Tensor::row({0, 0, 0})), all_valid));
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(uniform(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  }

  const Tensor& masked = tape.value(tape.softmax_masked(
      tape.input(Tensor::row({5, 2, 9})), Mask{1, 0, 1}));
  CHECK(masked(0, 1) == 0.0);
  CHECK(masked(0, 0) + masked(0, 2) == doctest::Approx(1.0).epsilon(1e-13));

  // exp-normalize by hand calculator
  const Tensor& p = tape.value(
      tape.softmax_masked(tape.input(Tensor::row({1, 2, 3})), all_valid));
  CHECK(p(0, 0) == doctest::Approx(0.09003057317038046).epsilon(1e-12));
  CHECK(p(0, 1) == doctest::Approx(0.24472847105479767).epsilon(1e-12));
  CHECK(p(0, 2) == doctest::Approx(0.66524095577482190).epsilon(1e-12));
}

TEST_CASE("softmax_masked rejects rows with no valid key") {
  Tape tape;
  Tape::NodeId x = tape.input(Tensor::row({1, 2}));
  CHECK_THROWS_AS(tape.softmax_masked(x, Mask{0, 0}), NumericError);
}

TEST_CASE("softmax_masked rows sum to one and masked weights are exact zeros") {
  RngStream stream = RngStream::derive(3, "softmax-prop");
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 1 + stream.next_below(6);
    const std::size_t cols = 2 + stream.next_below(14);
    Mask mask(cols, 0);
    const std::size_t n_valid = 1 + stream.next_below(cols);
    for (std::size_t j = 0; j < n_valid; ++j) mask[j] = 1;
    stream.shuffle(mask);
    Tensor logits = random_tensor(stream, rows, cols, -30.0, 30.0);

    Tape tape;
    const Tensor& p = tape.value(tape.softmax_masked(tape.input(logits), mask));
    for (std::size_t i = 0; i < rows; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        if (!mask[j]) CHECK(p(i, j) == 0.0);
        sum += p(i, j);
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("layer_norm hand values") {
  Tape tape;
  Tape::NodeId gamma = tape.input(Tensor::row({1, 1, 1}));
  Tape::NodeId beta = tape.input(Tensor::row({0, 0, 0}));

  const Tensor& constant_row = tape.value(tape.layer_norm(
      tape.input(Tensor::row({5, 5, 5})), gamma, beta));
  for (std::size_t j = 0; j < 3; ++j) CHECK(constant_row(0, j) == 0.0);

  Tape::NodeId g2 = tape.input(Tensor::row({1, 1}));
  Tape::NodeId b2 = tape.input(Tensor::row({0, 0}));
  const Tensor& y = tape.value(
      tape.layer_norm(tape.input(Tensor::row({1, 3})), g2, b2));
  // mean 2, population std 1; eps shifts the scale to 1/sqrt(1+1e-5)
  CHECK(y(0, 0) == doctest::Approx(-0.9999950000374997).epsilon(1e-12));
  CHECK(y(0, 1) == doctest::Approx(+0.9999950000374997).epsilon(1e-12));
  CHECK(std::abs(y(0, 0) + 1.0) < 1e-4);

  Tape::NodeId g0 = tape.input(Tensor::row({0, 0}));
  Tape::NodeId b7 = tape.input(Tensor::row({7, 7}));
  const Tensor& affine = tape.value(
      tape.layer_norm(tape.input(Tensor::row({-3, 12})), g0, b7));
  CHECK(affine(0, 0) == 7.0);
  CHECK(affine(0, 1) == 7.0);
}

TEST_CASE("layer_norm is invariant to per-row constant shifts") {
  RngStream stream = RngStream::derive(4, "ln-shift");
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 1 + stream.next_below(4);
    const std::size_t cols = 2 + stream.next_below(10);
    Tensor x = random_tensor(stream, rows, cols, -5.0, 5.0);
    Tensor shifted = x;
    for (std::size_t i = 0; i < rows; ++i) {
      const double c = stream.next_uniform(-100.0, 100.0);
      for (std::size_t j = 0; j < cols; ++j) shifted(i, j) += c;
    }
    Tensor gamma = random_tensor(stream, 1, cols);
    Tensor beta = random_tensor(stream, 1, cols);

    Tape tape;
    Tape::NodeId g = tape.input(gamma);
    Tape::NodeId b = tape.input(beta);
    const Tensor& y0 = tape.value(tape.layer_norm(tape.input(x), g, b));
    const Tensor& y1 = tape.value(tape.layer_norm(tape.input(shifted), g, b));
    for (std::size_t i = 0; i < y0.size(); ++i) {
      CHECK(std::abs(y0[i] - y1[i]) < 1e-9);
    }
  }
}

TEST_CASE("relu clamps negatives") {
  Tape tape;
  const Tensor& y = tape.value(tape.relu(tape.input(Tensor::row({-1, 0, 2}))));
  CHECK(y(0, 0) == 0.0);
  CHECK(y(0, 1) == 0.0);
  CHECK(y(0, 2) == 2.0);
}

TEST_CASE("dropout identities and scaling") {
  RngStream stream = RngStream::derive(5, "dropout-test");
  Tensor x0 = random_tensor(stream, 4, 6);

  Tape tape;
  Tape::NodeId x = tape.input(x0);
  // rate 0 in training mode is exact identity
  CHECK(tape.dropout(x, 0.0, Mode::train, stream) == x);
  // eval mode is exact identity at any rate
  CHECK(tape.dropout(x, 0.9, Mode::eval, stream) == x);
  CHECK_THROWS_AS(tape.dropout(x, 1.0, Mode::train, stream), ConfigError);

  // training: zeros or survivors scaled by 1/(1-rate)
  const double rate = 0.4;
  Tape::NodeId y = tape.dropout(x, rate, Mode::train, stream);
  const Tensor& v = tape.value(y);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == 0.0) {
      ++zeros;
    } else {
      CHECK(v[i] == doctest::Approx(x0[i] / (1.0 - rate)).epsilon(1e-14));
    }
  }
  CHECK(zeros > 0);  // 24 draws at rate 0.4: all-kept is ~4e-6 likely
}

TEST_CASE("backward: sum seeds all-ones and unused parameters stay zero") {
  Tape tape;
  Tape::NodeId w = tape.parameter(Tensor(2, 2, {1, 2, 3, 4}));
  Tape::NodeId unused = tape.parameter(Tensor(3, 3, 5.0));
  tape.backward(tape.sum_all(w));
  const Tensor& dw = tape.adjoint(w);
  for (std::size_t i = 0; i < dw.size(); ++i) CHECK(dw[i] == 1.0);
  const Tensor& du = tape.adjoint(unused);
  for (std::size_t i = 0; i < du.size(); ++i) CHECK(du[i] == 0.0);
}

TEST_CASE("backward rejects non-scalar seeds") {
  Tape tape;
  Tape::NodeId w = tape.parameter(Tensor(2, 2, 1.0));
  CHECK_THROWS_AS(tape.backward(w), NumericError);
}

TEST_CASE("backward of squared norm matches finite differences") {
  RngStream stream = RngStream::derive(12, "sqnorm");
  Tensor w0 = random_tensor(stream, 4, 3);
  Tensor x0 = random_tensor(stream, 3, 1);

  auto f = [&](const ParamMap& p) {
    Tape tape;
    Tape::NodeId w = tape.parameter(p.at("w"));
    Tape::NodeId wx = tape.matmul(w, tape.input(x0));
    return tape.value(tape.sum_all(tape.mul(wx, wx))).item();
  };
  ParamMap params;
  params.emplace("w", w0);
  ParamMap numeric = finite_difference_gradient(f, params, 1e-6);

  Tape tape;
  Tape::NodeId w = tape.parameter(w0);
  Tape::NodeId wx = tape.matmul(w, tape.input(x0));
  tape.backward(tape.sum_all(tape.mul(wx, wx)));
  ParamMap analytic;
  analytic.emplace("w", tape.adjoint(w));
  CHECK(max_relative_error(analytic, numeric, 1e-8) < 1e-6);
}

TEST_CASE("finite_difference_gradient on closed-form functions") {
  ParamMap params;
  params.emplace("p", Tensor::scalar(3.0));

  auto square = [](const ParamMap& p) {
    const double v = p.at("p").item();
    return v * v;
  };
  ParamMap g = finite_difference_gradient(square, params, 1e-6);
  CHECK(g.at("p").item() == doctest::Approx(6.0).epsilon(1e-5));

  auto constant = [](const ParamMap&) { return 41.5; };
  ParamMap gc = finite_difference_gradient(constant, params, 1e-6);
  CHECK(std::abs(gc.at("p").item()) < 1e-9);
}

TEST_CASE("every primitive op matches finite differences on random shapes") {
  RngStream stream = RngStream::derive(21, "op-grads");
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t m = 2 + stream.next_below(15);  // up to 16x16
    const std::size_t n = 2 + stream.next_below(15);
    Tensor x = random_tensor(stream, m, n);
    Tensor other = random_tensor(stream, m, n);
    Tensor row = random_tensor(stream, 1, n);
    Tensor rhs = random_tensor(stream, n, 3);
    Mask mask(n, 0);
    for (std::size_t j = 0; j < n; ++j) mask[j] = j <= n / 2 ? 1 : 0;
    Mask row_mask(m, 0);
    for (std::size_t i = 0; i < m; ++i) row_mask[i] = i % 2 == 0 ? 1 : 0;

    auto with_input = [&](Tensor v) {
      return [v](Tape& t, Tape::NodeId x_) {
        return t.matmul(x_, t.input(v));
      };
    };
    CHECK(check_op_gradient(x, with_input(rhs)) < 1e-4);
    CHECK(check_op_gradient(x, [&](Tape& t, Tape::NodeId x_) {
            return t.transpose(x_);
          }) < 1e-4);
    CHECK(check_op_gradient(x, [&](Tape& t, Tape::NodeId x_) {
            return t.add(x_, t.input(other));
          }) < 1e-4);
    CHECK(check_op_gradient(x, [&](Tape& t, Tape::NodeId x_) {
            return t.sub(t.input(other), x_);
          }) < 1e-4);
    CHECK(check_op_gradient(x, [&](Tape& t, Tape::NodeId x_) {
            return t.mul(x_, t.input(other));
          }) < 1e-4);
    CHECK(check_op_gradient(x, [&](Tape& t, Tape::NodeId x_) {
            return t.mul(x_, x_);  // fan-out of 2 accumulates additively
          }) < 1e-4);
    CHECK(check_op_gradient(x, [&](Tape& t, Tape::NodeId x_) {
            return t.scale(x_, -2.5);
          }) < 1e-4);
    CHECK(check_op_gradient(x, [&](Tape& t, Tape::NodeId x_) {
            return t.add_scalar(x_, 0.75);
          }) < 1e-4);
    CHECK(check_op_gradient(x, [&](Tape& t, Tape::NodeId x_) {
            return t.add_row(x_, t.input(row));
          }) < 1e-4);
    CHECK(check_op_gradient(x, [&](Tape& t, Tape::NodeId x_) {
            return t.relu(x_);  // inputs are away from the kink w.h.p.
          }) < 1e-4);
    CHECK(check_op_gradient(x, [&](Tape& t, Tape::NodeId x_) {
            return t.softmax_masked(x_, mask);
          }) < 1e-4);
    Tensor gamma = random_tensor(stream, 1, n, 0.5, 1.5);
    CHECK(check_op_gradient(x, [&](Tape& t, Tape::NodeId x_) {
            return t.layer_norm(x_, t.input(gamma), t.input(row));
          }) < 1e-4);
    CHECK(check_op_gradient(x, [&](Tape& t, Tape::NodeId x_) {
            return t.concat_rows(x_, t.input(other));
          }) < 1e-4);
    CHECK(check_op_gradient(x, [&](Tape& t, Tape::NodeId x_) {
            return t.concat_cols(t.input(other), x_);
          }) < 1e-4);
    CHECK(check_op_gradient(x, [&](Tape& t, Tape::NodeId x_) {
            return t.slice_cols(x_, 1, n - 1);
          }) < 1e-4);
    CHECK(check_op_gradient(x, [&](Tape& t, Tape::NodeId x_) {
            return t.mean_rows(x_);
          }) < 1e-4);
    CHECK(check_op_gradient(x, [&](Tape& t, Tape::NodeId x_) {
            return t.mean_rows(x_, row_mask);
          }) < 1e-4);
    CHECK(check_op_gradient(x, [&](Tape& t, Tape::NodeId x_) {
            return t.mean_all(x_);
          }) < 1e-4);
    RngStream fixed = RngStream::derive(99, "dropout-grad", trial);
    CHECK(check_op_gradient(x, [&](Tape& t, Tape::NodeId x_) {
            RngStream local = fixed;  // same mask on every call
            return t.dropout(x_, 0.3, Mode::train, local);
          }) < 1e-4);
  }
}

TEST_CASE("layer_norm gradient matches finite differences including affine") {
  RngStream stream = RngStream::derive(22, "ln-grad");
  Tensor x0 = random_tensor(stream, 5, 7);
  Tensor g0 = random_tensor(stream, 1, 7, 0.5, 1.5);
  Tensor b0 = random_tensor(stream, 1, 7);
  Tensor weights = random_tensor(stream, 5, 7, 0.5, 1.5);

  auto build = [&](Tape& t, const ParamMap& p, bool as_params) {
    Tape::NodeId x = as_params ? t.parameter(p.at("x")) : t.input(p.at("x"));
    Tape::NodeId g = as_params ? t.parameter(p.at("g")) : t.input(p.at("g"));
    Tape::NodeId b = as_params ? t.parameter(p.at("b")) : t.input(p.at("b"));
    return t.sum_all(t.mul(t.layer_norm(x, g, b), t.input(weights)));
  };
  ParamMap params;
  params.emplace("x", x0);
  params.emplace("g", g0);
  params.emplace("b", b0);
  auto f = [&](const ParamMap& p) {
    Tape t;
    return t.value(build(t, p, false)).item();
  };
  ParamMap numeric = finite_difference_gradient(f, params, 1e-6);

  Tape t;
  Tape::NodeId x = t.parameter(x0);
  Tape::NodeId g = t.parameter(g0);
  Tape::NodeId b = t.parameter(b0);
  t.backward(t.sum_all(t.mul(t.layer_norm(x, g, b), t.input(weights))));
  ParamMap analytic;
  analytic.emplace("x", t.adjoint(x));
  analytic.emplace("g", t.adjoint(g));
  analytic.emplace("b", t.adjoint(b));
  CHECK(max_relative_error(analytic, numeric, 1e-4) < 1e-4);
}

TEST_CASE("forward operations are deterministic") {
  RngStream stream = RngStream::derive(23, "determinism");
  Tensor x = random_tensor(stream, 6, 6);
  Mask mask{1, 1, 1, 0, 1, 0};
  auto run = [&]() {
    Tape tape;
    Tape::NodeId a = tape.input(x);
    Tape::NodeId s = tape.softmax_masked(a, mask);
    RngStream d = RngStream::derive(17, "det-dropout");
    Tape::NodeId out = tape.dropout(s, 0.25, Mode::train, d);
    return tape.value(tape.mean_all(out)).item();
  };
  const double first = run();
  for (int i = 0; i < 3; ++i) CHECK(run() == first);
}

TEST_SUITE_END();
