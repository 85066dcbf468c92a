#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mdeh/autodiff.hpp"
#include "mdeh/kernels.hpp"
#include "mdeh/rng.hpp"

using namespace mdeh;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, float lo, float hi) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// |a-b| <= tol * (1 + |b|), applied elementwise.
void check_close(const Tensor& got, const Tensor& want, double tol) {
  REQUIRE(got.numel() == want.numel());
  for (std::int64_t i = 0; i < got.numel(); ++i) {
    const double err = std::fabs(static_cast<double>(got[i]) - want[i]);
    INFO("index ", i, " got ", got[i], " want ", want[i]);
    CHECK(err <= tol * (1.0 + std::fabs(static_cast<double>(want[i]))));
  }
}

// Central finite differences against a tape-built scalar loss.
void gradcheck(const std::function<Var(Tape&, Var)>& graph, const Tensor& x0, double tol,
               double eps = 1e-3) {
  Tape tape;
  Var x = tape.leaf(x0, true);
  Var loss = graph(tape, x);
  tape.backward(loss);
  const Tensor analytic = tape.grad(x);

  Tensor fd = finite_difference(
      [&](const Tensor& probe) {
        Tape t2;
        Var v = t2.leaf(probe, true);
        return static_cast<double>(t2.value(graph(t2, v))[0]);
      },
      x0, eps);
  check_close(analytic, fd, tol);
}

}  // namespace

TEST_CASE("tanh of all-zero tensor is all-zero") {
  Tape t;
  Var x = t.leaf(Tensor({2, 3}), true);
  Var y = t.tanh(x);
  for (std::int64_t i = 0; i < 6; ++i) CHECK(t.value(y)[i] == 0.0f);
}

TEST_CASE("clip clamps to the interval") {
  Tape t;
  Var x = t.leaf(Tensor({3}, {-0.5f, 0.3f, 1.7f}), false);
  Var y = t.clip(x, 0.0f, 1.0f);
  CHECK(t.value(y)[0] == 0.0f);
  CHECK(t.value(y)[1] == 0.3f);
  CHECK(t.value(y)[2] == 1.0f);
}

TEST_CASE("backward of sum(x^2) is 2x") {
  Tape t;
  Var x = t.leaf(Tensor({3}, {1, 2, 3}), true);
  Var loss = t.sum(t.square(x));
  t.backward(loss);
  const Tensor& g = t.grad(x);
  CHECK(g[0] == doctest::Approx(2));
  CHECK(g[1] == doctest::Approx(4));
  CHECK(g[2] == doctest::Approx(6));
}

TEST_CASE("backward of sum(x) is ones; product rule for sum(x*y)") {
  Tape t;
  Rng rng(7);
  Tensor xv = random_tensor({4}, rng, -1, 1);
  Tensor yv = random_tensor({4}, rng, -1, 1);
  Var x = t.leaf(xv, true);
  Var y = t.leaf(yv, true);
  t.backward(t.sum(x));
  for (int i = 0; i < 4; ++i) CHECK(t.grad(x)[i] == 1.0f);

  Tape t2;
  x = t2.leaf(xv, true);
  y = t2.leaf(yv, true);
  t2.backward(t2.sum(t2.mul(x, y)));
  for (int i = 0; i < 4; ++i) {
    CHECK(t2.grad(x)[i] == doctest::Approx(yv[i]));
    CHECK(t2.grad(y)[i] == doctest::Approx(xv[i]));
  }
}

TEST_CASE("division by zero and reciprocal of zero are rejected") {
  Tape t;
  Var a = t.leaf(Tensor({2}, {1, 2}), false);
  Var z = t.leaf(Tensor({2}, {1, 0}), false);
  CHECK_THROWS(t.div(a, z));
  CHECK_THROWS(t.reciprocal(z));
  CHECK_THROWS(t.elementwise(EwKind::Tanh, a, z));  // unary kind, two operands
}

TEST_CASE("conv2d: 1x1 identity kernel reproduces the input") {
  Tape t;
  Rng rng(3);
  Tensor in = random_tensor({1, 1, 4, 5}, rng, 0, 1);
  Var x = t.leaf(in, false);
  Var w = t.leaf(Tensor({1, 1, 1, 1}, {1.0f}), false);
  Var y = t.conv2d(x, w, std::nullopt, 1, 0);
  for (std::int64_t i = 0; i < in.numel(); ++i) CHECK(t.value(y)[i] == in[i]);
}

namespace {
// Independent nested-loop cross-correlation used as the conv oracle.
Tensor conv_reference(const Tensor& in, const Tensor& w, int stride, int pad) {
  const int n = in.dim(0), ci = in.dim(1), hi = in.dim(2), wi = in.dim(3);
  const int co = w.dim(0), k = w.dim(2);
  const int ho = (hi + 2 * pad - k) / stride + 1;
  const int wo = (wi + 2 * pad - k) / stride + 1;
  Tensor out({n, co, ho, wo});
  for (int b = 0; b < n; ++b)
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = 0;
          for (int ic = 0; ic < ci; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride + ky - pad;
                const int ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= hi || ix < 0 || ix >= wi) continue;
                acc += static_cast<double>(in.at4(b, ic, iy, ix)) * w.at4(oc, ic, ky, kx);
              }
          out.at4(b, oc, oy, ox) = static_cast<float>(acc);
        }
  return out;
}
}  // namespace

TEST_CASE("conv2d: all-ones 3x3 kernel on constant input gives 9c in the interior") {
  const float c = 0.37f;
  Tensor in = Tensor::full({1, 1, 5, 6}, c);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tape t;
  Var y = t.conv2d(t.leaf(in, false), t.leaf(w, false), std::nullopt, 1, 0);
  const Tensor ref = conv_reference(in, w, 1, 0);
  check_close(t.value(y), ref, 1e-6);
  for (std::int64_t i = 0; i < ref.numel(); ++i) CHECK(ref[i] == doctest::Approx(9 * c));
}

TEST_CASE("conv2d matches the loop reference on random inputs, stride and padding") {
  Rng rng(11);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      Tensor in = random_tensor({2, 3, 6, 7}, rng, -1, 1);
      Tensor w = random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5);
      Tape t;
      Var y = t.conv2d(t.leaf(in, false), t.leaf(w, false), std::nullopt, stride, pad);
      check_close(t.value(y), conv_reference(in, w, stride, pad), 1e-5);
    }
  }
}

TEST_CASE("conv2d rejects channel mismatch") {
  Tape t;
  Var x = t.leaf(Tensor({1, 2, 4, 4}), false);
  Var w = t.leaf(Tensor({1, 3, 3, 3}), false);
  CHECK_THROWS(t.conv2d(x, w, std::nullopt, 1, 1));
}

TEST_CASE("conv2d weight and input gradients pass finite differences") {
  Rng rng(13);
  Tensor in = random_tensor({1, 2, 4, 4}, rng, -1, 1);
  Tensor w0 = random_tensor({2, 2, 3, 3}, rng, -0.5, 0.5);

  // d(sum(conv))/dw
  gradcheck(
      [&](Tape& t, Var wv) {
        return t.sum(t.conv2d(t.leaf(in, false), wv, std::nullopt, 1, 1));
      },
      w0, 1e-3);
  // d(sum(conv))/dinput
  gradcheck(
      [&](Tape& t, Var xv) {
        return t.sum(t.conv2d(xv, t.leaf(w0, false), std::nullopt, 1, 1));
      },
      in, 1e-3);
}

TEST_CASE("grid_sample: identity grid is the identity map bit-for-bit") {
  Rng rng(5);
  Tensor img = random_tensor({1, 3, 4, 6}, rng, 0, 1);
  Tensor grid({1, 2, 4, 6});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x) {
      grid.at4(0, 0, y, x) = static_cast<float>(x);
      grid.at4(0, 1, y, x) = static_cast<float>(y);
    }
  Tape t;
  Var out = t.grid_sample_bilinear(t.leaf(img, false), t.leaf(grid, false));
  for (std::int64_t i = 0; i < img.numel(); ++i) CHECK(t.value(out)[i] == img[i]);
  const Tensor valid = kernels::grid_sample_validity(grid, 4, 6);
  for (std::int64_t i = 0; i < valid.numel(); ++i) CHECK(valid[i] == 1.0f);
}

TEST_CASE("grid_sample: hand bilinear oracle at (0.5, 0.5) of [[1,2],[3,4]]") {
  Tensor img({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor grid({1, 2, 1, 1}, {0.5f, 0.5f});
  Tape t;
  Var out = t.grid_sample_bilinear(t.leaf(img, false), t.leaf(grid, false));
  CHECK(t.value(out)[0] == doctest::Approx(2.5));
}

TEST_CASE("grid_sample: far out-of-range grid clamps to pixel (0,0) and is invalid") {
  Rng rng(17);
  Tensor img = random_tensor({1, 1, 3, 3}, rng, 0, 1);
  Tensor grid = Tensor::full({1, 2, 2, 2}, -100.0f);
  Tape t;
  Var out = t.grid_sample_bilinear(t.leaf(img, false), t.leaf(grid, false));
  for (std::int64_t i = 0; i < 4; ++i) CHECK(t.value(out)[i] == img[0]);
  const Tensor valid = kernels::grid_sample_validity(grid, 3, 3);
  for (std::int64_t i = 0; i < valid.numel(); ++i) CHECK(valid[i] == 0.0f);
}

TEST_CASE("grid_sample gradients (image and grid) pass finite differences") {
  Rng rng(19);
  Tensor img = random_tensor({1, 2, 4, 5}, rng, 0, 1);
  Tensor grid({1, 2, 3, 3});
  // Keep samples interior and away from integer knots of the bilinear surface.
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) {
      grid.at4(0, 0, y, x) = 0.3f + 1.17f * static_cast<float>(x);
      grid.at4(0, 1, y, x) = 0.41f + 1.23f * static_cast<float>(y);
    }
  gradcheck(
      [&](Tape& t, Var iv) {
        return t.sum(t.square(t.grid_sample_bilinear(iv, t.leaf(grid, false))));
      },
      img, 1e-3);
  gradcheck(
      [&](Tape& t, Var gv) {
        return t.sum(t.square(t.grid_sample_bilinear(t.leaf(img, false), gv)));
      },
      grid, 1e-3);
}

TEST_CASE("reduce: mean, sum, and max-with-argmax-routing") {
  Tape t;
  Var x = t.leaf(Tensor({3}, {1, 2, 3}), false);
  CHECK(t.value(t.mean(x))[0] == doctest::Approx(2.0));

  Var ones = t.leaf(Tensor::full({4, 4}, 1.0f), false);
  CHECK(t.value(t.sum(ones))[0] == doctest::Approx(16.0));

  // 2 channels, 1 pixel; gradient must flow only to channel 1.
  Tape t2;
  Var y = t2.leaf(Tensor({2, 1}, {0.1f, 0.9f}), true);
  Var m = t2.reduce(ReduceKind::Max, y, {0});
  CHECK(t2.value(m)[0] == doctest::Approx(0.9));
  t2.backward(t2.sum(m));
  CHECK(t2.grad(y)[0] == 0.0f);
  CHECK(t2.grad(y)[1] == 1.0f);

  // Ties route to the first index.
  Tape t3;
  Var z = t3.leaf(Tensor({2}, {0.5f, 0.5f}), true);
  t3.backward(t3.reduce(ReduceKind::Max, z, {0}));
  CHECK(t3.grad(z)[0] == 1.0f);
  CHECK(t3.grad(z)[1] == 0.0f);

  CHECK_THROWS(t3.reduce(ReduceKind::Sum, t3.leaf(Tensor({0, 2}), false), {0}));
}

TEST_CASE("backward requires a scalar loss") {
  Tape t;
  Var x = t.leaf(Tensor({2}, {1, 2}), true);
  CHECK_THROWS(t.backward(x));
}

TEST_CASE("randomized gradient check across the op set") {
  Rng rng(29);
  // Smooth unary compositions probed away from kinks.
  gradcheck([](Tape& t, Var x) { return t.sum(t.tanh(x)); }, random_tensor({8}, rng, -1, 1),
            1e-3);
  gradcheck([](Tape& t, Var x) { return t.sum(t.sigmoid(x)); }, random_tensor({8}, rng, -2, 2),
            1e-3);
  gradcheck([](Tape& t, Var x) { return t.sum(t.square(x)); }, random_tensor({8}, rng, -1, 1),
            1e-3);
  gradcheck([](Tape& t, Var x) { return t.sum(t.abs(x)); }, random_tensor({8}, rng, 0.2f, 1),
            1e-3);
  gradcheck([](Tape& t, Var x) { return t.sum(t.reciprocal(x)); },
            random_tensor({8}, rng, 0.5f, 1.5f), 1e-3);
  gradcheck([](Tape& t, Var x) { return t.sum(t.sqrt(x)); }, random_tensor({8}, rng, 0.3f, 2),
            1e-3);
  gradcheck([](Tape& t, Var x) { return t.sum(t.clip(x, 0, 1)); },
            random_tensor({8}, rng, 0.1f, 0.9f), 1e-3);
  gradcheck([](Tape& t, Var x) { return t.sum(t.leaky_relu(x)); },
            random_tensor({8}, rng, 0.2f, 1), 1e-3);

  Tensor other = random_tensor({8}, rng, 0.5f, 1.5f);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.mul(x, t.leaf(other, false))); },
            random_tensor({8}, rng, -1, 1), 1e-3);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.div(t.leaf(other, false), x)); },
            random_tensor({8}, rng, 0.5f, 1.5f), 1e-3);
  // Scalar broadcast operand.
  gradcheck([&](Tape& t, Var x) { return t.sum(t.mul(x, t.constant_scalar(0.7f))); },
            random_tensor({8}, rng, -1, 1), 1e-3);
  gradcheck([&](Tape& t, Var s) { return t.sum(t.mul(t.leaf(other, false), s)); },
            Tensor::scalar(0.8f), 1e-3);

  gradcheck([](Tape& t, Var x) { return t.sum(t.square(t.box3x3(x))); },
            random_tensor({1, 1, 4, 5}, rng, -1, 1), 1e-3);
  gradcheck([](Tape& t, Var x) { return t.sum(t.square(t.upsample2x(x))); },
            random_tensor({1, 2, 3, 3}, rng, -1, 1), 1e-3);
  Tensor rhs = random_tensor({1, 2, 3, 3}, rng, -1, 1);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.square(t.concat_ch(x, t.leaf(rhs, false)))); },
            random_tensor({1, 1, 3, 3}, rng, -1, 1), 1e-3);
  Tensor wmat = random_tensor({3, 4}, rng, -1, 1);
  Tensor bias = random_tensor({3}, rng, -1, 1);
  gradcheck(
      [&](Tape& t, Var x) {
        return t.sum(t.square(t.linear(x, t.leaf(wmat, false), t.leaf(bias, false))));
      },
      random_tensor({2, 4}, rng, -1, 1), 1e-3);
  Tensor lin_x = random_tensor({2, 4}, rng, -1, 1);
  gradcheck(
      [&](Tape& t, Var w) {
        return t.sum(t.square(t.linear(t.leaf(lin_x, false), w, std::nullopt)));
      },
      wmat, 1e-3);
  // Composite chain mixing several kinds.
  gradcheck(
      [](Tape& t, Var x) {
        Var a = t.tanh(t.mul_scalar(x, 1.3f));
        Var b = t.sigmoid(t.add_scalar(a, 0.2f));
        return t.mean(t.square(b));
      },
      random_tensor({16}, rng, -1, 1), 1e-3);
  // Mean over axes.
  gradcheck([](Tape& t, Var x) { return t.sum(t.square(t.reduce(ReduceKind::Mean, x, {1}))); },
            random_tensor({3, 4}, rng, -1, 1), 1e-3);
}

TEST_CASE("backward is deterministic and leaf gradients accumulate across calls") {
  Rng rng(31);
  Tensor xv = random_tensor({6}, rng, -1, 1);
  Tape t;
  Var x = t.leaf(xv, true);
  Var loss = t.sum(t.square(t.tanh(x)));
  t.backward(loss);
  std::vector<float> g1(t.grad(x).values().begin(), t.grad(x).values().end());
  t.zero_grad();
  t.backward(loss);
  for (int i = 0; i < 6; ++i) CHECK(t.grad(x)[i] == g1[static_cast<size_t>(i)]);

  // Without a reset a second call accumulates.
  t.backward(loss);
  for (int i = 0; i < 6; ++i) CHECK(t.grad(x)[i] == doctest::Approx(2 * g1[static_cast<size_t>(i)]));
}
