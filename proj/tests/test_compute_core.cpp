#include "doctest.h"

#include <cmath>
#include <random>

#include "densecount/errors.hpp"
#include "densecount/losses.hpp"
#include "densecount/ops.hpp"
#include "densecount/parallel.hpp"
#include "densecount/tape.hpp"
#include "support/gradcheck.hpp"
#include "support/reference_ops.hpp"

using namespace densecount;
using densecount::testing::as_double;
using densecount::testing::gradcheck;
using densecount::testing::max_relative_error;
using densecount::testing::random_tensor;

TEST_CASE("tensor rejects data that does not fill its shape") {
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 3}, std::vector<float>(5)), ContractViolation);
  Tensor<float> t(Shape{2, 3});
  CHECK(t.numel() == 6);
  CHECK_FALSE(t.has_grad());
  CHECK(t.grad().size() == 6);
  CHECK(t.has_grad());
}

TEST_CASE("conv2d: identity 1x1 kernel reproduces the input") {
  std::mt19937_64 rng(1);
  auto x = random_tensor<float>({1, 1, 3, 3}, rng);
  Tensor<float> w(Shape{1, 1, 1, 1}, 1.0f);
  Tensor<float> b(Shape{1}, 0.0f);
  auto y = conv2d(x, w, b, {1, 0, 0});
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv2d: zero weight and bias give zero output") {
  std::mt19937_64 rng(2);
  auto x = random_tensor<float>({2, 3, 6, 5}, rng);
  auto y = conv2d(x, Tensor<float>(Shape{4, 3, 3, 3}), Tensor<float>(Shape{4}), {1, 1, 1});
  for (float v : y.data()) CHECK(v == 0.0f);
}

TEST_CASE("conv2d matches the six-loop oracle on the 1x2x5x5 / 3x2x3x3 instance") {
  std::mt19937_64 rng(3);
  auto x = random_tensor<double>({1, 2, 5, 5}, rng);
  auto w = random_tensor<double>({3, 2, 3, 3}, rng);
  auto b = random_tensor<double>({3}, rng);
  auto y = conv2d(x, w, b, {1, 1, 1});
  Shape ref_shape;
  auto ref = testing::reference_conv2d(as_double(x), x.shape(), as_double(w), w.shape(),
                                       as_double(b), 1, 1, 1, &ref_shape);
  REQUIRE(y.shape() == ref_shape);
  CHECK(max_relative_error(as_double(y), ref) < 1e-6);

  auto yf = conv2d(tensor_cast<float>(x), tensor_cast<float>(w), tensor_cast<float>(b), {1, 1, 1});
  ref = testing::reference_conv2d(as_double(tensor_cast<float>(x)), x.shape(),
                                  as_double(tensor_cast<float>(w)), w.shape(),
                                  as_double(tensor_cast<float>(b)), 1, 1, 1, &ref_shape);
  CHECK(testing::normwise_relative_error(as_double(yf), ref) < 1e-6);
}

TEST_CASE("conv2d matches the oracle on randomized shapes, strides and padding") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    std::mt19937_64 rng(seed);
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    const int k = pick(1, 5), pad = pick(0, 2), stride = pick(1, 3);
    const int h = pick(std::max(1, k - 2 * pad), 12), w = pick(std::max(1, k - 2 * pad), 12);
    auto x = random_tensor<double>({pick(1, 2), pick(1, 4), h, w}, rng);
    auto wt = random_tensor<double>({pick(1, 5), x.dim(1), k, k}, rng);
    auto b = random_tensor<double>({wt.dim(0)}, rng);
    auto y = conv2d(x, wt, b, {stride, pad, pad});
    Shape ref_shape;
    auto ref = testing::reference_conv2d(as_double(x), x.shape(), as_double(wt), wt.shape(),
                                         as_double(b), stride, pad, pad, &ref_shape);
    REQUIRE(y.shape() == ref_shape);
    CHECK(max_relative_error(as_double(y), ref) < 1e-6);

    const auto xf = tensor_cast<float>(x), wf = tensor_cast<float>(wt), bf = tensor_cast<float>(b);
    auto yf = conv2d(xf, wf, bf, {stride, pad, pad});
    ref = testing::reference_conv2d(as_double(xf), x.shape(), as_double(wf), wt.shape(), as_double(bf),
                                    stride, pad, pad, &ref_shape);
    CHECK(testing::normwise_relative_error(as_double(yf), ref) < 1e-6);
  }
}

TEST_CASE("conv2d rejects mismatched channels and bad strides") {
  Tensor<float> x(Shape{1, 2, 5, 5});
  Tensor<float> b(Shape{3});
  try {
    conv2d(x, Tensor<float>(Shape{3, 4, 3, 3}), b, {1, 1, 1});
    FAIL("expected ContractViolation");
  } catch (const ContractViolation& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2") != std::string::npos);
    CHECK(msg.find("4") != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d(x, Tensor<float>(Shape{3, 2, 3, 3}), b, {0, 1, 1}), ArgumentError);
  CHECK_THROWS_AS(conv2d(x, Tensor<float>(Shape{3, 2, 9, 9}), b, {1, 1, 1}), ContractViolation);
}

TEST_CASE("depthwise: per-channel [1, 0] kernels copy channel 0 and zero channel 1") {
  std::mt19937_64 rng(4);
  auto x = random_tensor<float>({1, 2, 3, 3}, rng);
  Tensor<float> w(Shape{2, 1, 1, 1}, std::vector<float>{1.0f, 0.0f});
  auto y = depthwise_conv2d(x, w, Tensor<float>(Shape{2}), {1, 0, 0});
  for (int i = 0; i < 9; ++i) {
    CHECK(y[static_cast<std::size_t>(i)] == x[static_cast<std::size_t>(i)]);
    CHECK(y[static_cast<std::size_t>(9 + i)] == 0.0f);
  }
}

TEST_CASE("depthwise equals a per-channel grouped conv2d oracle") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const int c = 1 + static_cast<int>(seed % 4), stride = 1 + static_cast<int>(seed % 2);
    auto x = random_tensor<double>({1, c, 7, 6}, rng);
    auto w = random_tensor<double>({c, 1, 3, 3}, rng);
    auto b = random_tensor<double>({c}, rng);
    auto y = depthwise_conv2d(x, w, b, {stride, 1, 1});
    const auto plane_in = static_cast<std::size_t>(7 * 6);
    for (int ch = 0; ch < c; ++ch) {
      std::vector<double> xin(x.data().begin() + ch * plane_in, x.data().begin() + (ch + 1) * plane_in);
      std::vector<double> wk(w.data().begin() + ch * 9, w.data().begin() + (ch + 1) * 9);
      Shape out_shape;
      auto ref = testing::reference_conv2d(xin, {1, 1, 7, 6}, wk, {1, 1, 3, 3},
                                           {b[static_cast<std::size_t>(ch)]}, stride, 1, 1,
                                           &out_shape);
      const auto plane_out = static_cast<std::size_t>(out_shape[2] * out_shape[3]);
      std::vector<double> got(y.data().begin() + ch * plane_out,
                              y.data().begin() + (ch + 1) * plane_out);
      CHECK(max_relative_error(got, ref) < 1e-12);
    }
  }
}

TEST_CASE("depthwise: zero input yields the bias everywhere") {
  std::mt19937_64 rng(5);
  auto w = random_tensor<float>({3, 1, 3, 3}, rng);
  Tensor<float> b(Shape{3}, std::vector<float>{0.5f, -1.0f, 2.0f});
  auto y = depthwise_conv2d(Tensor<float>(Shape{1, 3, 4, 4}), w, b, {1, 1, 1});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 16; ++i) CHECK(y[static_cast<std::size_t>(c * 16 + i)] == b[static_cast<std::size_t>(c)]);
  CHECK_THROWS_AS(depthwise_conv2d(Tensor<float>(Shape{1, 2, 4, 4}), w, b, {1, 1, 1}),
                  ContractViolation);
}

TEST_CASE("maxpool: constant in, constant out; window-scan oracle; 512 -> 64 after three pools") {
  auto c = maxpool2d(Tensor<float>(Shape{1, 2, 6, 6}, 3.5f));
  CHECK(c.shape() == Shape{1, 2, 3, 3});
  for (float v : c.data()) CHECK(v == 3.5f);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor<float>({1, 1 + static_cast<std::int64_t>(seed % 3), 4 + static_cast<std::int64_t>(seed % 5), 4}, rng);
    Shape s;
    auto ref = testing::reference_maxpool2(as_double(x), x.shape(), &s);
    auto y = maxpool2d(x);
    REQUIRE(y.shape() == s);
    CHECK(max_relative_error(as_double(y), ref) == 0.0);
  }

  Tensor<float> big(Shape{1, 1, 512, 512}, 1.0f);
  auto p = maxpool2d(maxpool2d(maxpool2d(big)));
  CHECK(p.shape() == Shape{1, 1, 64, 64});
  CHECK_THROWS_AS(maxpool2d(Tensor<float>(Shape{1, 1, 1, 4})), ContractViolation);
}

TEST_CASE("maxpool: ties route the gradient to the first row-major maximum") {
  Tensor<double> x(Shape{1, 1, 2, 2}, 1.0);
  x.set_requires_grad(true);
  Tape<double> tape;
  auto y = sum(maxpool2d(x, &tape), &tape);
  backward(y, tape);
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 0.0);
  CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("maxpool backward conserves gradient mass") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor<double>({1, 3, 6, 8}, rng);
    x.set_requires_grad(true);
    Tape<double> tape;
    auto y = maxpool2d(x, &tape);
    auto seed_grad = as_double(random_tensor<double>(y.shape(), rng));
    tape.backward_from(y, seed_grad);
    double in_mass = 0.0, out_mass = 0.0;
    for (double g : x.grad()) in_mass += g;
    for (double g : seed_grad) out_mass += g;
    CHECK(in_mass == doctest::Approx(out_mass).epsilon(1e-12));
  }
}

TEST_CASE("bilinear upsample: identity, constants and the hand-evaluated 2x2 case") {
  std::mt19937_64 rng(6);
  auto x = random_tensor<float>({1, 2, 3, 4}, rng);
  auto same = bilinear_upsample(x, 1);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(same[i] == x[i]);

  auto c = bilinear_upsample(Tensor<float>(Shape{1, 1, 3, 2}, 2.25f), 3);
  CHECK(c.shape() == Shape{1, 1, 9, 6});
  for (float v : c.data()) CHECK(v == doctest::Approx(2.25f));

  // [[0,1],[2,3]] is the linear function 2*row + col, so bilinear
  // interpolation reproduces 2*sy + sx at the clamped source coordinates.
  Tensor<double> grid(Shape{1, 1, 2, 2}, std::vector<double>{0, 1, 2, 3});
  auto up = bilinear_upsample(grid, 2);
  REQUIRE(up.shape() == Shape{1, 1, 4, 4});
  for (int y = 0; y < 4; ++y) {
    for (int xx = 0; xx < 4; ++xx) {
      const double sy = std::clamp((y + 0.5) / 2.0 - 0.5, 0.0, 1.0);
      const double sx = std::clamp((xx + 0.5) / 2.0 - 0.5, 0.0, 1.0);
      CHECK(up.at(0, 0, y, xx) == doctest::Approx(2 * sy + sx).epsilon(1e-12));
    }
  }
  CHECK(up.at(0, 0, 1, 2) == doctest::Approx(1.25));
  CHECK_THROWS_AS(bilinear_upsample(grid, 0), ArgumentError);
}

TEST_CASE("bilinear upsample is linear") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto a = random_tensor<double>({1, 2, 3, 5}, rng);
    auto b = random_tensor<double>({1, 2, 3, 5}, rng);
    const double alpha = 1.7, beta = -0.3;
    Tensor<double> mix(a.shape());
    for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = alpha * a[i] + beta * b[i];
    const int f = 1 + static_cast<int>(seed % 4);
    auto um = bilinear_upsample(mix, f);
    auto ua = bilinear_upsample(a, f);
    auto ub = bilinear_upsample(b, f);
    for (std::size_t i = 0; i < um.numel(); ++i) {
      CHECK(std::abs(um[i] - (alpha * ua[i] + beta * ub[i])) < 1e-6);
    }
  }
}

TEST_CASE("activations follow their definitions") {
  Tensor<float> x(Shape{3}, std::vector<float>{-1.0f, 0.0f, 2.0f});
  auto a = activation(x, ActivationKind::kAbs);
  CHECK(a[0] == 1.0f);
  CHECK(a[1] == 0.0f);
  CHECK(a[2] == 2.0f);
  Tensor<float> big(Shape{2}, std::vector<float>{7.0f, -2.0f});
  auto r6 = activation(big, ActivationKind::kRelu6);
  CHECK(r6[0] == 6.0f);
  CHECK(r6[1] == 0.0f);
}

TEST_CASE("abs gradient at -3 is -1 and matches a central difference") {
  Tensor<double> x(Shape{1}, std::vector<double>{-3.0});
  x.set_requires_grad(true);
  Tape<double> tape;
  auto y = sum(activation(x, ActivationKind::kAbs, &tape), &tape);
  backward(y, tape);
  CHECK(x.grad()[0] == -1.0);
  const double eps = 1e-5;
  const double numeric = (std::abs(-3.0 + eps) - std::abs(-3.0 - eps)) / (2 * eps);
  CHECK(x.grad()[0] == doctest::Approx(numeric).epsilon(1e-9));

  Tensor<double> zero(Shape{1}, 0.0);
  zero.set_requires_grad(true);
  Tape<double> t2;
  auto z = sum(activation(zero, ActivationKind::kAbs, &t2), &t2);
  backward(z, t2);
  CHECK(zero.grad()[0] == 0.0);
}

TEST_CASE("backward: linear and quadratic losses") {
  Tensor<double> w(Shape{3}, std::vector<double>{0.5, -2.0, 4.0});
  w.set_requires_grad(true);
  {
    Tape<double> tape;
    auto loss = sum(w, &tape);
    backward(loss, tape);
    for (double g : w.grad()) CHECK(g == 1.0);
  }
  w.clear_grad();
  {
    // sum(w^2) / 2 expressed as the half squared distance to zero.
    Tape<double> tape;
    auto loss = euclidean_loss(w, Tensor<double>(Shape{3}), &tape);
    backward(loss, tape);
    for (std::size_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == w[i]);
  }
}

TEST_CASE("backward rejects non-scalar losses and single-use tapes") {
  Tensor<double> w(Shape{3}, 1.0);
  w.set_requires_grad(true);
  Tape<double> tape;
  auto y = activation(w, ActivationKind::kRelu, &tape);
  CHECK_THROWS_AS(backward(y, tape), ContractViolation);
  auto s = sum(y, &tape);
  backward(s, tape);
  CHECK_THROWS_AS(backward(s, tape), ContractViolation);
}

TEST_CASE("tape replays every recorded op exactly once, in reverse order") {
  Tape<double> tape;
  std::vector<int> visits;
  for (int i = 0; i < 5; ++i) tape.record("probe", [&visits, i] { visits.push_back(i); });
  Tensor<double> loss = Tensor<double>::scalar(0.0);
  backward(loss, tape);
  CHECK(visits == std::vector<int>{4, 3, 2, 1, 0});
}

TEST_CASE("tensors off the loss path keep no gradient") {
  std::mt19937_64 rng(7);
  auto a = random_tensor<double>({1, 1, 4, 4}, rng);
  auto unused = random_tensor<double>({1, 1, 4, 4}, rng);
  a.set_requires_grad(true);
  unused.set_requires_grad(true);
  Tape<double> tape;
  auto side = activation(unused, ActivationKind::kRelu, &tape);
  (void)side;
  auto loss = sum(activation(a, ActivationKind::kAbs, &tape), &tape);
  backward(loss, tape);
  CHECK(a.has_grad());
  CHECK_FALSE(unused.has_grad());
}

TEST_CASE("two-layer conv network: every weight gradient matches finite differences") {
  std::mt19937_64 rng(8);
  auto x = random_tensor<double>({1, 2, 6, 6}, rng);
  auto w1 = random_tensor<double>({3, 2, 3, 3}, rng);
  auto b1 = random_tensor<double>({3}, rng);
  auto w2 = random_tensor<double>({1, 3, 3, 3}, rng);
  auto b2 = random_tensor<double>({1}, rng);
  auto net = [x](const std::vector<Tensor<double>>& p, Tape<double>* tape) {
    auto h = activation(conv2d(x, p[0], p[1], {1, 1, 1}, tape), ActivationKind::kRelu, tape);
    return sum(conv2d(h, p[2], p[3], {1, 1, 1}, tape), tape);
  };
  auto result = gradcheck(net, {w1, b1, w2, b2}, 8, 1e-4);
  CHECK(result.checked == 54 + 3 + 27 + 1);
  CHECK(result.max_relative_error < 1e-6);
}

TEST_CASE("every layer op passes the finite-difference gradient check over 20 seeds") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const int stride = 1 + static_cast<int>(seed % 2);
    auto x = random_tensor<double>({1, 2, 5, 6}, rng);
    auto w = random_tensor<double>({3, 2, 3, 3}, rng);
    auto b = random_tensor<double>({3}, rng);
    worst = std::max(worst, gradcheck([stride](const auto& p, Tape<double>* t) {
      return conv2d(p[0], p[1], p[2], {stride, 1, 1}, t);
    }, {x, w, b}, seed).max_relative_error);

    auto dw = random_tensor<double>({2, 1, 3, 3}, rng);
    auto db = random_tensor<double>({2}, rng);
    worst = std::max(worst, gradcheck([stride](const auto& p, Tape<double>* t) {
      return depthwise_conv2d(p[0], p[1], p[2], {stride, 1, 1}, t);
    }, {x, dw, db}, seed).max_relative_error);

    worst = std::max(worst, gradcheck([](const auto& p, Tape<double>* t) {
      return maxpool2d(p[0], t);
    }, {x}, seed).max_relative_error);

    const int factor = 1 + static_cast<int>(seed % 3);
    worst = std::max(worst, gradcheck([factor](const auto& p, Tape<double>* t) {
      return bilinear_upsample(p[0], factor, t);
    }, {x}, seed).max_relative_error);

    for (auto kind : {ActivationKind::kRelu, ActivationKind::kRelu6, ActivationKind::kAbs}) {
      auto wide = random_tensor<double>({1, 2, 3, 3}, rng, -8.0, 8.0);
      worst = std::max(worst, gradcheck([kind](const auto& p, Tape<double>* t) {
        return activation(p[0], kind, t);
      }, {wide}, seed).max_relative_error);
    }

    auto y = random_tensor<double>({1, 3, 5, 6}, rng);
    worst = std::max(worst, gradcheck([](const auto& p, Tape<double>* t) {
      return concat_channels(std::vector<Tensor<double>>{p[0], p[1]}, t);
    }, {x, y}, seed).max_relative_error);
    auto z = random_tensor<double>({1, 2, 5, 6}, rng);
    worst = std::max(worst, gradcheck([](const auto& p, Tape<double>* t) {
      return add(p[0], p[1], t);
    }, {x, z}, seed).max_relative_error);
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("forward passes are bitwise reproducible and independent of thread count") {
  std::mt19937_64 rng(9);
  auto x = random_tensor<float>({1, 3, 64, 48}, rng);
  auto w = random_tensor<float>({8, 3, 5, 5}, rng);
  auto b = random_tensor<float>({8}, rng);
  set_num_threads(1);
  auto a = conv2d(x, w, b, {1, 2, 2});
  auto a2 = conv2d(x, w, b, {1, 2, 2});
  set_num_threads(4);
  auto c = conv2d(x, w, b, {1, 2, 2});
  set_num_threads(1);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    CHECK(a[i] == a2[i]);
    CHECK(a[i] == c[i]);
  }
}
