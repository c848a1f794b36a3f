#include <doctest.h>

#include "fd_check.hpp"
#include "flowface/image_ops.hpp"
#include "flowface/nn.hpp"

using namespace flowface;
using namespace flowface::ad;
using fdcheck::fd_check;

namespace {

Tensor<double> randn(std::vector<int> shape, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  return Tensor<double>::random_normal(std::move(shape), rng, scale);
}

// values bounded away from zero so kinked ops stay off their corners
Tensor<double> rand_offset(std::vector<int> shape, uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(shape);
  for (size_t i = 0; i < t.numel(); ++i) {
    const double u = rng.uniform(0.3, 1.2);
    t[i] = rng.uniform() < 0.5 ? -u : u;
  }
  return t;
}

}  // namespace

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("elementwise ops match finite differences") {
  auto a = Value<double>::leaf(rand_offset({3, 4}, 1));
  auto b = Value<double>::leaf(rand_offset({3, 4}, 2));

  int which = 0;
  auto check = [&](auto build) {
    auto rep = fd_check<double>({a, b}, build);
    CAPTURE(which);
    CAPTURE(rep.max_rel);
    CHECK(rep.ok(1e-6));
    ++which;
  };
  check([&] { return mean(mul(add(a, b), sub(a, b))); });
  check([&] { return mean(div(a, b)); });
  check([&] { return mean(mul(abs_(a), sigmoid(b))); });
  check([&] { return mean(relu(mul(a, b))); });
  check([&] { return mean(hypot2(a, b)); });
  check([&] { return mean(maximum(a, b)); });
  check([&] { return sum(mul_scalar(add_scalar(a, 0.7), 1.3)); });
}

TEST_CASE("exp log sqrt clamp") {
  Rng rng(3);
  auto pos = Value<double>::leaf(Tensor<double>::random_uniform({4, 3}, rng, 0.5, 2.0));
  auto rep = fd_check<double>({pos}, [&] { return mean(log_(sqrt_(exp_(pos)))); });
  CHECK(rep.ok(1e-6));
  // clamp interior gradient only; probe points sit away from the bounds
  auto c = Value<double>::leaf(Tensor<double>::random_uniform({5}, rng, -0.4, 0.4));
  rep = fd_check<double>({c}, [&] { return sum(clamp(c, -1.0, 1.0)); });
  CHECK(rep.ok(1e-6));
  rep = fd_check<double>({c}, [&] { return sum(clamp_min(c, -2.0)); });
  CHECK(rep.ok(1e-6));
}

TEST_CASE("hypot2 subgradient at zero is zero, value exact") {
  auto a = Value<double>::leaf(Tensor<double>({2, 2}));
  auto b = Value<double>::leaf(Tensor<double>({2, 2}));
  auto r = sum(hypot2(a, b));
  CHECK(r.val()[0] == 0.0);
  r.backward();
  for (size_t i = 0; i < 4; ++i) {
    CHECK(a.grad()[i] == 0.0);
    CHECK(b.grad()[i] == 0.0);
  }
}

TEST_CASE("matmul all transpose combinations") {
  auto A = Value<double>::leaf(randn({3, 5}, 10));
  auto B = Value<double>::leaf(randn({5, 2}, 11));
  auto At = Value<double>::leaf(randn({5, 3}, 12));
  auto Bt = Value<double>::leaf(randn({2, 5}, 13));

  CHECK(fd_check<double>({A, B}, [&] { return mean(matmul(A, B)); }).ok(1e-6));
  CHECK(fd_check<double>({At, B}, [&] { return mean(matmul(At, B, true, false)); }).ok(1e-6));
  CHECK(fd_check<double>({A, Bt}, [&] { return mean(matmul(A, Bt, false, true)); }).ok(1e-6));
  CHECK(fd_check<double>({At, Bt}, [&] { return mean(matmul(At, Bt, true, true)); }).ok(1e-6));
}

TEST_CASE("matmul forward against a hand oracle") {
  auto A = Value<double>::constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  auto B = Value<double>::constant(Tensor<double>({2, 2}, {5, 6, 7, 8}));
  auto C = matmul(A, B);
  CHECK(C.val().at(0, 0) == doctest::Approx(19));
  CHECK(C.val().at(0, 1) == doctest::Approx(22));
  CHECK(C.val().at(1, 0) == doctest::Approx(43));
  CHECK(C.val().at(1, 1) == doctest::Approx(50));
}

TEST_CASE("bias_add softmax layer_norm") {
  auto x = Value<double>::leaf(randn({4, 6}, 20));
  auto b = Value<double>::leaf(randn({6}, 21));
  CHECK(fd_check<double>({x, b}, [&] { return mean(bias_add(x, b)); }).ok(1e-6));

  CHECK(fd_check<double>({x}, [&] {
          auto s = softmax_rows(x);
          return mean(mul(s, s));
        }).ok(1e-6));

  // softmax rows sum to one
  auto s = softmax_rows(x);
  for (int r = 0; r < 4; ++r) {
    double acc = 0;
    for (int c = 0; c < 6; ++c) acc += s.val().at(r, c);
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-12));
  }

  auto g = Value<double>::leaf(randn({6}, 22));
  auto be = Value<double>::leaf(randn({6}, 23));
  CHECK(fd_check<double>({x, g, be}, [&] {
          auto y = layer_norm(x, g, be);
          return mean(mul(y, y));
        }, 1e-6).ok(1e-5));
}

TEST_CASE("shape ops: reshape slice concat") {
  auto a = Value<double>::leaf(randn({2, 3, 4}, 30));
  auto b = Value<double>::leaf(randn({2, 2, 4}, 31));
  CHECK(fd_check<double>({a, b}, [&] {
          auto c = concat<double>({slice(a, 1, 1, 2), b}, 1);
          auto r = reshape(c, {2 * 4 * 4});
          return mean(mul(r, r));
        }).ok(1e-6));
}

TEST_CASE("conv2d matches finite differences") {
  auto x = Value<double>::leaf(randn({2, 3, 6, 6}, 40, 0.5));
  auto w = Value<double>::leaf(randn({4, 3, 3, 3}, 41, 0.5));
  auto b = Value<double>::leaf(randn({4}, 42, 0.5));
  CHECK(fd_check<double>({x, w, b}, [&] {
          auto y = conv2d(x, w, b, 1, 1);
          return mean(mul(y, y));
        }).ok(1e-5));
  // strided
  CHECK(fd_check<double>({x, w, b}, [&] {
          auto y = conv2d(x, w, b, 2, 1);
          return mean(mul(y, y));
        }).ok(1e-5));
}

TEST_CASE("conv2d forward: identity kernel reproduces input") {
  Tensor<double> x({1, 1, 4, 4});
  for (size_t i = 0; i < 16; ++i) x[i] = double(i);
  Tensor<double> w({1, 1, 3, 3});
  w.at(0, 0, 1, 1) = 1.0;
  auto y = conv2d(Value<double>::constant(x), Value<double>::constant(w), 1, 1);
  for (size_t i = 0; i < 16; ++i) CHECK(y.val()[i] == doctest::Approx(x[i]));
}

TEST_CASE("padding pooling upsampling warp") {
  auto x = Value<double>::leaf(randn({2, 2, 4, 4}, 50, 0.5));
  CHECK(fd_check<double>({x}, [&] {
          auto y = pad_replicate2d(x, 2);
          return mean(mul(y, y));
        }).ok(1e-6));
  CHECK(fd_check<double>({x}, [&] {
          auto y = avgpool2x2(x);
          return mean(mul(y, y));
        }).ok(1e-6));
  CHECK(fd_check<double>({x}, [&] {
          auto y = upsample2x_nearest(x);
          return mean(mul(y, y));
        }).ok(1e-6));

  // smooth image, small interior flow: keeps FD off bilinear corners
  Tensor<double> img({1, 1, 8, 8});
  for (int yy = 0; yy < 8; ++yy)
    for (int xx = 0; xx < 8; ++xx)
      img.at(0, 0, yy, xx) = std::sin(0.7 * yy) * std::cos(0.5 * xx);
  Rng rng(51);
  Tensor<double> fl({1, 2, 8, 8});
  for (size_t i = 0; i < fl.numel(); ++i) fl[i] = rng.uniform(0.1, 0.4);
  auto iv = Value<double>::leaf(std::move(img));
  auto fv = Value<double>::leaf(std::move(fl));
  CHECK(fd_check<double>({iv, fv}, [&] {
          auto y = bilinear_warp(iv, fv);
          return mean(mul(y, y));
        }).ok(1e-5));
}

TEST_CASE("channel_weighted_sum") {
  auto x = Value<double>::leaf(randn({2, 3, 4, 4}, 60));
  std::vector<double> wts = {0.299, 0.587, 0.114};
  CHECK(fd_check<double>({x}, [&] {
          auto y = channel_weighted_sum(x, wts);
          return mean(mul(y, y));
        }).ok(1e-6));
}

TEST_CASE("diamond graphs accumulate both paths") {
  auto x = Value<double>::leaf(Tensor<double>::scalar(3.0));
  auto y = add(mul(x, x), x);  // x^2 + x, dy/dx = 2x + 1 = 7
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("deep chains do not overflow the stack") {
  auto x = Value<double>::leaf(Tensor<double>::scalar(1.0));
  Value<double> y = x;
  for (int i = 0; i < 4000; ++i) y = mul_scalar(add_scalar(y, 1e-3), 0.9995);
  auto r = sum(y);
  r.backward();
  CHECK(std::isfinite(x.grad()[0]));
  CHECK(x.grad()[0] == doctest::Approx(std::pow(0.9995, 4000)).epsilon(1e-9));
}

TEST_CASE("constants contribute no gradients and prune the tape") {
  auto x = Value<double>::leaf(Tensor<double>::scalar(2.0));
  auto c = Value<double>::constant(Tensor<double>::scalar(5.0));
  auto y = mul(x, c);
  CHECK_FALSE(c.requires_grad());
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(5.0));
}

TEST_CASE("two-layer MLP composite gradient") {
  Rng rng(70);
  nn::Linear<double> l1(5, 8, rng), l2(8, 3, rng);
  auto x = Value<double>::leaf(randn({4, 5}, 71));
  auto rep = fd_check<double>({x, l1.w, l1.b, l2.w, l2.b}, [&] {
    auto h = relu(l1(x));
    auto o = l2(h);
    return mean(mul(o, o));
  });
  CAPTURE(rep.max_rel);
  CHECK(rep.ok(1e-5));
}

TEST_SUITE_END();
