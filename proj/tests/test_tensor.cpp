#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "hopa/ops.hpp"
#include "hopa/serialize.hpp"
#include "support/testing.hpp"

using namespace hopa;
using hopa::testing::grad_check;
using hopa::testing::naive_conv2d;
using hopa::testing::random_tensor;
using hopa::testing::Readout;
using hopa::testing::uniform_int;

namespace {

Conv2d random_conv(int c_in, int c_out, int k, int stride, int dilation, int padding, bool bias,
                   Rng& rng) {
  Conv2d p;
  p.weight = random_tensor({c_out, c_in, k, k}, rng);
  if (bias) p.bias = random_tensor({1, c_out, 1, 1}, rng);
  p.stride = stride;
  p.dilation = dilation;
  p.padding = padding;
  return p;
}

constexpr double kGradTol = 1e-4;

}  // namespace

TEST_CASE("tensor construction and handle semantics") {
  Tensor t({1, 2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK_THROWS_AS(Tensor({1, 1, 2, 2}, std::vector<double>(3)), std::invalid_argument);
  Tensor alias = t;
  alias.at(0, 1, 2, 3) = 5.0;
  CHECK(t.at(0, 1, 2, 3) == 5.0);
  Tensor copy = t.clone();
  copy.at(0, 1, 2, 3) = 1.0;
  CHECK(t.at(0, 1, 2, 3) == 5.0);
  CHECK_THROWS_AS(t.item(), std::invalid_argument);
  CHECK(Tensor::scalar(2.5).item() == 2.5);
}

TEST_CASE("backward rejects non-scalar losses and graphless inputs") {
  Tensor x = Tensor::full({1, 1, 2, 2}, 1.0, true);
  CHECK_THROWS_AS(backward(x), std::invalid_argument);
  CHECK_THROWS_AS(backward(sum(Tensor::full({1, 1, 2, 2}, 1.0))), std::invalid_argument);
}

TEST_CASE("leaf gradients accumulate across backward calls") {
  Tensor x = Tensor::full({1, 1, 1, 2}, 3.0, true);
  backward(sum(eltwise_mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  backward(sum(eltwise_mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(12.0));
  x.zero_grad();
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("shared subexpressions receive the sum of both paths") {
  Tensor x = Tensor::full({1, 1, 1, 1}, 2.0, true);
  Tensor y = scale(x, 3.0);
  backward(sum(add(y, eltwise_mul(y, y))));  // 3x + 9x^2
  CHECK(x.grad()[0] == doctest::Approx(3.0 + 18.0 * 2.0));
}

TEST_CASE("conv2d 1x1 identity filter") {
  Rng rng(1);
  Tensor x = random_tensor({2, 3, 4, 5}, rng);
  Conv2d p;
  p.weight = Tensor({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) p.weight.at(c, c, 0, 0) = 1.0;
  Tensor y = conv2d(x, p);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d agrees with the sliding-window loop") {
  Rng rng(2);
  for (int trial = 0; trial < 60; ++trial) {
    const int k = trial % 3 == 0 ? 1 : 3;
    const int d = std::array<int, 4>{1, 2, 3, 6}[trial % 4];
    const int stride = 1 + trial % 2;
    const int pad = uniform_int(rng, 0, d * (k - 1) / 2 + 1);
    const int h = uniform_int(rng, d * (k - 1) + 1, 14);
    const int w = uniform_int(rng, d * (k - 1) + 1, 14);
    Tensor x = random_tensor({uniform_int(rng, 1, 2), uniform_int(rng, 1, 4), h, w}, rng);
    Conv2d p = random_conv(x.shape().c, uniform_int(rng, 1, 4), k, stride, d, pad, trial % 2 == 0, rng);
    Tensor got = conv2d(x, p);
    Tensor want = naive_conv2d(x, p);
    REQUIRE(got.shape() == want.shape());
    double worst = 0.0;
    for (std::size_t i = 0; i < got.numel(); ++i) worst = std::max(worst, std::abs(got.data()[i] - want.data()[i]));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("conv2d same padding keeps spatial size at large dilation") {
  Rng rng(3);
  Tensor x = random_tensor({1, 256, 28, 28}, rng);
  Conv2d p = random_conv(256, 2, 3, 1, 18, 18, false, rng);
  CHECK(conv2d(x, p).shape() == Shape{1, 2, 28, 28});
}

TEST_CASE("conv2d shape errors name both shapes") {
  Rng rng(4);
  Tensor x = random_tensor({1, 3, 5, 5}, rng);
  Conv2d p = random_conv(2, 1, 3, 1, 1, 1, false, rng);
  try {
    conv2d(x, p);
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(1,3,5,5)") != std::string::npos);
    CHECK(msg.find("(1,2,3,3)") != std::string::npos);
  }
}

TEST_CASE("elementwise product") {
  Rng rng(5);
  Tensor a = random_tensor({1, 3, 2, 2}, rng);
  Tensor b = random_tensor({1, 3, 2, 2}, rng);
  Tensor ones = Tensor::full(a.shape(), 1.0);
  Tensor p = eltwise_mul(a, b);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    CHECK(p.data()[i] == a.data()[i] * b.data()[i]);
    CHECK(eltwise_mul(a, ones).data()[i] == a.data()[i]);
    CHECK(eltwise_mul(a, Tensor::zeros(a.shape())).data()[i] == 0.0);
  }
  CHECK_THROWS_AS(eltwise_mul(a, Tensor({1, 3, 2, 1})), std::invalid_argument);
}

TEST_CASE("concat then slice recovers the blocks") {
  Rng rng(6);
  Tensor a = random_tensor({2, 2, 3, 3}, rng);
  Tensor b = random_tensor({2, 5, 3, 3}, rng);
  Tensor c = concat_channels({a, b});
  CHECK(c.shape() == Shape{2, 7, 3, 3});
  Tensor back = slice_channels(c, 2, 7);
  for (std::size_t i = 0; i < b.numel(); ++i) CHECK(back.data()[i] == b.data()[i]);
  CHECK_THROWS_AS(concat_channels({a, Tensor({2, 1, 3, 4})}), std::invalid_argument);
  CHECK_THROWS_AS(slice_channels(c, 3, 9), std::invalid_argument);
}

TEST_CASE("bilinear resize") {
  Rng rng(7);
  Tensor x = random_tensor({1, 2, 5, 6}, rng);
  Tensor same = bilinear_resize(x, 5, 6);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(same.data()[i] == doctest::Approx(x.data()[i]));

  Tensor dot = random_tensor({1, 2, 1, 1}, rng);
  Tensor wide = bilinear_resize(dot, 4, 3);
  for (int y = 0; y < 4; ++y)
    for (int xx = 0; xx < 3; ++xx) CHECK(wide.at(0, 1, y, xx) == dot.at(0, 1, 0, 0));

  Tensor flat = bilinear_resize(Tensor::full({1, 1, 3, 3}, 0.7), 7, 5);
  for (double v : flat.data()) CHECK(v == doctest::Approx(0.7));

  // 2x downsampling with half-pixel centres averages 2x2 blocks.
  Tensor ramp({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(bilinear_resize(ramp, 1, 1).item() == doctest::Approx(2.5));
}

TEST_CASE("max pool ignores padding") {
  Tensor x({1, 1, 2, 2}, {-4.0, -3.0, -2.0, -1.0});
  Tensor y = max_pool(x, 3, 1, 1);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  for (double v : y.data()) CHECK(v == -1.0);
  CHECK_THROWS_AS(max_pool(x, 3, 1, 2), std::invalid_argument);
}

TEST_CASE("batch norm modes") {
  Rng rng(8);
  Tensor x = random_tensor({3, 2, 4, 4}, rng, -2.0, 5.0);
  BatchNorm bn = BatchNorm::identity(2);
  Tensor y = batch_norm(x, bn, true);
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0, sq = 0.0;
    for (int n = 0; n < 3; ++n)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
          mean += y.at(n, c, i, j);
          sq += y.at(n, c, i, j) * y.at(n, c, i, j);
        }
    CHECK(mean / 48.0 == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(sq / 48.0 == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(bn.running_var.at(0, c, 0, 0) > 0.0);
  }
  BatchNorm fixed = BatchNorm::identity(2);
  Tensor z = batch_norm(x, fixed, false);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(z.data()[i] == doctest::Approx(x.data()[i] / std::sqrt(1.0 + fixed.eps)));
  }
  BatchNorm one = BatchNorm::identity(1);
  CHECK_THROWS_AS(batch_norm(Tensor({1, 1, 1, 1}), one, true), std::invalid_argument);
}

TEST_CASE("softmax, pooling and flip") {
  Rng rng(9);
  Tensor x = random_tensor({2, 4, 3, 3}, rng, -5.0, 5.0);
  Tensor p = softmax_channels(x);
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int c = 0; c < 4; ++c) s += p.at(n, c, i, j);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
      }
  Tensor g = global_avg_pool(Tensor::full({1, 2, 3, 5}, 1.5));
  CHECK(g.shape() == Shape{1, 2, 1, 1});
  CHECK(g.at(0, 1, 0, 0) == doctest::Approx(1.5));
  Tensor f = flip_horizontal(flip_horizontal(x));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(f.data()[i] == x.data()[i]);
  CHECK(flip_horizontal(x).at(1, 2, 1, 0) == x.at(1, 2, 1, 2));
}

TEST_CASE("finite-difference gradients of every operator") {
  Rng rng(10);
  Tensor x = random_tensor({2, 3, 5, 6}, rng);
  Tensor x2 = random_tensor({2, 3, 5, 6}, rng);

  SUBCASE("conv2d") {
    for (auto [k, s, d, pad] : std::vector<std::array<int, 4>>{{1, 1, 1, 0}, {3, 1, 2, 2}, {3, 2, 1, 1}, {3, 1, 3, 1}}) {
      Conv2d p = random_conv(3, 4, k, s, d, pad, true, rng);
      Readout r(conv2d(x, p).shape(), 11);
      auto loss = [&] { return r(conv2d(x, p)); };
      CHECK(grad_check(loss, x, rng).max_rel_error < kGradTol);
      CHECK(grad_check(loss, p.weight, rng).max_rel_error < kGradTol);
      CHECK(grad_check(loss, *p.bias, rng).max_rel_error < kGradTol);
    }
  }
  SUBCASE("eltwise, add, scale") {
    Readout r(x.shape(), 12);
    auto loss = [&] { return r(add(scale(eltwise_mul(x, x2), -1.5), x)); };
    CHECK(grad_check(loss, x, rng).max_rel_error < kGradTol);
    CHECK(grad_check(loss, x2, rng).max_rel_error < kGradTol);
  }
  SUBCASE("concat and slice") {
    Tensor b = random_tensor({2, 2, 5, 6}, rng);
    Readout r({2, 3, 5, 6}, 13);
    auto loss = [&] { return r(slice_channels(concat_channels({x, b}), 1, 4)); };
    CHECK(grad_check(loss, x, rng).max_rel_error < kGradTol);
    CHECK(grad_check(loss, b, rng).max_rel_error < kGradTol);
  }
  SUBCASE("relu") {
    Readout r(x.shape(), 14);
    auto loss = [&] { return r(relu(x)); };
    CHECK(grad_check(loss, x, rng).max_rel_error < kGradTol);
  }
  SUBCASE("batch norm, train and eval") {
    BatchNorm bn = BatchNorm::identity(3);
    bn.gamma = random_tensor({1, 3, 1, 1}, rng, 0.5, 1.5);
    bn.beta = random_tensor({1, 3, 1, 1}, rng);
    Readout r(x.shape(), 15);
    for (bool training : {true, false}) {
      auto loss = [&] { return r(batch_norm(x, bn, training)); };
      CHECK(grad_check(loss, x, rng).max_rel_error < kGradTol);
      CHECK(grad_check(loss, bn.gamma, rng).max_rel_error < kGradTol);
      CHECK(grad_check(loss, bn.beta, rng).max_rel_error < kGradTol);
    }
  }
  SUBCASE("pooling, resize, flip, sum") {
    Readout rg({2, 3, 1, 1}, 16);
    CHECK(grad_check([&] { return rg(global_avg_pool(x)); }, x, rng).max_rel_error < kGradTol);
    for (auto [h, w] : std::vector<std::pair<int, int>>{{3, 4}, {9, 11}, {5, 6}}) {
      Readout rr({2, 3, h, w}, 17);
      CHECK(grad_check([&] { return rr(bilinear_resize(x, h, w)); }, x, rng).max_rel_error < kGradTol);
    }
    Tensor dot = random_tensor({1, 2, 1, 1}, rng);
    Readout rb({1, 2, 4, 4}, 18);
    CHECK(grad_check([&] { return rb(bilinear_resize(dot, 4, 4)); }, dot, rng).max_rel_error < kGradTol);
    Readout rm(max_pool(x, 3, 2, 1).shape(), 19);
    CHECK(grad_check([&] { return rm(max_pool(x, 3, 2, 1)); }, x, rng).max_rel_error < kGradTol);
    Readout rf(x.shape(), 20);
    CHECK(grad_check([&] { return rf(flip_horizontal(x)); }, x, rng).max_rel_error < kGradTol);
  }
}

TEST_CASE("outputs stay finite on finite inputs") {
  Rng rng(21);
  Tensor x = random_tensor({1, 2, 6, 6}, rng, -1e3, 1e3);
  Conv2d p = random_conv(2, 2, 3, 1, 2, 2, true, rng);
  BatchNorm bn = BatchNorm::identity(2);
  Tensor y = bilinear_resize(batch_norm(relu(conv2d(x, p)), bn, true), 9, 4);
  for (double v : y.data()) CHECK(std::isfinite(v));
  for (double v : softmax_channels(scale(x, 1e3)).data()) CHECK(std::isfinite(v));
}

TEST_CASE("tensor serialization") {
  Rng rng(22);
  Tensor t = random_tensor({2, 3, 4, 5}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  CHECK(bytes.size() == 4 + 16 + 8 * t.numel());
  CHECK(bytes.substr(0, 4) == "HOT4");
  CHECK(static_cast<unsigned char>(bytes[4]) == 2);
  Tensor back = read_tensor(ss);
  CHECK(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) CHECK(back.data()[i] == t.data()[i]);

  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_tensor(truncated), FormatError);
  std::stringstream bad("HOTX" + bytes.substr(4));
  CHECK_THROWS_AS(read_tensor(bad), FormatError);
}
