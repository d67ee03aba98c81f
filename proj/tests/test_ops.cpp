#include <cmath>

#include "doctest.h"

#include "diffe/ops.hpp"
#include "diffe/rng.hpp"

using namespace diffe;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false, double scale = 1.0) {
  Tensor t(std::move(shape), requires_grad);
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

}  // namespace

TEST_CASE("conv1d matches hand-computed values") {
  // [1,2,3] * kernel [1,0,-1] -> 1*1 + 0*2 + (-1)*3 = -2
  Tensor x = Tensor::from_data({1, 1, 3}, {1, 2, 3});
  Tensor w = Tensor::from_data({1, 1, 3}, {1, 0, -1});
  Tensor out = conv1d(x, w, Tensor(), 1, 0);
  CHECK(out.shape() == Shape{1, 1, 1});
  CHECK(out.values()[0] == doctest::Approx(-2.0));
}

TEST_CASE("conv1d identity kernel with padding") {
  Rng rng(11);
  Tensor x = random_tensor({2, 1, 7}, rng);
  Tensor w = Tensor::from_data({1, 1, 3}, {0, 1, 0});
  Tensor out = conv1d(x, w, Tensor(), 1, 1);
  CHECK(out.shape() == x.shape());
  for (int i = 0; i < x.numel(); ++i) CHECK(out.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-15));
}

TEST_CASE("conv1d on zero input returns the bias everywhere") {
  Rng rng(12);
  Tensor x = Tensor::zeros({2, 3, 9});
  Tensor w = random_tensor({4, 3, 3}, rng);
  Tensor b = Tensor::from_data({4}, {0.5, -1.0, 2.0, 0.0});
  Tensor out = conv1d(x, w, b, 2, 1);
  const int Lo = out.dim(2);
  CHECK(Lo == (9 + 2 - 3) / 2 + 1);
  for (int bi = 0; bi < 2; ++bi)
    for (int oc = 0; oc < 4; ++oc)
      for (int l = 0; l < Lo; ++l)
        CHECK(out.values()[(static_cast<size_t>(bi) * 4 + oc) * Lo + l] == b.values()[static_cast<size_t>(oc)]);
}

TEST_CASE("conv1d output length and guards") {
  Tensor x = Tensor::zeros({1, 1, 5});
  Tensor w = Tensor::zeros({1, 1, 3});
  CHECK(conv1d(x, w, Tensor(), 2, 0).dim(2) == 2);
  CHECK(conv1d(x, w, Tensor(), 2, 1).dim(2) == 3);
  CHECK_THROWS_AS(conv1d(x, Tensor::zeros({1, 2, 3}), Tensor(), 1, 0), DimensionError);
  CHECK_THROWS_AS(conv1d(x, Tensor::zeros({1, 1, 9}), Tensor(), 1, 0), DimensionError);
  Tensor bad = Tensor::from_data({1, 1, 5}, {1.0, 2.0, std::nan(""), 0.0, 1.0});
  CHECK_THROWS_AS(conv1d(bad, w, Tensor(), 1, 0), NumericError);
}

TEST_CASE("conv1d is linear in its input") {
  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor({2, 3, 16}, rng);
    Tensor y = random_tensor({2, 3, 16}, rng);
    Tensor w = random_tensor({4, 3, 5}, rng);
    const double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-2.0, 2.0);

    Tensor mixed(Shape{2, 3, 16});
    for (int i = 0; i < mixed.numel(); ++i) mixed.values()[i] = a * x.values()[i] + b * y.values()[i];

    Tensor lhs = conv1d(mixed, w, Tensor(), 1, 2);
    Tensor cx = conv1d(x, w, Tensor(), 1, 2);
    Tensor cy = conv1d(y, w, Tensor(), 1, 2);
    for (int i = 0; i < lhs.numel(); ++i)
      CHECK(lhs.values()[i] == doctest::Approx(a * cx.values()[i] + b * cy.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("adaptive_avg_pool1d bin means") {
  Tensor x = Tensor::from_data({1, 1, 4}, {1, 2, 3, 4});
  Tensor out = adaptive_avg_pool1d(x, 2);
  CHECK(out.values()[0] == doctest::Approx(1.5));
  CHECK(out.values()[1] == doctest::Approx(3.5));

  Tensor same = adaptive_avg_pool1d(x, 4);
  for (int i = 0; i < 4; ++i) CHECK(same.values()[i] == x.values()[i]);

  Tensor one = adaptive_avg_pool1d(x, 1);
  CHECK(one.values()[0] == doctest::Approx(2.5));

  CHECK_THROWS_AS(adaptive_avg_pool1d(x, 5), DimensionError);
}

TEST_CASE("pooling partitions [0,L) and preserves the mean when out divides L") {
  Rng rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const int L = 12;
    const int out_len = std::vector<int>{1, 2, 3, 4, 6, 12}[static_cast<size_t>(rng.uniform_int(0, 5))];
    Tensor x = random_tensor({1, 2, L}, rng);
    Tensor p = adaptive_avg_pool1d(x, out_len);
    double mx = 0, mp = 0;
    for (double v : x.values()) mx += v;
    for (double v : p.values()) mp += v;
    CHECK(mx / x.numel() == doctest::Approx(mp / p.numel()).epsilon(1e-12));
  }
  // uneven split still partitions: total weight of each input element is 1/bin
  Tensor x = Tensor::from_data({1, 1, 5}, {1, 1, 1, 1, 1});
  Tensor p = adaptive_avg_pool1d(x, 3);
  for (int i = 0; i < 3; ++i) CHECK(p.values()[i] == doctest::Approx(1.0));
}

TEST_CASE("grad_check validates epsilon and simple linear maps") {
  Tensor x = Tensor::from_data({3}, {1.0, -0.5, 2.0}, true);
  auto linear3 = [](const std::vector<Tensor>& in) { return scale(in[0], 3.0); };
  CHECK(grad_check(linear3, {x}, 1e-5) < 1e-10);
  CHECK_THROWS_AS(grad_check(linear3, {x}, 1e-2), ConfigError);
}

TEST_CASE("grad_check on conv1d") {
  Rng rng(15);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor({2, 2, 10}, rng, true);
    Tensor w = random_tensor({3, 2, 3}, rng, true, 0.5);
    Tensor b = random_tensor({3}, rng, true, 0.2);
    auto fn = [](const std::vector<Tensor>& in) { return conv1d(in[0], in[1], in[2], 2, 1); };
    worst = std::max(worst, grad_check(fn, {x, w, b}, 1e-5));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("grad_check through conv -> norm -> activation -> pool") {
  Rng rng(16);
  double worst = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    Tensor x = random_tensor({1, 2, 12}, rng, true);
    Tensor w = random_tensor({4, 2, 3}, rng, true, 0.5);
    Tensor b = random_tensor({4}, rng, true, 0.2);
    Tensor gamma = random_tensor({4}, rng, true, 0.3);
    for (double& v : gamma.values()) v += 1.0;
    Tensor beta = random_tensor({4}, rng, true, 0.3);
    auto fn = [](const std::vector<Tensor>& in) {
      Tensor h = conv1d(in[0], in[1], in[2], 1, 1);
      h = group_norm(h, in[3], in[4], 2);
      return adaptive_avg_pool1d(silu(h), 3);
    };
    worst = std::max(worst, grad_check(fn, {x, w, b, gamma, beta}, 1e-5));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("every primitive passes grad_check over 20 seeds") {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    Tensor x3 = random_tensor({2, 4, 9}, rng, true);
    Tensor y3 = random_tensor({2, 4, 9}, rng, true);
    Tensor x2 = random_tensor({3, 5}, rng, true);
    Tensor w = random_tensor({2, 5}, rng, true, 0.5);
    Tensor wb = random_tensor({2}, rng, true, 0.5);
    Tensor gamma = random_tensor({4}, rng, true, 0.2);
    for (double& v : gamma.values()) v += 1.0;
    Tensor beta = random_tensor({4}, rng, true, 0.2);
    Tensor cb = random_tensor({2, 4}, rng, true);

    auto gc = [&worst](auto fn, std::vector<Tensor> inputs) {
      worst = std::max(worst, grad_check(fn, std::move(inputs), 1e-5));
    };
    gc([](const std::vector<Tensor>& in) { return add(in[0], in[1]); }, {x3, y3});
    gc([](const std::vector<Tensor>& in) { return sub(in[0], in[1]); }, {x3, y3});
    gc([](const std::vector<Tensor>& in) { return mul(in[0], in[1]); }, {x3, y3});
    gc([](const std::vector<Tensor>& in) { return scale(in[0], -1.7); }, {x3});
    gc([](const std::vector<Tensor>& in) { return silu(in[0]); }, {x3});
    gc([](const std::vector<Tensor>& in) { return mean_all(in[0]); }, {x3});
    gc([](const std::vector<Tensor>& in) { return reshape(in[0], {4, 18}); }, {x3});
    gc([](const std::vector<Tensor>& in) { return concat_channels({in[0], in[1]}); }, {x3, y3});
    gc([](const std::vector<Tensor>& in) { return pad_right(in[0], 12); }, {x3});
    gc([](const std::vector<Tensor>& in) { return crop_right(in[0], 5); }, {x3});
    gc([](const std::vector<Tensor>& in) { return upsample2(in[0]); }, {x3});
    gc([](const std::vector<Tensor>& in) { return adaptive_avg_pool1d(in[0], 4); }, {x3});
    gc([](const std::vector<Tensor>& in) { return linear(in[0], in[1], in[2]); }, {x2, w, wb});
    gc([](const std::vector<Tensor>& in) { return group_norm(in[0], in[1], in[2], 2); }, {x3, gamma, beta});
    gc([](const std::vector<Tensor>& in) { return add_channel_bias(in[0], in[1]); }, {x3, cb});
    // |x| has a kink at 0; random normals stay away from it
    gc([](const std::vector<Tensor>& in) { return abs(in[0]); }, {x3});
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("upsample, crop, pad and concat shapes") {
  Rng rng(17);
  Tensor x = random_tensor({2, 3, 5}, rng);
  CHECK(upsample2(x).shape() == Shape{2, 3, 10});
  CHECK(pad_right(x, 8).shape() == Shape{2, 3, 8});
  CHECK(crop_right(x, 4).shape() == Shape{2, 3, 4});
  Tensor y = random_tensor({2, 2, 5}, rng);
  CHECK(concat_channels({x, y}).shape() == Shape{2, 5, 5});
  CHECK_THROWS_AS(concat_channels({x, random_tensor({2, 2, 6}, rng)}), DimensionError);
  CHECK_THROWS_AS(pad_right(x, 3), DimensionError);
  CHECK_THROWS_AS(crop_right(x, 9), DimensionError);
}

TEST_CASE("group_norm normalizes per group") {
  Rng rng(18);
  Tensor x = random_tensor({2, 4, 8}, rng, false, 3.0);
  Tensor gamma = Tensor::full({4}, 1.0);
  Tensor beta = Tensor::zeros({4});
  Tensor out = group_norm(x, gamma, beta, 2);
  // each (sample, group) block has mean ~0 and variance ~1
  for (int b = 0; b < 2; ++b)
    for (int g = 0; g < 2; ++g) {
      double mean = 0, var = 0;
      for (int c = 0; c < 2; ++c)
        for (int l = 0; l < 8; ++l) mean += out.values()[((b * 4) + g * 2 + c) * 8 + l];
      mean /= 16.0;
      for (int c = 0; c < 2; ++c)
        for (int l = 0; l < 8; ++l) {
          const double d = out.values()[((b * 4) + g * 2 + c) * 8 + l] - mean;
          var += d * d;
        }
      var /= 16.0;
      CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
      CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
  CHECK_THROWS_AS(group_norm(x, gamma, beta, 3), DimensionError);
}
