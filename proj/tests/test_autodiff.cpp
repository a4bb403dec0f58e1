// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "doctest.h"

#include "fashionmt/autodiff.hpp"
#include "fashionmt/error.hpp"

using namespace fashionmt;
using ad::Tensor;

namespace {

Tensor rand_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Weighted sum so every output coordinate carries a distinct gradient.
Tensor probe(const Tensor& y) {
  std::vector<double> w(y.numel());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
  return ad::sum_all(ad::mul(y, Tensor::from(y.shape(), w)));
}

}  // namespace

TEST_CASE("forward values of elementary ops") {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  const Tensor m = ad::matmul(a, b);
  CHECK(m[0] == 19);
  CHECK(m[1] == 22);
  CHECK(m[2] == 43);
  CHECK(m[3] == 50);
  const Tensor s = ad::add(a, Tensor::from({2}, {10, 20}));
  CHECK(s[3] == 24);
  CHECK(ad::sum_all(a).item() == 10);
  const Tensor sm = ad::softmax(Tensor::from({1, 2}, {0, 0}), 1);
  CHECK(sm[0] == doctest::Approx(0.5));
  const Tensor t = ad::transpose(a);
  CHECK(t[1] == 3);
}

TEST_CASE("broadcast rejects non-suffix shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(ad::add(a, Tensor::zeros({2})), Error);
  CHECK_NOTHROW(ad::add(a, Tensor::zeros({3})));
  CHECK_NOTHROW(ad::add(a, Tensor::scalar(1.0)));
}

TEST_CASE("gradient checks of primitives") {
  std::mt19937_64 rng(7);
  const double tol = 1e-6;
  SUBCASE("matmul") {
    Tensor a = rand_tensor({3, 4}, rng), b = rand_tensor({4, 2}, rng);
    CHECK(ad::grad_check_params([&] { return probe(ad::matmul(a, b)); }, {a, b}) < tol);
  }
  SUBCASE("batched matmul") {
    Tensor a = rand_tensor({2, 3, 4}, rng), b = rand_tensor({2, 4, 2}, rng);
    CHECK(ad::grad_check_params([&] { return probe(ad::matmul(a, b)); }, {a, b}) < tol);
  }
  SUBCASE("broadcast add sub mul") {
    Tensor a = rand_tensor({2, 3, 4}, rng), b = rand_tensor({4}, rng);
    CHECK(ad::grad_check_params([&] { return probe(ad::add(a, b)); }, {a, b}) < tol);
    CHECK(ad::grad_check_params([&] { return probe(ad::sub(b, a)); }, {a, b}) < tol);
    CHECK(ad::grad_check_params([&] { return probe(ad::mul(a, b)); }, {a, b}) < tol);
  }
  SUBCASE("exp log scale neg") {
    Tensor a = rand_tensor({5}, rng, 0.2, 2.0);
    CHECK(ad::grad_check([](const Tensor& x) { return probe(ad::exp(x)); }, a) < tol);
    CHECK(ad::grad_check([](const Tensor& x) { return probe(ad::log(x)); }, a) < tol);
    CHECK(ad::grad_check([](const Tensor& x) { return probe(ad::neg(ad::scale(x, 3))); }, a) <
          tol);
  }
  SUBCASE("shape ops") {
    Tensor a = rand_tensor({2, 3, 4}, rng), b = rand_tensor({2, 1, 4}, rng);
    CHECK(ad::grad_check([](const Tensor& x) { return probe(ad::permute(x, {2, 0, 1})); }, a) <
          tol);
    CHECK(ad::grad_check([](const Tensor& x) { return probe(ad::reshape(x, {6, 4})); }, a) < tol);
    CHECK(ad::grad_check([](const Tensor& x) { return probe(ad::slice(x, 1, 1, 3)); }, a) < tol);
    CHECK(ad::grad_check([](const Tensor& x) { return probe(ad::transpose(x)); }, a) < tol);
    CHECK(ad::grad_check_params([&] { return probe(ad::concat({a, b}, 1)); }, {a, b}) < tol);
  }
  SUBCASE("reductions") {
    Tensor a = rand_tensor({3, 4}, rng);
    CHECK(ad::grad_check([](const Tensor& x) { return probe(ad::sum(x, 0)); }, a) < tol);
    CHECK(ad::grad_check([](const Tensor& x) { return probe(ad::mean(x, 1)); }, a) < tol);
    CHECK(ad::grad_check([](const Tensor& x) { return ad::mean_all(ad::mul(x, x)); }, a) < tol);
  }
  SUBCASE("softmax family") {
    Tensor a = rand_tensor({3, 5}, rng, -3, 3);
    CHECK(ad::grad_check([](const Tensor& x) { return probe(ad::softmax(x, 1)); }, a) < tol);
    CHECK(ad::grad_check([](const Tensor& x) { return probe(ad::log_softmax(x, 0)); }, a) < tol);
  }
  SUBCASE("layer norm") {
    Tensor x = rand_tensor({3, 6}, rng), g = rand_tensor({6}, rng), b = rand_tensor({6}, rng);
    CHECK(ad::grad_check_params([&] { return probe(ad::layer_norm(x, g, b)); }, {x, g, b}) < tol);
  }
  SUBCASE("quick gelu, l2 normalize") {
    Tensor x = rand_tensor({4, 3}, rng, -2, 2);
    CHECK(ad::grad_check([](const Tensor& t) { return probe(ad::quick_gelu(t)); }, x) < tol);
    CHECK(ad::grad_check([](const Tensor& t) { return probe(ad::l2_normalize(t)); }, x) < tol);
  }
  SUBCASE("embedding, pick, masked fill") {
    Tensor table = rand_tensor({5, 3}, rng);
    const std::vector<std::size_t> ids = {4, 0, 4, 2};
    CHECK(ad::grad_check([&](const Tensor& t) { return probe(ad::embedding(t, ids)); }, table) <
          tol);
    Tensor logits = rand_tensor({4, 3}, rng);
    const std::vector<std::size_t> idx = {0, 2, 1, 1};
    CHECK(ad::grad_check([&](const Tensor& t) { return probe(ad::pick(t, idx)); }, logits) < tol);
    const std::vector<double> mask = {0, ad::kMaskValue, 0, 0, 0, 0, ad::kMaskValue, 0, 0, 0, 0, 0};
    CHECK(ad::grad_check(
              [&](const Tensor& t) { return probe(ad::softmax(ad::masked_fill(t, mask), 1)); },
              logits) < tol);
  }
}

TEST_CASE("masked entries get exactly zero probability") {
  const Tensor x = Tensor::from({1, 3}, {1, 2, 3});
  const std::vector<double> mask = {0, ad::kMaskValue, 0};
  const Tensor p = ad::softmax(ad::masked_fill(x, mask), 1);
  CHECK(p[1] == 0.0);
}

TEST_CASE("reused tensors accumulate gradients") {
  Tensor x = Tensor::from({2}, {3, 4}, true);
  ad::backward(ad::sum_all(ad::mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(6));
  CHECK(x.grad()[1] == doctest::Approx(8));
}

TEST_CASE("tape is consumed by backward") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  const Tensor y = ad::sum_all(ad::mul(x, x));
  ad::backward(y);
  CHECK_THROWS_AS(ad::backward(y), Error);
}

TEST_CASE("no-grad guard records nothing") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor y;
  {
    ad::NoGradGuard ng;
    y = ad::sum_all(ad::mul(x, x));
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(ad::grad_enabled());
}

TEST_CASE("clear_grad drops the buffer") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  ad::backward(ad::sum_all(x));
  CHECK(x.has_grad());
  x.clear_grad();
  CHECK_FALSE(x.has_grad());
  CHECK(x.grad() == std::vector<double>{0, 0});
}

TEST_CASE("log rejects non-positive input") {
  CHECK_THROWS_AS(ad::log(Tensor::from({2}, {1, 0})), Error);
}
