#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "ad/gradcheck.hpp"
#include "ad/optim.hpp"
#include "ad/tensor.hpp"
#include "core/rng.hpp"

using namespace storygen;
using ad::Tensor;

namespace {

Tensor random_tensor(std::vector<int> shape, RngStream& rng, double scale = 1.0,
                     bool requires_grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (auto& v : t.mutable_data()) v = rng.normal(0.0, scale);
  return t;
}

std::vector<double> random_weights(int64_t n, RngStream& rng) {
  std::vector<double> w(static_cast<size_t>(n));
  for (auto& v : w) v = rng.normal(0.0, 1.0);
  return w;
}

// reduce any op output to a scalar through fixed random weights so every
// output coordinate influences the loss
Tensor weighted(const Tensor& t, RngStream& rng) {
  return ad::weighted_sum(t, random_weights(t.size(), rng));
}

void expect_gradcheck(const std::function<Tensor()>& loss,
                      const std::vector<std::pair<std::string, Tensor>>& params,
                      const char* what) {
  RngStream rng(123);
  auto report = ad::finite_difference_check(loss, params, 120, rng);
  INFO(what, ": max rel err ", report.max_rel_err, " at ", report.worst_parameter);
  CHECK(report.passed(1e-4));
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  Tensor x = Tensor::from({1, 2}, {0.0, 0.0});
  Tensor y = ad::softmax_rows(x);
  CHECK(y.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y.data()[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one with entries in (0,1)") {
  RngStream rng(7);
  Tensor x = random_tensor({17, 33}, rng, 3.0, false);
  Tensor y = ad::softmax_rows(x);
  for (int r = 0; r < 17; ++r) {
    double total = 0;
    for (int j = 0; j < 33; ++j) {
      const double v = y.data()[static_cast<size_t>(r) * 33 + j];
      CHECK(v > 0.0);
      CHECK(v < 1.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("matmul by identity returns the input") {
  RngStream rng(11);
  Tensor a = random_tensor({3, 3}, rng, 1.0, false);
  Tensor eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.mutable_data()[static_cast<size_t>(i) * 3 + i] = 1.0;
  Tensor out = ad::matmul(eye, a);
  for (size_t i = 0; i < a.data().size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(a.data()[i]).epsilon(1e-12));
}

TEST_CASE("cross entropy of uniform logits equals log K") {
  const int k = 128;
  Tensor logits = Tensor::zeros({1, k});
  Tensor ce = ad::cross_entropy_rows(logits, {17});
  CHECK(ce.data()[0] == doctest::Approx(std::log(128.0)).epsilon(1e-12));
  CHECK(ce.data()[0] == doctest::Approx(4.8520302639).epsilon(1e-9));
}

TEST_CASE("shape mismatch errors name the primitive and shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  CHECK_THROWS_WITH_AS(ad::matmul(a, b), "matmul: shape mismatch [2, 3] vs [4, 5]",
                       std::invalid_argument);
  CHECK_THROWS_AS(ad::add(a, b), std::invalid_argument);
}

TEST_CASE("backward requires a scalar loss") {
  Tensor x = Tensor::zeros({3}, true);
  CHECK_THROWS_AS(x.backward(), std::invalid_argument);
}

TEST_CASE("backward of sum gives unit gradients") {
  Tensor x = Tensor::from({4}, {1.0, 2.0, 3.0, 4.0}, true);
  ad::sum(x).backward();
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("backward of sum of squares gives 2x") {
  Tensor x = Tensor::from({2}, {2.0, -3.0}, true);
  ad::sum_squares(x).backward();
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(-6.0));
}

TEST_CASE("gradients accumulate over repeated use") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  ad::sum(ad::add(x, x)).backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("non-finite op outputs are rejected") {
  Tensor x = Tensor::from({1}, {std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(ad::gelu(x), std::runtime_error);
  Tensor big = Tensor::from({1, 2}, {1e200, 0.0});
  CHECK_THROWS_AS(ad::mul(big, big), std::runtime_error);  // overflow to inf
}

TEST_CASE("no-grad mode records no tape") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  ad::NoGradGuard guard;
  Tensor y = ad::scale(x, 2.0);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("gradcheck: elementwise and linear primitives") {
  RngStream rng(42);
  Tensor a = random_tensor({5, 7}, rng);
  Tensor b = random_tensor({5, 7}, rng);
  Tensor m1 = random_tensor({4, 6}, rng, 0.5);
  Tensor m2 = random_tensor({6, 3}, rng, 0.5);
  RngStream wrng(99);
  auto w_add = random_weights(35, wrng), w_mm = random_weights(12, wrng);

  expect_gradcheck([&] { return ad::weighted_sum(ad::add(a, b), w_add); },
                   {{"a", a}, {"b", b}}, "add");
  expect_gradcheck([&] { return ad::weighted_sum(ad::sub(a, b), w_add); },
                   {{"a", a}, {"b", b}}, "sub");
  expect_gradcheck([&] { return ad::weighted_sum(ad::mul(a, b), w_add); },
                   {{"a", a}, {"b", b}}, "mul");
  expect_gradcheck([&] { return ad::weighted_sum(ad::scale(a, -1.7), w_add); }, {{"a", a}},
                   "scale");
  expect_gradcheck([&] { return ad::weighted_sum(ad::matmul(m1, m2), w_mm); },
                   {{"m1", m1}, {"m2", m2}}, "matmul");
}

TEST_CASE("gradcheck: nonlinearities and normalization") {
  RngStream rng(43);
  Tensor x = random_tensor({6, 9}, rng);
  Tensor gamma = random_tensor({9}, rng, 0.3);
  for (auto& v : gamma.mutable_data()) v += 1.0;
  Tensor beta = random_tensor({9}, rng, 0.3);
  RngStream wrng(98);
  auto w = random_weights(54, wrng);

  expect_gradcheck([&] { return ad::weighted_sum(ad::gelu(x), w); }, {{"x", x}}, "gelu");
  expect_gradcheck([&] { return ad::weighted_sum(ad::sigmoid(x), w); }, {{"x", x}}, "sigmoid");
  expect_gradcheck([&] { return ad::weighted_sum(ad::softmax_rows(x), w); }, {{"x", x}},
                   "softmax");
  expect_gradcheck([&] { return ad::weighted_sum(ad::layer_norm_rows(x, gamma, beta), w); },
                   {{"x", x}, {"gamma", gamma}, {"beta", beta}}, "layer_norm");
}

TEST_CASE("gradcheck: embedding, losses and reductions") {
  RngStream rng(44);
  Tensor table = random_tensor({10, 5}, rng);
  std::vector<int> ids = {3, 0, 7, 3, 9, 1};
  Tensor logits = random_tensor({6, 8}, rng);
  std::vector<int> targets = {1, 0, 7, 3, 3, 5};
  RngStream wrng(97);
  auto w_emb = random_weights(30, wrng);
  auto w_ce = random_weights(6, wrng);
  std::vector<double> bce_targets(48);
  for (auto& t : bce_targets) t = wrng.uniform() < 0.5 ? 0.0 : 1.0;

  expect_gradcheck([&] { return ad::weighted_sum(ad::embedding(table, ids), w_emb); },
                   {{"table", table}}, "embedding");
  expect_gradcheck(
      [&] { return ad::weighted_sum(ad::cross_entropy_rows(logits, targets), w_ce); },
      {{"logits", logits}}, "cross_entropy");
  expect_gradcheck([&] { return ad::bce_with_logits(logits, bce_targets); }, {{"logits", logits}},
                   "bce_with_logits");
  expect_gradcheck([&] { return ad::sum(ad::mul(logits, logits)); }, {{"logits", logits}}, "sum");
  expect_gradcheck([&] { return ad::sum_squares(logits); }, {{"logits", logits}}, "sum_squares");
}

TEST_CASE("gradcheck: attention, self and cross shaped") {
  RngStream rng(45);
  const int d = 8, heads = 2;
  Tensor q = random_tensor({6, d}, rng, 0.7);
  Tensor k = random_tensor({10, d}, rng, 0.7);
  Tensor v = random_tensor({10, d}, rng, 0.7);
  RngStream wrng(96);
  auto w = random_weights(48, wrng);

  // two query blocks of 3 rows attending to distinct kv blocks of 5 rows
  expect_gradcheck(
      [&] { return ad::weighted_sum(ad::attention(q, k, v, heads, 3, 5, {0, 1}), w); },
      {{"q", q}, {"k", k}, {"v", v}}, "attention-cross");
  // self-attention: both blocks share one kv block (accumulation path)
  expect_gradcheck(
      [&] { return ad::weighted_sum(ad::attention(q, k, v, heads, 3, 10, {0, 0}), w); },
      {{"q", q}, {"k", k}, {"v", v}}, "attention-shared-kv");
}

TEST_CASE("gradcheck: structural ops") {
  RngStream rng(46);
  Tensor a = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({6, 5}, rng);
  Tensor block = random_tensor({2, 5}, rng);
  RngStream wrng(95);
  auto w_cat = random_weights(50, wrng);
  auto w_a = random_weights(20, wrng);
  auto w_slice = random_weights(10, wrng);
  auto w_inter = random_weights(50, wrng);

  expect_gradcheck([&] { return ad::weighted_sum(ad::concat_rows({a, b}), w_cat); },
                   {{"a", a}, {"b", b}}, "concat_rows");
  expect_gradcheck([&] { return ad::weighted_sum(ad::slice_rows(b, 2, 4), w_slice); },
                   {{"b", b}}, "slice_rows");
  expect_gradcheck([&] { return ad::weighted_sum(ad::add_tiled(a, block, 2), w_a); },
                   {{"a", a}, {"block", block}}, "add_tiled");
  expect_gradcheck(
      [&] { return ad::weighted_sum(ad::add_tiled_masked(a, block, {1, 0}), w_a); },
      {{"a", a}, {"block", block}}, "add_tiled_masked");
  expect_gradcheck(
      [&] { return ad::weighted_sum(ad::interleave_blocks({a, b}, {2, 3}, 2), w_inter); },
      {{"a", a}, {"b", b}}, "interleave_blocks");
  expect_gradcheck([&] { return ad::weighted_sum(ad::reshape(a, {5, 4}), w_a); }, {{"a", a}},
                   "reshape");
}

TEST_CASE("gradcheck: convolutions") {
  RngStream rng(47);
  Tensor x = random_tensor({2, 3, 6, 6}, rng, 0.5);
  Tensor w_conv = random_tensor({4, 3, 4, 4}, rng, 0.3);
  Tensor b_conv = random_tensor({4}, rng, 0.1);
  Tensor xt = random_tensor({2, 4, 3, 3}, rng, 0.5);
  Tensor w_tconv = random_tensor({4, 3, 4, 4}, rng, 0.3);
  Tensor b_tconv = random_tensor({3}, rng, 0.1);
  RngStream wrng(94);
  auto w1 = random_weights(2 * 4 * 3 * 3, wrng);
  auto w2 = random_weights(2 * 3 * 6 * 6, wrng);
  auto w3 = random_weights(2 * 3 * 6 * 6, wrng);

  expect_gradcheck(
      [&] { return ad::weighted_sum(ad::conv2d(x, w_conv, b_conv, 2, 1), w1); },
      {{"x", x}, {"w", w_conv}, {"b", b_conv}}, "conv2d");
  expect_gradcheck(
      [&] { return ad::weighted_sum(ad::conv2d_transpose(xt, w_tconv, b_tconv, 2, 1), w2); },
      {{"x", xt}, {"w", w_tconv}, {"b", b_tconv}}, "conv2d_transpose");
  expect_gradcheck([&] { return ad::weighted_sum(ad::nchw_to_rows(x), w3); }, {{"x", x}},
                   "nchw_to_rows");
}

TEST_CASE("detach blocks gradient flow") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor y = ad::add(x, ad::detach(ad::scale(x, 3.0)));
  ad::sum(y).backward();
  CHECK(x.grad()[0] == doctest::Approx(1.0));
  CHECK(x.grad()[1] == doctest::Approx(1.0));
}

TEST_CASE("adam descends a square and leaves zero-gradient parameters unchanged") {
  ad::ParameterStore store;
  Tensor w = store.create("w", {1});
  w.mutable_data()[0] = 1.0;
  ad::AdamSettings settings;
  settings.lr = 0.1;

  Tensor loss = ad::sum_squares(w);
  loss.backward();
  store.adam_step(settings);
  CHECK(w.data()[0] < 1.0);

  ad::ParameterStore store2;
  Tensor w2 = store2.create("w2", {1});
  w2.mutable_data()[0] = 0.5;
  store2.fill_missing_grads();
  store2.adam_step(settings);
  CHECK(w2.data()[0] == doctest::Approx(0.5));
}

TEST_CASE("adam errors on a missing gradient, naming the parameter") {
  ad::ParameterStore store;
  store.create("weights.q", {2, 2});
  ad::AdamSettings settings;
  CHECK_THROWS_WITH_AS(store.adam_step(settings),
                       "adam_step: missing gradient for parameter 'weights.q'",
                       std::runtime_error);
}

TEST_CASE("adam drives a 2-d quadratic below 1e-6 in 200 steps") {
  ad::ParameterStore store;
  Tensor w = store.create("w", {2});
  w.mutable_data() = {1.0, -1.5};
  ad::AdamSettings settings;
  settings.lr = 0.05;
  double last = 0;
  for (int step = 0; step < 200; ++step) {
    Tensor diff = ad::sub(w, Tensor::from({2}, {0.3, -0.2}));
    Tensor loss = ad::sum_squares(diff);
    last = loss.item();
    loss.backward();
    store.adam_step(settings);
  }
  CHECK(last < 1e-6);
}

TEST_CASE("duplicate parameter names are rejected") {
  ad::ParameterStore store;
  store.create("w", {1});
  CHECK_THROWS_AS(store.create("w", {2}), std::invalid_argument);
}

TEST_CASE("embedding id range is validated") {
  Tensor table = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(ad::embedding(table, {4}), std::invalid_argument);
  CHECK_THROWS_AS(ad::embedding(table, {-1}), std::invalid_argument);
}
