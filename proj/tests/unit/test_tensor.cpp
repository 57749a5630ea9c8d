#include <cmath>
#include <sstream>

#include "doctest.h"
#include "evfsam/autodiff.hpp"
#include "evfsam/errors.hpp"
#include "evfsam/gradcheck.hpp"
#include "evfsam/ops.hpp"
#include "evfsam/serialize.hpp"
#include "helpers.hpp"

using namespace evfsam;
using testing::mat;
using testing::random_tensor;

namespace {

// Naive triple loop.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t l = 0; l < k; ++l) s += a[i * k + l] * b[l * n + j];
      c[i * n + j] = s;
    }
  return c;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  for (Scalar v : t.data()) CHECK(v == 0);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<Scalar>{1, 2, 3}), ShapeError);

  Tensor c = t.clone();
  c[0] = 5;
  CHECK(t[0] == 0);
  CHECK_FALSE(identical(t, c));
  CHECK(identical(t, t.clone()));

  Tensor g({3}, true);
  CHECK(g.has_grad());
  CHECK(g.grad().size() == 3);
}

TEST_CASE("matmul examples") {
  const Tensor a = mat(2, 2, {1, 2, 3, 4});
  CHECK(identical(matmul(Tensor::eye(2), a), a));
  const Tensor p = matmul(a, mat(2, 2, {5, 6, 7, 8}));
  CHECK(p[0] == 19);
  CHECK(p[1] == 22);
  CHECK(p[2] == 43);
  CHECK(p[3] == 50);
  const Tensor z = matmul(Tensor::zeros({2, 2}), random_tensor({2, 2}, 1));
  for (Scalar v : z.data()) CHECK(v == 0);
  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
  try {
    matmul(Tensor({2, 3}), Tensor({4, 5}));
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
}

TEST_CASE("matmul matches naive product, batched too") {
  const Tensor a = random_tensor({5, 7}, 2), b = random_tensor({7, 3}, 3);
  CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-12);

  const Tensor ba = random_tensor({2, 3, 4}, 4), bb = random_tensor({2, 4, 5}, 5);
  const Tensor out = matmul(ba, bb);
  for (std::size_t i = 0; i < 2; ++i) {
    Tensor ai({3, 4}), bi({4, 5});
    std::copy_n(ba.data().begin() + i * 12, 12, ai.data().begin());
    std::copy_n(bb.data().begin() + i * 20, 20, bi.data().begin());
    const Tensor ci = naive_matmul(ai, bi);
    for (std::size_t j = 0; j < 15; ++j) CHECK(std::abs(out[i * 15 + j] - ci[j]) < 1e-12);
  }
}

TEST_CASE("softmax examples") {
  Tensor s = softmax(Tensor({3}, {2.5, 2.5, 2.5}), 0);
  for (Scalar v : s.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
  s = softmax(Tensor({2}, {0.0, std::log(2.0)}), 0);
  CHECK(s[0] == doctest::Approx(1.0 / 3).epsilon(1e-14));
  CHECK(s[1] == doctest::Approx(2.0 / 3).epsilon(1e-14));

  const Tensor x = random_tensor({3, 4, 5}, 6, 3.0);
  Tensor shifted = x.clone();
  for (auto& v : shifted.data()) v += 17.25;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const Tensor a = softmax(x, axis);
    CHECK(max_abs_diff(a, softmax(shifted, axis)) < 1e-7);
    for (Scalar v : a.data()) CHECK((v > 0 && v < 1));
  }
  // Slices along the last axis sum to 1.
  const Tensor a = softmax(x, 2);
  for (std::size_t r = 0; r < 12; ++r) {
    double sum = 0;
    for (std::size_t j = 0; j < 5; ++j) sum += a[r * 5 + j];
    CHECK(std::abs(sum - 1) < 1e-6);
  }
  // Large logits stay finite.
  CHECK(softmax(Tensor({2}, {1000.0, 0.0}), 0).all_finite());
}

TEST_CASE("layer_norm examples") {
  const Tensor one = Tensor::full({3}, 1), zero = Tensor::zeros({3});
  const Tensor c = layer_norm(Tensor({3}, {4, 4, 4}), one, zero);
  for (Scalar v : c.data()) CHECK(v == 0);

  const Tensor two = layer_norm(Tensor({2}, {1, 3}), Tensor::full({2}, 1), Tensor::zeros({2}), 1e-12);
  CHECK(two[0] == doctest::Approx(-1).epsilon(1e-9));
  CHECK(two[1] == doctest::Approx(1).epsilon(1e-9));

  const Tensor beta({3}, {0.5, -1, 2});
  const Tensor collapsed = layer_norm(random_tensor({4, 3}, 7), Tensor::zeros({3}), beta);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < 3; ++j) CHECK(collapsed[r * 3 + j] == beta[j]);

  const Tensor y = layer_norm(random_tensor({6, 16}, 8, 4.0), Tensor::full({16}, 1), Tensor::zeros({16}));
  for (std::size_t r = 0; r < 6; ++r) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 16; ++j) m += y[r * 16 + j];
    m /= 16;
    for (std::size_t j = 0; j < 16; ++j) v += (y[r * 16 + j] - m) * (y[r * 16 + j] - m);
    CHECK(std::abs(m) < 1e-12);
    CHECK(std::abs(v / 16 - 1) < 1e-4);
  }
}

TEST_CASE("no silent broadcasting") {
  CHECK_THROWS_AS(add(Tensor({2, 3}), Tensor({3})), ShapeError);
  CHECK_THROWS_AS(mul(Tensor({2, 3}), Tensor({3, 2})), ShapeError);
  CHECK_THROWS_AS(add_bias(Tensor({2, 3}), Tensor({2})), ShapeError);
  CHECK_THROWS_AS(reshape(Tensor({2, 3}), {4}), ShapeError);
}

TEST_CASE("backward examples") {
  Tensor x = Tensor::scalar(3, true);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(mul(x, x));
  }
  CHECK(x.grad()[0] == 6);

  Tensor unused({4}, true);
  Tensor other({4}, true);
  {
    Tape tape;
    TapeScope scope(tape);
    mul(unused, unused);  // recorded but not on the loss path
    tape.backward(sum(other));
  }
  for (Scalar g : unused.grad()) CHECK(g == 0);
  for (Scalar g : other.grad()) CHECK(g == 1);

  Tape tape;
  TapeScope scope(tape);
  Tensor v({3}, true);
  CHECK_THROWS_AS(tape.backward(scale(v, 2)), ContractError);
}

TEST_CASE("tape visits only reachable records, each once") {
  Tensor a = random_tensor({3}, 9, 1.0, true);
  Tape tape;
  std::size_t visited = 0;
  {
    TapeScope scope(tape);
    Tensor dead = sigmoid(a);
    Tensor live = sum(mul(a, a));
    (void)dead;
    visited = tape.backward(live);
  }
  CHECK(tape.size() == 3);
  CHECK(visited == 2);
}

TEST_CASE("NoGradScope records nothing") {
  Tensor a = random_tensor({3}, 10, 1.0, true);
  Tape tape;
  TapeScope scope(tape);
  {
    NoGradScope no_grad;
    sum(mul(a, a));
  }
  CHECK(tape.size() == 0);
}

TEST_CASE("grad_check examples") {
  CHECK(grad_check([](const Tensor& x) { return sum(x); }, random_tensor({5}, 11)) < 1e-9);
  CHECK(grad_check([](const Tensor& x) { return sum(mul(x, x)); }, random_tensor({4, 3}, 12)) < 1e-6);
  const Tensor w = random_tensor({6}, 13);
  CHECK(grad_check([&](const Tensor& x) { return sum(mul(softmax(x, 0), w)); }, random_tensor({6}, 14)) < 1e-5);
}

TEST_CASE("3-layer MLP gradients match finite differences") {
  Tensor x = random_tensor({4, 5}, 20);
  Tensor w1 = random_tensor({5, 8}, 21), b1 = random_tensor({8}, 22);
  Tensor w2 = random_tensor({8, 8}, 23), b2 = random_tensor({8}, 24);
  Tensor w3 = random_tensor({8, 1}, 25), b3 = random_tensor({1}, 26);
  auto f = [&]() {
    Tensor h = gelu(linear(x, w1, b1));
    h = sigmoid(linear(h, w2, b2));
    return mean(linear(h, w3, b3));
  };
  CHECK(grad_check(f, {w1, b1, w2, b2, w3, b3}) < 1e-6);
}

// Every differentiable op over >= 20 random small shapes.
TEST_CASE("per-op gradient checks over random shapes") {
  Rng shapes(99);
  auto dim = [&]() { return static_cast<std::size_t>(1 + shapes.below(4)); };
  Scalar worst = 0;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const std::size_t m = dim(), k = dim(), n = dim(), b = dim();
    const std::uint64_t s = 1000 + trial * 31;
    Tensor a = random_tensor({m, k}, s), bm = random_tensor({k, n}, s + 1);
    Tensor a3 = random_tensor({b, m, k}, s + 2), b3 = random_tensor({b, k, n}, s + 3);
    Tensor u = random_tensor({m, n}, s + 4), v = random_tensor({m, n}, s + 5);
    Tensor bias = random_tensor({n}, s + 6);
    Tensor g = random_tensor({n}, s + 7), beta = random_tensor({n}, s + 8);
    Tensor w = random_tensor({m, n}, s + 9);  // fixed projection to a scalar
    Tensor x3 = random_tensor({b, m, n}, s + 10, 2.0);
    Tensor w3 = random_tensor({b, m, n}, s + 11);
    auto dot = [](const Tensor& t, const Tensor& c) { return sum(mul(t, c)); };

    worst = std::max(worst, grad_check([&] { return dot(matmul(a, bm), w); }, {a, bm}));
    worst = std::max(worst, grad_check([&] { return sum(mul(matmul(a3, b3), random_tensor({b, m, n}, s))); }, {a3, b3}));
    worst = std::max(worst, grad_check([&] { return dot(transpose(transpose(u)), w); }, {u}));
    worst = std::max(worst, grad_check([&] { return dot(add(u, v), w); }, {u, v}));
    worst = std::max(worst, grad_check([&] { return dot(sub(u, v), w); }, {u, v}));
    worst = std::max(worst, grad_check([&] { return dot(mul(u, v), w); }, {u, v}));
    worst = std::max(worst, grad_check([&] { return dot(scale(u, -1.5), w); }, {u}));
    worst = std::max(worst, grad_check([&] { return dot(add_bias(u, bias), w); }, {u, bias}));
    worst = std::max(worst, grad_check([&] { return dot(gelu(u), w); }, {u}));
    worst = std::max(worst, grad_check([&] { return dot(sigmoid(u), w); }, {u}));
    for (std::size_t axis = 0; axis < 3; ++axis)
      worst = std::max(worst, grad_check([&] { return dot(softmax(x3, axis), w3); }, {x3}));
    worst = std::max(worst, grad_check([&] { return dot(layer_norm(u, g, beta), w); }, {u, g, beta}));
    worst = std::max(worst, grad_check([&] { return mean(mul(u, u)); }, {u}));
    worst = std::max(worst, grad_check([&] { return dot(mean_rows(u), bias); }, {u}));
    worst = std::max(worst, grad_check([&] { return dot(reshape(u, {n, m}), reshape(w, {n, m})); }, {u}));
    worst = std::max(worst, grad_check([&] { return dot(concat_rows({u, v}), concat_rows({w, w})); }, {u, v}));
    worst = std::max(worst, grad_check([&] { return dot(slice_rows(u, 0, 1), slice_rows(w, 0, 1)); }, {u}));
    worst = std::max(worst, grad_check([&] { return dot(concat_vectors({row(u, 0), bias}), concat_vectors({row(w, 0), bias})); }, {u, bias}));
    auto idx = std::make_shared<std::vector<std::size_t>>();
    for (std::size_t i = 0; i < 2 * m * n; ++i) idx->push_back((i * 7) % (m * n));
    worst = std::max(worst, grad_check([&] { return dot(gather(u, idx, {2 * m * n}), concat_vectors({reshape(w, {m * n}), reshape(w, {m * n})})); }, {u}));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("relu gradient away from the kink") {
  Tensor u({4}, {-2.0, -0.5, 0.7, 3.0});
  CHECK(grad_check([](const Tensor& x) { return sum(mul(relu(x), x)); }, u) < 1e-8);
}

TEST_CASE("forward determinism") {
  const Tensor x = random_tensor({8, 8}, 30);
  const Tensor w = random_tensor({8, 8}, 31);
  CHECK(identical(softmax(matmul(x, w), 1), softmax(matmul(x, w), 1)));
}

TEST_CASE("serialization round trip") {
  const Tensor t = random_tensor({2, 3, 4}, 40);
  std::stringstream ss;
  write_tensor(ss, t);
  CHECK(ss.str().size() == serialized_size(t.shape()));
  CHECK(ss.str().size() == 8 + 3 * 8 + 24 * 8);
  const Tensor back = read_tensor(ss);
  CHECK(identical(t, back));

  // Little-endian header: rank 1, dim 1, value 1.0.
  std::stringstream one;
  write_tensor(one, Tensor({1}, std::vector<Scalar>{1.0}));
  const std::string bytes = one.str();
  CHECK(bytes[0] == 1);
  CHECK(bytes[8] == 1);
  CHECK(static_cast<unsigned char>(bytes[23]) == 0x3f);
  CHECK(static_cast<unsigned char>(bytes[22]) == 0xf0);

  std::stringstream trunc(bytes.substr(0, 20));
  CHECK_THROWS(read_tensor(trunc));
}
