#include <doctest.h>

#include <random>

#include "sic/ops.hpp"
#include "sic/tensor.hpp"
#include "support/grad_check.hpp"

using namespace sic;
using sic::testing::away_from_zero;
using sic::testing::fd_check;
using sic::testing::random_tensor;

TEST_CASE("matmul basics") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor prod = matmul(eye, eye);
  CHECK(prod.values().isApprox(eye.values()));

  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor ones = Tensor::from({2, 1}, {1, 1});
  Tensor r = matmul(a, ones);
  CHECK(r.value_at(0) == doctest::Approx(3));
  CHECK(r.value_at(1) == doctest::Approx(7));

  Tensor zero = Tensor::zeros({2, 3});
  CHECK(matmul(a, Tensor::zeros({2, 3})).values().isZero());
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 2})), dimension_error);
}

TEST_CASE("matmul associativity on random conforming triples") {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 5}, rng);
    Tensor c = random_tensor({5, 2}, rng);
    Vec left = matmul(matmul(a, b), c).values();
    Vec right = matmul(a, matmul(b, c)).values();
    const double denom = std::max<double>(left.cwiseAbs().maxCoeff(), 1e-8);
    CHECK((left - right).cwiseAbs().maxCoeff() / denom < 1e-5);
  }
}

TEST_CASE("conv2d basics") {
  Tensor x = Tensor::from({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor k1 = Tensor::from({1, 1, 1, 1}, {2});
  Tensor scaled = conv2d(x, k1, 1, 0);
  CHECK(scaled.values().isApprox(Vec(2.0f * x.values())));

  Tensor ones_in = Tensor::full({1, 3, 3}, 1.0f);
  Tensor ones_k = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor window = conv2d(ones_in, ones_k, 1, 0);
  CHECK(window.numel() == 1);
  CHECK(window.scalar() == doctest::Approx(9));

  CHECK(conv2d(x, Tensor::zeros({2, 1, 3, 3}), 1, 0).values().isZero());
  CHECK_THROWS_AS(conv2d(x, Tensor::full({1, 1, 5, 5}, 1.0f), 1, 0), dimension_error);
}

TEST_CASE("conv2d output geometry with stride and padding") {
  std::mt19937 rng(3);
  Tensor x = random_tensor({2, 5, 5}, rng);
  Tensor k = random_tensor({3, 2, 3, 3}, rng);
  Tensor y = conv2d(x, k, 2, 1);
  CHECK(y.shape() == Shape{3, 3, 3});
}

TEST_CASE("relu basics") {
  Tensor x = Tensor::from({3}, {-1, 0, 2});
  Tensor y = relu(x);
  CHECK(y.values()[0] == 0);
  CHECK(y.values()[1] == 0);
  CHECK(y.values()[2] == 2);
  CHECK(relu(Tensor::from({2}, {-3, -0.5f})).values().isZero());
  CHECK(relu(y).values().isApprox(y.values()));
}

TEST_CASE("l2_norm basics") {
  CHECK(l2_norm(Tensor::from({2}, {3, 4})).scalar() == doctest::Approx(5));
  CHECK(l2_norm(Tensor::zeros({4})).scalar() == 0);
  CHECK(l2_norm(Tensor::from({2}, {1, 0})).scalar() == doctest::Approx(1));
}

TEST_CASE("backward on simple graphs") {
  SUBCASE("linear") {
    Tensor x = Tensor::from({1}, {2}).set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    Tensor y = scale(x, 3.0f);
    backward(y);
    CHECK(x.grad()[0] == doctest::Approx(3));
  }
  SUBCASE("square") {
    Tensor x = Tensor::from({1}, {2}).set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    Tensor y = mul(x, x);
    backward(y);
    CHECK(x.grad()[0] == doctest::Approx(4));
  }
  SUBCASE("squared norm gradient is 2x") {
    std::mt19937 rng(11);
    Tensor x = random_tensor({6}, rng);
    x.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    Tensor n = l2_norm(x);
    Tensor y = mul(n, n);
    backward(y);
    for (Eigen::Index i = 0; i < x.numel(); ++i) {
      CHECK(x.grad()[i] == doctest::Approx(2.0f * x.values()[i]).epsilon(1e-3));
    }
  }
  SUBCASE("squared norm matches finite differences") {
    std::mt19937 rng(12);
    auto fn = [](const std::vector<Tensor>& leaves) {
      Tensor n = l2_norm(leaves[0]);
      return mul(n, n);
    };
    auto result = fd_check(fn, {random_tensor({5}, rng)});
    CHECK(result.max_rel_err < 1e-3);
  }
}

TEST_CASE("backward contract errors") {
  Tensor x = Tensor::from({2}, {1, 2}).set_requires_grad(true);
  CHECK_THROWS_AS(backward(x), contract_error);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = add(x, x);
  CHECK_THROWS_AS(backward(y), contract_error);  // not scalar
}

TEST_CASE("finite-difference checks per op") {
  std::mt19937 rng(21);
  using sic::testing::fd_check_jacobian;
  SUBCASE("matmul") {
    auto fn = [](const std::vector<Tensor>& v) { return matmul(v[0], v[1]); };
    auto r = fd_check_jacobian(fn, {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
    CHECK(r.max_rel_err < 1e-3);
  }
  SUBCASE("conv2d") {
    auto fn = [](const std::vector<Tensor>& v) { return conv2d(v[0], v[1], 2, 1); };
    auto r = fd_check_jacobian(fn, {random_tensor({2, 5, 5}, rng), random_tensor({2, 2, 3, 3}, rng)});
    CHECK(r.max_rel_err < 1e-3);
  }
  SUBCASE("relu away from the kink") {
    auto fn = [](const std::vector<Tensor>& v) { return relu(v[0]); };
    auto r = fd_check_jacobian(fn, {away_from_zero(random_tensor({8}, rng))});
    CHECK(r.max_rel_err < 1e-3);
  }
  SUBCASE("l2_norm away from zero") {
    Tensor x = random_tensor({6}, rng);
    x.mutable_values()[0] = 1.5f;  // keep the norm comfortably positive
    auto fn = [](const std::vector<Tensor>& v) { return l2_norm(v[0]); };
    auto r = fd_check(fn, {x});
    CHECK(r.max_rel_err < 1e-3);
  }
  SUBCASE("patch_norms") {
    Tensor x = away_from_zero(random_tensor({2, 4, 4}, rng), 0.3f);
    auto fn = [](const std::vector<Tensor>& v) { return patch_norms(v[0], 3, 1, 1); };
    auto r = fd_check_jacobian(fn, {x});
    CHECK(r.max_rel_err < 1e-3);
  }
  SUBCASE("normalize_rows") {
    Tensor w = away_from_zero(random_tensor({3, 5}, rng), 0.2f);
    auto fn = [](const std::vector<Tensor>& v) { return normalize_rows(v[0]); };
    auto r = fd_check_jacobian(fn, {w});
    CHECK(r.max_rel_err < 1e-3);
  }
  SUBCASE("bcos_scale, B=2") {
    Tensor s = away_from_zero(random_tensor({4, 1}, rng), 0.1f);
    Tensor n = Tensor::from({1}, {2.7f});
    auto fn = [](const std::vector<Tensor>& v) { return bcos_scale(v[0], v[1], 2.0f); };
    auto r = fd_check_jacobian(fn, {s, n});
    CHECK(r.max_rel_err < 1e-3);
  }
  SUBCASE("global_avg_pool and reshape") {
    auto fn = [](const std::vector<Tensor>& v) {
      return reshape(global_avg_pool(v[0]), {1, 3});
    };
    auto r = fd_check_jacobian(fn, {random_tensor({3, 4, 4}, rng)});
    CHECK(r.max_rel_err < 1e-3);
  }
  SUBCASE("class_sums and select") {
    auto fn = [](const std::vector<Tensor>& v) {
      Tensor sums = class_sums(v[0], {2, 3});
      return mul(select(sums, 0), select(sums, 1));
    };
    auto r = fd_check(fn, {random_tensor({5}, rng)});
    CHECK(r.max_rel_err < 1e-3);
  }
  SUBCASE("concat_rows") {
    auto fn = [](const std::vector<Tensor>& v) { return concat_rows({v[0], v[1]}); };
    auto r = fd_check_jacobian(fn, {random_tensor({4}, rng), random_tensor({4}, rng)});
    CHECK(r.max_rel_err < 1e-3);
  }
  SUBCASE("bce_with_logits") {
    Tensor logits = random_tensor({4}, rng);
    Tensor targets = Tensor::from({4}, {1, 0, 1, 0});
    auto fn = [targets](const std::vector<Tensor>& v) { return bce_with_logits(v[0], targets); };
    auto r = fd_check(fn, {logits});
    CHECK(r.max_rel_err < 1e-3);
  }
}

TEST_CASE("seeded computation replays bit-identically") {
  auto run = []() {
    std::mt19937 rng(99);
    Tensor a = random_tensor({4, 4}, rng);
    Tensor b = random_tensor({4, 4}, rng);
    Tensor c = relu(matmul(a, b));
    return sum(mul(c, c)).scalar();
  };
  const Scalar first = run();
  const Scalar second = run();
  CHECK(first == second);
}

TEST_CASE("gradient accumulates across reuse") {
  Tensor x = Tensor::from({2}, {1, 2}).set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = sum(add(x, x));
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(2));
  CHECK(x.grad()[1] == doctest::Approx(2));
}

TEST_CASE("bcos_scale zero-norm and exponent-one behavior") {
  Tensor s = Tensor::from({2, 1}, {0.0f, 0.0f});
  Tensor n = Tensor::zeros({1});
  CHECK(bcos_scale(s, n, 2.0f).values().isZero());

  std::mt19937 rng(5);
  Tensor s2 = random_tensor({3, 1}, rng);
  Tensor n2 = Tensor::from({1}, {1.7f});
  CHECK(bcos_scale(s2, n2, 1.0f).values() == s2.values());
  CHECK_THROWS_AS(bcos_scale(s2, n2, 0.5f), config_error);
}

TEST_CASE("validation and dimension errors") {
  CHECK_THROWS_AS(bce_with_logits(Tensor::from({2}, {0, 0}), Tensor::from({2}, {0.5f, 1})),
                  validation_error);
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), dimension_error);
  CHECK_THROWS_AS(normalize_rows(Tensor::zeros({2, 3})), config_error);
}
