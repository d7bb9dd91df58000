#include <cmath>
#include <vector>

#include "doctest.h"
#include "sciedkit/grad_check.hpp"
#include "sciedkit/ops.hpp"
#include "sciedkit/rng.hpp"
#include "sciedkit/tensor.hpp"

using namespace sciedkit;

namespace {

// Independent oracle: naive triple loop, double accumulation.
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  size_t m, size_t k, size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (size_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = acc;
    }
  }
  return c;
}

template <typename T>
Tensor<T> random_tensor(std::vector<size_t> shape, Rng& rng, bool requires_grad = true,
                        double scl = 1.0) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape), requires_grad);
  for (auto& v : t.values()) v = T(rng.normal() * scl);
  return t;
}

}  // namespace

TEST_CASE("matmul identity and oracle") {
  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto b = Tensor<double>::from({2, 2}, {5, 6, 7, 8});
  auto r = matmul(eye, b);
  CHECK(r.values() == std::vector<double>{5, 6, 7, 8});

  auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto c = matmul(a, b);
  auto expect = matmul_oracle(a.values(), b.values(), 2, 2, 2);
  CHECK(c.values() == std::vector<double>{19, 22, 43, 50});
  CHECK(c.values() == expect);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({2, 3});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), InputError);
}

TEST_CASE("matmul transpose flags against oracle") {
  Rng rng(7);
  auto a = random_tensor<double>({4, 3}, rng);
  auto b = random_tensor<double>({5, 3}, rng);
  // a * b^T
  auto r = matmul(a, b, nullptr, false, true);
  std::vector<double> bt(3 * 5);
  for (size_t i = 0; i < 5; ++i)
    for (size_t j = 0; j < 3; ++j) bt[j * 5 + i] = b.values()[i * 3 + j];
  auto expect = matmul_oracle(a.values(), bt, 4, 3, 5);
  for (size_t i = 0; i < expect.size(); ++i) CHECK(r.values()[i] == doctest::Approx(expect[i]));
}

TEST_CASE("matmul associativity on random small matrices") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    auto a = random_tensor<float>({3, 4}, rng, false);
    auto b = random_tensor<float>({4, 5}, rng, false);
    auto c = random_tensor<float>({5, 2}, rng, false);
    auto left = matmul(matmul(a, b), c);
    auto right = matmul(a, matmul(b, c));
    for (size_t i = 0; i < left.size(); ++i) {
      CHECK(std::fabs(left.values()[i] - right.values()[i]) < 1e-4);
    }
  }
}

TEST_CASE("softmax trivial cases") {
  auto z = softmax(Tensor<double>::from({3}, {0, 0, 0}), 0);
  for (double v : z.values()) CHECK(v == doctest::Approx(1.0 / 3.0));

  auto one = softmax(Tensor<double>::from({1}, {42.0}), 0);
  CHECK(one.values()[0] == doctest::Approx(1.0));
}

TEST_CASE("softmax matches direct 64-bit formula") {
  auto s = softmax(Tensor<double>::from({3}, {1, 2, 3}), 0);
  double denom = std::exp(1.0 - 3.0) + std::exp(2.0 - 3.0) + std::exp(0.0);
  for (int i = 0; i < 3; ++i) {
    CHECK(s.values()[i] == doctest::Approx(std::exp(double(i + 1) - 3.0) / denom).epsilon(1e-12));
  }
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    auto x = Tensor<float>::zeros({4, 6});
    for (auto& v : x.values()) v = float(rng.next_double() * 100.0 - 50.0);
    auto p = softmax(x, 1);
    for (size_t r = 0; r < 4; ++r) {
      float sum = 0;
      for (size_t j = 0; j < 6; ++j) sum += p.values()[r * 6 + j];
      CHECK(std::fabs(sum - 1.0f) < 1e-6f);
    }
    const float c = float(rng.next_double() * 60.0 - 30.0);
    auto xs = Tensor<float>::zeros({4, 6});
    for (size_t i = 0; i < x.size(); ++i) xs.values()[i] = x.values()[i] + c;
    auto ps = softmax(xs, 1);
    for (size_t i = 0; i < p.size(); ++i) {
      CHECK(std::fabs(p.values()[i] - ps.values()[i]) < 1e-6f);
    }
  }
}

TEST_CASE("softmax rejects non-finite input") {
  auto x = Tensor<float>::from({2}, {1.0f, std::numeric_limits<float>::infinity()});
  CHECK_THROWS_AS(softmax(x, 0), InputError);
}

TEST_CASE("softmax over non-trailing axis") {
  auto x = Tensor<double>::from({2, 2}, {1, 5, 3, 2});
  auto p = softmax(x, 0);
  // column 0: softmax(1, 3); column 1: softmax(5, 2)
  CHECK(p.values()[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + std::exp(3.0))));
  CHECK(p.values()[1] == doctest::Approx(std::exp(5.0) / (std::exp(5.0) + std::exp(2.0))));
  CHECK(p.values()[0] + p.values()[2] == doctest::Approx(1.0));
}

TEST_CASE("layer_norm oracle cases") {
  auto gain = Tensor<double>::from({3}, {1, 1, 1});
  auto bias = Tensor<double>::from({3}, {0, 0, 0});

  auto constant = layer_norm(Tensor<double>::from({3}, {4, 4, 4}), gain, bias, 1e-12);
  for (double v : constant.values()) CHECK(v == doctest::Approx(0.0));

  auto x = Tensor<double>::from({3}, {1, 2, 3});
  auto y = layer_norm(x, gain, bias, 1e-12);
  const double var = 2.0 / 3.0;
  for (int i = 0; i < 3; ++i) {
    CHECK(y.values()[i] == doctest::Approx((double(i + 1) - 2.0) / std::sqrt(var + 1e-12)));
  }

  auto zero_gain = layer_norm(x, Tensor<double>::from({3}, {0, 0, 0}),
                              Tensor<double>::from({3}, {7, 8, 9}), 1e-12);
  CHECK(zero_gain.values() == std::vector<double>{7, 8, 9});
}

TEST_CASE("layer_norm normalizes mean and variance") {
  Rng rng(5);
  auto x = random_tensor<float>({8, 16}, rng, false, 3.0);
  auto gain = Tensor<float>::full({16}, 1.0f);
  auto bias = Tensor<float>::zeros({16});
  auto y = layer_norm(x, gain, bias, 1e-12f);
  for (size_t r = 0; r < 8; ++r) {
    double mean = 0, var = 0;
    for (size_t j = 0; j < 16; ++j) mean += y.values()[r * 16 + j];
    mean /= 16;
    for (size_t j = 0; j < 16; ++j) {
      const double c = y.values()[r * 16 + j] - mean;
      var += c * c;
    }
    var /= 16;
    CHECK(std::fabs(mean) < 1e-6);
    CHECK(std::fabs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("gelu oracle values") {
  auto z = gelu(Tensor<double>::from({1}, {0.0}));
  CHECK(z.values()[0] == 0.0);

  auto big = gelu(Tensor<double>::from({1}, {25.0}));
  CHECK(big.values()[0] == doctest::Approx(25.0).epsilon(1e-9));

  // direct evaluation of the tanh form at x = 1
  const double u = kGeluC0 * (1.0 + kGeluC1);
  const double expect = 0.5 * (1.0 + std::tanh(u));
  auto one = gelu(Tensor<double>::from({1}, {1.0}));
  CHECK(one.values()[0] == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("cross_entropy uniform, confident and ignored rows") {
  auto uniform = Tensor<double>::zeros({2, 5});
  auto loss = cross_entropy(uniform, std::vector<int>{0, 3});
  CHECK(loss.item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));

  auto confident = Tensor<double>::from({1, 2}, {10.0, -10.0});
  CHECK(cross_entropy(confident, std::vector<int>{0}).item() < 1e-6);

  auto two = Tensor<double>::from({2, 3}, {1, 2, 3, 9, 9, 9});
  auto full = cross_entropy(two, std::vector<int>{1, -1});
  auto solo = cross_entropy(Tensor<double>::from({1, 3}, {1, 2, 3}), std::vector<int>{1});
  CHECK(full.item() == doctest::Approx(solo.item()).epsilon(1e-12));

  CHECK_THROWS_AS(cross_entropy(two, std::vector<int>{-1, -1}), InputError);
  CHECK_THROWS_AS(cross_entropy(two, std::vector<int>{3, 0}), InputError);
}

TEST_CASE("backward: analytic derivative of sum of squares") {
  auto x = Tensor<double>::from({1}, {3.0}, true);
  Tape<double> tape;
  auto loss = sum_all(mul(x, x, &tape), &tape);
  backward(tape, loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward: constant loss leaves gradients zero") {
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  Tape<double> tape;
  auto loss = Tensor<double>::scalar(5.0);
  loss.set_requires_grad(true);
  backward(tape, loss);
  CHECK(x.grad() == std::vector<double>{0, 0});
}

TEST_CASE("backward: second call on the same tape errors") {
  auto x = Tensor<double>::from({1}, {2.0}, true);
  Tape<double> tape;
  auto loss = sum_all(mul(x, x, &tape), &tape);
  backward(tape, loss);
  CHECK_THROWS_AS(backward(tape, loss), InputError);
}

TEST_CASE("backward: non-scalar loss rejected") {
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  Tape<double> tape;
  auto y = mul(x, x, &tape);
  CHECK_THROWS_AS(backward(tape, y), InputError);
}

TEST_CASE("finite_difference_check: linear function is exact") {
  Rng rng(17);
  auto x = random_tensor<double>({3, 3}, rng);
  auto err = finite_difference_check(
      [&](Tape<double>* tape) { return sum_all(x, tape); }, x, 1e-3);
  CHECK(err < 1e-9);
}

TEST_CASE("finite_difference_check: softmax cross entropy self-consistency") {
  Rng rng(23);
  auto logits = random_tensor<double>({3, 4}, rng);
  std::vector<int> targets{1, 3, 0};
  auto err = finite_difference_check(
      [&](Tape<double>* tape) { return cross_entropy(logits, targets, -1, tape); }, logits,
      1e-3);
  CHECK(err < 1e-6);
}

TEST_CASE("finite_difference_check: deliberately wrong backward is caught") {
  Rng rng(29);
  auto x = random_tensor<double>({4}, rng);
  // forward sin(x), but backward pretends the derivative is 1
  auto wrong_sin = [](const Tensor<double>& in, Tape<double>* tape) {
    Tensor<double> out = Tensor<double>::zeros(in.shape());
    for (size_t i = 0; i < in.size(); ++i) out.values()[i] = std::sin(in.values()[i]);
    if (tape && in.requires_grad()) {
      out.set_requires_grad(true);
      auto xd = in.ptr();
      auto od = out.ptr();
      tape->record([xd, od] {
        if (od->grad.empty()) return;
        if (xd->grad.empty()) xd->grad.assign(xd->values.size(), 0.0);
        for (size_t i = 0; i < xd->grad.size(); ++i) xd->grad[i] += od->grad[i];
      });
    }
    return out;
  };
  auto err = finite_difference_check(
      [&](Tape<double>* tape) { return sum_all(wrong_sin(x, tape), tape); }, x, 1e-3);
  CHECK(err > 1e-2);
}

TEST_CASE("gradient checks for every differentiable op on random shapes") {
  Rng rng(31);
  const double h = 1e-3;
  const double tol = 1e-6;

  SUBCASE("matmul all transpose combinations") {
    for (int ta = 0; ta < 2; ++ta) {
      for (int tb = 0; tb < 2; ++tb) {
        auto a = random_tensor<double>(ta ? std::vector<size_t>{5, 4} : std::vector<size_t>{4, 5},
                                       rng);
        auto b = random_tensor<double>(tb ? std::vector<size_t>{6, 5} : std::vector<size_t>{5, 6},
                                       rng);
        auto rep = finite_difference_check_all<double>(
            [&](Tape<double>* tape) {
              return sum_all(mul(matmul(a, b, tape, ta, tb), matmul(a, b, tape, ta, tb), tape),
                             tape);
            },
            {a, b}, h);
        CHECK(rep.max_rel_err < tol);
      }
    }
  }

  SUBCASE("bmm") {
    auto a = random_tensor<double>({3, 4, 2}, rng);
    auto b = random_tensor<double>({3, 2, 5}, rng);
    auto rep = finite_difference_check_all<double>(
        [&](Tape<double>* tape) { return sum_all(mul(bmm(a, b, tape), bmm(a, b, tape), tape), tape); },
        {a, b}, h);
    CHECK(rep.max_rel_err < tol);

    auto bt = random_tensor<double>({3, 5, 2}, rng);
    auto rep2 = finite_difference_check_all<double>(
        [&](Tape<double>* tape) {
          return sum_all(mul(bmm(a, bt, tape, true), bmm(a, bt, tape, true), tape), tape);
        },
        {a, bt}, h);
    CHECK(rep2.max_rel_err < tol);
  }

  SUBCASE("add, add_bias, mul, scale") {
    auto x = random_tensor<double>({4, 3}, rng);
    auto y = random_tensor<double>({4, 3}, rng);
    auto b = random_tensor<double>({3}, rng);
    auto rep = finite_difference_check_all<double>(
        [&](Tape<double>* tape) {
          auto s = add(mul(x, y, tape), x, tape);
          s = add_bias(s, b, tape);
          return sum_all(mul(s, s, tape), tape);
        },
        {x, y, b}, h);
    CHECK(rep.max_rel_err < tol);

    auto rep2 = finite_difference_check_all<double>(
        [&](Tape<double>* tape) { return sum_all(mul(scale(x, 2.5, tape), x, tape), tape); },
        {x}, h);
    CHECK(rep2.max_rel_err < tol);
  }

  SUBCASE("softmax over both axes") {
    for (size_t axis = 0; axis < 2; ++axis) {
      auto x = random_tensor<double>({5, 7}, rng);
      auto w = random_tensor<double>({5, 7}, rng, false);
      auto rep = finite_difference_check_all<double>(
          [&](Tape<double>* tape) { return sum_all(mul(softmax(x, axis, tape), w, tape), tape); },
          {x}, h);
      CHECK(rep.max_rel_err < tol);
    }
  }

  SUBCASE("layer_norm") {
    auto x = random_tensor<double>({6, 8}, rng);
    auto g = random_tensor<double>({8}, rng);
    auto b = random_tensor<double>({8}, rng);
    auto w = random_tensor<double>({6, 8}, rng, false);
    auto rep = finite_difference_check_all<double>(
        [&](Tape<double>* tape) {
          return sum_all(mul(layer_norm(x, g, b, 1e-12, tape), w, tape), tape);
        },
        {x, g, b}, h);
    CHECK(rep.max_rel_err < tol);
  }

  SUBCASE("gelu") {
    auto x = random_tensor<double>({7, 5}, rng);
    auto w = random_tensor<double>({7, 5}, rng, false);
    auto rep = finite_difference_check_all<double>(
        [&](Tape<double>* tape) { return sum_all(mul(gelu(x, tape), w, tape), tape); }, {x}, h);
    CHECK(rep.max_rel_err < tol);
  }

  SUBCASE("gather_rows / embedding") {
    auto table = random_tensor<double>({6, 4}, rng);
    std::vector<int> ids{0, 3, 3, 5, 1};
    auto w = random_tensor<double>({5, 4}, rng, false);
    auto rep = finite_difference_check_all<double>(
        [&](Tape<double>* tape) {
          return sum_all(mul(gather_rows(table, ids, tape), w, tape), tape);
        },
        {table}, h);
    CHECK(rep.max_rel_err < tol);
  }

  SUBCASE("reshape, split_heads, merge_heads") {
    auto x = random_tensor<double>({6, 8}, rng);  // B=2, L=3, D=8, H=2
    auto w = random_tensor<double>({6, 8}, rng, false);
    auto rep = finite_difference_check_all<double>(
        [&](Tape<double>* tape) {
          auto heads = split_heads(x, 2, 3, 2, tape);
          auto back = merge_heads(heads, 2, 2, 3, tape);
          auto flat = reshape(back, {2, 3, 8}, tape);
          return sum_all(mul(reshape(flat, {6, 8}, tape), w, tape), tape);
        },
        {x}, h);
    CHECK(rep.max_rel_err < tol);
  }

  SUBCASE("attention composite") {
    auto q = random_tensor<double>({2, 3, 4}, rng);
    auto k = random_tensor<double>({2, 3, 4}, rng);
    auto v = random_tensor<double>({2, 3, 4}, rng);
    std::vector<int> mask{1, 1, 0};
    auto w = random_tensor<double>({2, 3, 4}, rng, false);
    auto rep = finite_difference_check_all<double>(
        [&](Tape<double>* tape) {
          return sum_all(mul(attention(q, k, v, mask, tape), w, tape), tape);
        },
        {q, k, v}, h);
    CHECK(rep.max_rel_err < tol);
  }

  SUBCASE("cross_entropy with ignored rows") {
    auto logits = random_tensor<double>({4, 3}, rng);
    std::vector<int> targets{2, -1, 0, 1};
    auto rep = finite_difference_check_all<double>(
        [&](Tape<double>* tape) { return cross_entropy(logits, targets, -1, tape); }, {logits},
        h);
    CHECK(rep.max_rel_err < tol);
  }

  SUBCASE("dropout with a frozen mask") {
    auto x = random_tensor<double>({5, 5}, rng);
    auto rep = finite_difference_check_all<double>(
        [&](Tape<double>* tape) {
          Rng local(99);  // same mask on every call
          return sum_all(mul(dropout(x, 0.4, local, tape), x, tape), tape);
        },
        {x}, h);
    CHECK(rep.max_rel_err < tol);
  }
}

TEST_CASE("attention trivial cases") {
  // L = 1: softmax over a single key is 1, output equals the V row
  auto q = Tensor<double>::from({1, 1, 2}, {0.3, -0.7});
  auto k = Tensor<double>::from({1, 1, 2}, {1.5, 0.2});
  auto v = Tensor<double>::from({1, 1, 2}, {4.0, -2.0});
  auto out = attention(q, k, v, std::vector<int>{1});
  CHECK(out.values()[0] == doctest::Approx(4.0));
  CHECK(out.values()[1] == doctest::Approx(-2.0));

  // all scores zero -> uniform weights -> column mean of V
  auto q0 = Tensor<double>::zeros({1, 3, 2});
  auto k0 = Tensor<double>::zeros({1, 3, 2});
  auto v3 = Tensor<double>::from({1, 3, 2}, {1, 2, 3, 4, 5, 6});
  auto mean = attention(q0, k0, v3, std::vector<int>{1, 1, 1});
  for (int row = 0; row < 3; ++row) {
    CHECK(mean.values()[row * 2] == doctest::Approx(3.0));
    CHECK(mean.values()[row * 2 + 1] == doctest::Approx(4.0));
  }
}

TEST_CASE("attention matches direct 64-bit formula") {
  Rng rng(41);
  auto q = Tensor<double>::zeros({1, 3, 2});
  auto k = Tensor<double>::zeros({1, 3, 2});
  auto v = Tensor<double>::zeros({1, 3, 2});
  for (auto* t : {&q, &k, &v}) {
    for (auto& x : t->values()) x = rng.normal();
  }
  auto out = attention(q, k, v, std::vector<int>{1, 1, 1});

  // direct evaluation
  const double inv = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < 3; ++i) {
    double scores[3];
    for (int j = 0; j < 3; ++j) {
      scores[j] = inv * (q.values()[i * 2] * k.values()[j * 2] +
                         q.values()[i * 2 + 1] * k.values()[j * 2 + 1]);
    }
    const double mx = std::max({scores[0], scores[1], scores[2]});
    double weights[3], sum = 0;
    for (int j = 0; j < 3; ++j) {
      weights[j] = std::exp(scores[j] - mx);
      sum += weights[j];
    }
    for (int c = 0; c < 2; ++c) {
      double acc = 0;
      for (int j = 0; j < 3; ++j) acc += weights[j] / sum * v.values()[j * 2 + c];
      CHECK(out.values()[i * 2 + c] == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor<float>::from({2, 2}, {1, 2, 3}), InputError);
  auto t = Tensor<float>::zeros({2, 3});
  CHECK(t.size() == 6);
  CHECK_THROWS_AS(t.item(), InputError);
}
