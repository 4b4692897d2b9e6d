#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "oracles/oracles.hpp"
#include "ssmtl/rng.hpp"
#include "ssmtl/tensor.hpp"

using namespace ssmtl;

namespace {

std::vector<double> vec(const Tensor& t) { return t.to_vector(); }

Tensor random_leaf(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-2.0, 2.0);
  return Tensor(shape, v, true);
}

// max over entries of |analytic - fd| / max(1, |analytic|, |fd|)
double grad_error(const std::function<Tensor()>& f, std::vector<Tensor> leaves) {
  for (auto& l : leaves) l.zero_grad();
  f().backward();
  double worst = 0.0;
  for (auto& l : leaves) {
    // A leaf the expression never touches has no gradient buffer.
    auto g = std::vector<double>(l.grad().begin(), l.grad().end());
    g.resize(l.numel(), 0.0);
    for (std::size_t i = 0; i < l.numel(); ++i) {
      const double fd = oracle::central_difference([&] { return f().item(); }, l, i, 1e-5);
      worst = std::max(worst, std::abs(g[i] - fd) / std::max({1.0, std::abs(g[i]), std::abs(fd)}));
    }
  }
  return worst;
}

}  // namespace

TEST(Tensor, ElementwiseBasics) {
  const Tensor a({2}, {1, 2}), b({2}, {3, 4});
  EXPECT_EQ(vec(a + b), (std::vector<double>{4, 6}));
  EXPECT_EQ(vec(a - b), (std::vector<double>{-2, -2}));
  EXPECT_EQ(vec(a * b), (std::vector<double>{3, 8}));
  EXPECT_EQ(vec(b / a), (std::vector<double>{3, 2}));
  EXPECT_EQ(vec(mul(a, ones_like(a))), vec(a));
}

TEST(Tensor, ProductRuleGradient) {
  Tensor a({2}, {1, 2}, true), b({2}, {3, 5}, true);
  sum(a * b).backward();
  EXPECT_EQ(std::vector<double>(a.grad().begin(), a.grad().end()), (std::vector<double>{3, 5}));
  EXPECT_EQ(std::vector<double>(b.grad().begin(), b.grad().end()), (std::vector<double>{1, 2}));
}

TEST(Tensor, Broadcasting) {
  const Tensor m({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor r({3}, {10, 20, 30});
  EXPECT_EQ(vec(m + r), (std::vector<double>{11, 22, 33, 14, 25, 36}));
  const Tensor col({2, 1}, {100, 200});
  EXPECT_EQ(vec(m + col), (std::vector<double>{101, 102, 103, 204, 205, 206}));
  EXPECT_EQ(vec(m * Tensor::scalar(2.0)), (std::vector<double>{2, 4, 6, 8, 10, 12}));
}

TEST(Tensor, BroadcastGradientsHaveLeafShapes) {
  Rng rng(1);
  Tensor m = random_leaf({3, 4}, rng), r = random_leaf({4}, rng), s = random_leaf({}, rng),
         c = random_leaf({3, 1}, rng);
  sum(square(m * r + s - c)).backward();
  EXPECT_EQ(r.grad().size(), 4u);
  EXPECT_EQ(s.grad().size(), 1u);
  EXPECT_EQ(c.grad().size(), 3u);
  EXPECT_LT(grad_error([&] { return sum(square(m * r + s - c)); }, {m, r, s, c}), 1e-6);
}

TEST(Tensor, ShapeErrorNamesBothShapes) {
  const Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({4});
  try {
    (void)add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4]"), std::string::npos) << msg;
  }
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(Tensor, Matmul) {
  const Tensor I({2, 2}, {1, 0, 0, 1}), M({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(vec(matmul(I, M)), vec(M));
  EXPECT_EQ(vec(matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}))), (std::vector<double>{11}));
}

// Tolerance 1e-6 with step 1e-5: central differences of a bilinear form are exact
// up to rounding.
TEST(Tensor, MatmulGradientMatchesFiniteDifferences) {
  Rng rng(2);
  Tensor a = random_leaf({3, 4}, rng), b = random_leaf({4, 5}, rng);
  EXPECT_LT(grad_error([&] { return sum(matmul(a, b)); }, {a, b}), 1e-6);
  Tensor x = random_leaf({6, 4}, rng), w = random_leaf({4, 3}, rng), bias = random_leaf({3}, rng);
  EXPECT_LT(grad_error([&] { return sum(square(linear(x, w, bias))); }, {x, w, bias}), 1e-6);
}

TEST(Tensor, UnaryOps) {
  EXPECT_EQ(vec(relu(Tensor({3}, {-1, 0, 2}))), (std::vector<double>{0, 0, 2}));
  Tensor x({1}, {2.0}, true);
  sum(log(x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.5);
  Tensor r({3}, {-1, 0, 2}, true);
  sum(relu(r)).backward();
  EXPECT_EQ(std::vector<double>(r.grad().begin(), r.grad().end()), (std::vector<double>{0, 0, 1}));
  EXPECT_EQ(vec(clamp(Tensor({3}, {-9, 0.5, 9}), -1, 1)), (std::vector<double>{-1, 0.5, 1}));
}

TEST(Tensor, MeanOfManyNormals) {
  Rng rng(3);
  const Tensor t({1000000}, rng.normals(1000000));
  EXPECT_LT(std::abs(mean(t).item()), 0.004);
}

TEST(Tensor, LogOfNonPositivePoisons) {
  Tensor x({2}, {1.0, -1.0}, true);
  const Tensor y = sum(log(x));
  EXPECT_TRUE(y.poisoned());
  EXPECT_TRUE(std::isnan(y.item()));
  EXPECT_THROW(y.backward(), PoisonedTapeError);
  EXPECT_TRUE(sqrt(Tensor({1}, {0.0})).poisoned());
  EXPECT_FALSE(sqrt(Tensor({1}, {4.0})).poisoned());
}

TEST(Tensor, BackwardRequiresScalar) {
  Tensor x({2}, {1, 2}, true);
  EXPECT_THROW((x * 2.0).backward(), ShapeError);
}

TEST(Tensor, BackwardOfSumIsOnes) {
  Tensor x({2, 2}, {1, 2, 3, 4}, true);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Tensor, BackwardAccumulates) {
  Tensor x({2}, {1, 2}, true);
  const Tensor y = sum(square(x));
  y.backward();
  y.backward();
  EXPECT_EQ(x.grad()[0], 4.0);
  EXPECT_EQ(x.grad()[1], 8.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Tensor, TapeIsTopological) {
  Tensor a({2}, {1, 2}, true), b({2}, {3, 4}, true);
  const Tensor c = a * b;
  const Tensor d = sum(c + a);
  const Tape tape = Tape::record(d);
  const auto& e = tape.entries();
  ASSERT_EQ(tape.size(), 5u);
  for (std::size_t i = 0; i < e.size(); ++i) {
    for (auto in : e[i].inputs) EXPECT_LT(in, i);
  }
  EXPECT_EQ(e.back().op, "sum");
}

TEST(Tensor, SharedSubexpressionVisitedOnce) {
  Tensor x({1}, {3.0}, true);
  const Tensor y = x * x;
  sum(y + y).backward();  // d/dx 2x^2 = 4x
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Tensor, SliceConcatGatherSegment) {
  const Tensor m({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(vec(slice_cols(m, 1, 3)), (std::vector<double>{2, 3, 5, 6}));
  EXPECT_EQ(vec(concat_cols({m, slice_cols(m, 0, 1)})),
            (std::vector<double>{1, 2, 3, 1, 4, 5, 6, 4}));
  const std::vector<std::size_t> idx{1, 1, 0};
  EXPECT_EQ(vec(gather_rows(m, idx)), (std::vector<double>{4, 5, 6, 4, 5, 6, 1, 2, 3}));
  const std::vector<std::size_t> seg{0, 2, 0};
  EXPECT_EQ(vec(segment_sum(Tensor({3}, {1, 2, 3}), seg, 3)), (std::vector<double>{4, 0, 2}));
  EXPECT_EQ(vec(sum_rows(m)), (std::vector<double>{6, 15}));
}

TEST(Tensor, StructuralOpGradients) {
  Rng rng(4);
  Tensor m = random_leaf({3, 4}, rng), v = random_leaf({3}, rng);
  const std::vector<std::size_t> idx{2, 0, 2, 1};
  const std::vector<std::size_t> seg{1, 0, 1, 1};
  auto f = [&] {
    const Tensor g = gather_rows(concat_cols({slice_cols(m, 1, 3), m}), idx);
    return sum(square(segment_sum(sum_rows(g), seg, 2))) + sum(v * sum_rows(m));
  };
  EXPECT_LT(grad_error(f, {m, v}), 1e-6);
}

TEST(Tensor, DetachCutsGraph) {
  Tensor x({1}, {2.0}, true);
  const Tensor d = (x * 3.0).detach();
  EXPECT_TRUE(d.is_leaf());
  EXPECT_FALSE(d.requires_grad());
  EXPECT_EQ(d.item(), 6.0);
}

TEST(Tensor, Deterministic) {
  Rng r1(5), r2(5);
  Tensor a = random_leaf({4, 4}, r1), b = random_leaf({4, 4}, r2);
  const Tensor ya = sum(exp(matmul(a, a) * 0.1)), yb = sum(exp(matmul(b, b) * 0.1));
  ya.backward();
  yb.backward();
  EXPECT_EQ(ya.item(), yb.item());
  EXPECT_EQ(std::vector<double>(a.grad().begin(), a.grad().end()),
            std::vector<double>(b.grad().begin(), b.grad().end()));
}

// Random compositions of the supported ops on inputs in [-2, 2]. Inputs to log
// and sqrt are made positive with square() + 0.5; relu and clamp kinks are
// avoided by not landing within the finite-difference step of them.
TEST(Tensor, RandomCompositionsMatchFiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor a = random_leaf({3, 3}, rng), b = random_leaf({3, 3}, rng), r = random_leaf({3}, rng);
    std::vector<int> ops;
    for (int k = 0; k < 6; ++k) ops.push_back(static_cast<int>(rng.next_u64() % 9));
    auto f = [&] {
      Tensor t = a;
      for (int op : ops) {
        switch (op) {
          case 0: t = t + b; break;
          case 1: t = t * r; break;
          case 2: t = matmul(t, b) * 0.5; break;
          case 3: t = log(square(t) + 0.5); break;
          case 4: t = sqrt(square(t) + 0.5); break;
          case 5: t = t / (square(b) + 1.0); break;
          case 6: t = exp(t * 0.3); break;
          case 7: t = relu(t) + t * 0.1; break;
          case 8: t = t - mean(t); break;
        }
      }
      return sum(square(t)) * 0.1;
    };
    EXPECT_LT(grad_error(f, {a, b, r}), 1e-4) << "trial " << trial;
  }
}
