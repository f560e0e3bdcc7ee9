#include <gtest/gtest.h>

#include <cmath>

#include "rdg/gradcheck.hpp"
#include "rdg/ops.hpp"
#include "test_util.hpp"

using namespace rdg;
using rdg::testing::check_gradient;
using rdg::testing::random_tensor;

TEST(Matmul, IdentityCase) {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor out = matmul(eye, a);
  EXPECT_EQ(out.values(), a.values());
}

TEST(Matmul, HandArithmetic) {
  Tensor a = Tensor::from({1, 2}, {1, 2});
  Tensor b = Tensor::from({2, 1}, {3, 4});
  Tensor out = matmul(a, b);
  EXPECT_DOUBLE_EQ(out.value(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL() << "expected dimension error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
}

TEST(Matmul, GradOfSumWrtAIsOnesTimesBT) {
  Rng rng(11);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 5}, rng);
  backward(sum(matmul(a, b)));
  // d sum(A.B) / dA = ones . B^T, i.e. row sums of B per column of A
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      double expect = 0.0;
      for (std::size_t j = 0; j < 5; ++j) expect += b.at2(k, j);
      EXPECT_NEAR(a.grad()[i * 4 + k], expect, 1e-12);
    }
  }
}

TEST(Softmax, SymmetricInput) {
  Tensor out = softmax(Tensor::from({2}, {0, 0}), 0);
  EXPECT_DOUBLE_EQ(out.at(0), 0.5);
  EXPECT_DOUBLE_EQ(out.at(1), 0.5);
}

TEST(Softmax, StabilityForcingCase) {
  Tensor out = softmax(Tensor::from({2}, {1000, 0}), 0);
  EXPECT_DOUBLE_EQ(out.at(0), 1.0);
  EXPECT_DOUBLE_EQ(out.at(1), 0.0);
}

TEST(Softmax, SlicesSumToOneProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({5, 7}, rng, -50.0, 50.0, false);
    for (std::size_t axis : {0u, 1u}) {
      Tensor y = softmax(x, axis);
      const std::size_t slices = axis == 1 ? 5 : 7;
      const std::size_t n = axis == 1 ? 7 : 5;
      for (std::size_t s = 0; s < slices; ++s) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          total += axis == 1 ? y.at2(s, i) : y.at2(i, s);
        EXPECT_NEAR(total, 1.0, 1e-12);
      }
    }
  }
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  Tensor x = random_tensor({4, 6}, rng, -2.0, 2.0);
  const double err = check_gradient([&] { return softmax(x, 1); }, {{"x", x}});
  EXPECT_LT(err, 1e-6);
}

TEST(Gelu, KnownValues) {
  EXPECT_DOUBLE_EQ(gelu_value(0.0), 0.0);
  // 2 * Phi(2) via the erf oracle
  const double expect = 2.0 * 0.5 * (1.0 + std::erf(2.0 / std::sqrt(2.0)));
  EXPECT_NEAR(gelu_value(2.0), expect, 1e-15);
  EXPECT_NEAR(gelu_value(2.0), 1.9545, 1e-4);
  EXPECT_LT(std::abs(gelu_value(-10.0)), 1e-8);
}

TEST(Gelu, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  Tensor x = random_tensor({17}, rng, -3.0, 3.0);
  const double err = check_gradient([&] { return gelu(x); }, {{"x", x}});
  EXPECT_LT(err, 1e-6);
}

TEST(Clip01, Cases) {
  Tensor out = clip01(Tensor::from({3}, {1.7, -0.3, 0.42}));
  EXPECT_DOUBLE_EQ(out.at(0), 1.0);
  EXPECT_DOUBLE_EQ(out.at(1), 0.0);
  EXPECT_DOUBLE_EQ(out.at(2), 0.42);
}

TEST(Clip01, InteriorGradientIsOneOutsideZero) {
  Tensor x = Tensor::from({4}, {0.42, 1.7, -0.3, 1.0}, true);
  backward(sum(clip01(x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 0.0);
  EXPECT_DOUBLE_EQ(x.grad()[3], 0.0);  // boundary treated as outside
}

TEST(Clip01, RangeAndIdempotence) {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor x = random_tensor({32}, rng, -3.0, 3.0, false);
    Tensor once = clip01(x);
    Tensor twice = clip01(once);
    for (std::size_t i = 0; i < once.size(); ++i) {
      EXPECT_GE(once.at(i), 0.0);
      EXPECT_LE(once.at(i), 1.0);
      EXPECT_DOUBLE_EQ(once.at(i), twice.at(i));
    }
  }
}

TEST(Conv1dSame, IdentityKernel) {
  Tensor out = conv1d_same(Tensor::from({3}, {1, 1, 1}),
                           Tensor::from({3}, {0, 1, 0}), Tensor::scalar(0));
  EXPECT_EQ(out.values(), (std::vector<double>{1, 1, 1}));
}

TEST(Conv1dSame, ZeroPaddingHandArithmetic) {
  Tensor out = conv1d_same(Tensor::from({3}, {1, 0, 0}),
                           Tensor::from({3}, {1, 1, 1}), Tensor::scalar(0));
  EXPECT_EQ(out.values(), (std::vector<double>{1, 1, 0}));
}

TEST(Conv1dSame, EvenKernelRejected) {
  EXPECT_THROW(conv1d_same(Tensor::zeros({4}), Tensor::zeros({2}),
                           Tensor::scalar(0)),
               std::invalid_argument);
}

TEST(Conv1dSame, PreservesLengthProperty) {
  Rng rng(17);
  for (std::size_t l : {1u, 2u, 3u, 5u, 17u, 64u, 257u, 512u}) {
    for (std::size_t k : {1u, 3u, 5u, 7u}) {
      Tensor x = random_tensor({l}, rng, -1.0, 1.0, false);
      Tensor kern = random_tensor({k}, rng, -1.0, 1.0, false);
      Tensor out = conv1d_same(x, kern, Tensor::scalar(0.3));
      ASSERT_EQ(out.size(), l);
    }
  }
}

TEST(Conv1dSame, GradientMatchesFiniteDifferences) {
  Rng rng(23);
  Tensor x = random_tensor({9}, rng);
  Tensor k = random_tensor({5}, rng);
  Tensor b = random_tensor({1}, rng);
  const double err = check_gradient([&] { return conv1d_same(x, k, b); },
                                    {{"x", x}, {"kernel", k}, {"bias", b}});
  EXPECT_LT(err, 1e-6);
}

TEST(LayerNorm, ConstantRowGivesBias) {
  Tensor x = Tensor::filled({2, 4}, 3.7);
  Tensor gain = Tensor::filled({4}, 1.0);
  Tensor bias = Tensor::from({4}, {0.1, 0.2, 0.3, 0.4});
  Tensor out = layer_norm(x, gain, bias, 1e-12);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_NEAR(out.at2(i, j), bias.at(j), 1e-9);
}

TEST(LayerNorm, RowMeanEqualsBiasMean) {
  Rng rng(31);
  Tensor x = random_tensor({3, 8}, rng, -2.0, 2.0, false);
  Tensor gain = Tensor::filled({8}, 1.0);
  Tensor bias = random_tensor({8}, rng, -1.0, 1.0, false);
  double bias_mean = 0.0;
  for (double v : bias.values()) bias_mean += v / 8.0;
  Tensor out = layer_norm(x, gain, bias, 1e-12);
  for (std::size_t i = 0; i < 3; ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < 8; ++j) m += out.at2(i, j) / 8.0;
    EXPECT_NEAR(m, bias_mean, 1e-10);
  }
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  Rng rng(37);
  Tensor x = random_tensor({4, 6}, rng);
  Tensor gain = random_tensor({6}, rng, 0.5, 1.5);
  Tensor bias = random_tensor({6}, rng, -0.5, 0.5);
  const double err =
      check_gradient([&] { return layer_norm(x, gain, bias, 1e-6); },
                     {{"x", x}, {"gain", gain}, {"bias", bias}});
  EXPECT_LT(err, 1e-6);
}

TEST(CosineSimilarity, KnownValues) {
  EXPECT_DOUBLE_EQ(
      cosine_similarity(Tensor::from({2}, {1, 1}), Tensor::from({2}, {1, 1}))
          .value(),
      1.0);
  EXPECT_DOUBLE_EQ(
      cosine_similarity(Tensor::from({2}, {1, 0}), Tensor::from({2}, {0, 1}))
          .value(),
      0.0);
  EXPECT_NEAR(cosine_similarity(Tensor::from({3}, {1, 1, 0}),
                                Tensor::from({3}, {1, 0, 0}))
                  .value(),
              1.0 / std::sqrt(2.0), 1e-15);
}

TEST(CosineSimilarity, ZeroVectorRejected) {
  EXPECT_THROW(
      cosine_similarity(Tensor::from({2}, {0, 0}), Tensor::from({2}, {1, 1})),
      std::invalid_argument);
}

TEST(CosineSimilarity, GradientMatchesFiniteDifferences) {
  Rng rng(41);
  Tensor a = random_tensor({6}, rng, 0.2, 1.0);
  Tensor b = random_tensor({6}, rng, 0.2, 1.0);
  const double err = check_gradient([&] { return cosine_similarity(a, b); },
                                    {{"a", a}, {"b", b}});
  EXPECT_LT(err, 1e-6);
}

TEST(Backward, LossIndependentOfParamGivesZeroGrad) {
  Tensor p = Tensor::from({3}, {1, 2, 3}, true);
  Tensor q = Tensor::from({3}, {4, 5, 6}, true);
  backward(sum(q));
  EXPECT_FALSE(p.has_grad());
  for (double g : q.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, SumGradIsOnes) {
  Tensor p = Tensor::from({4}, {1, 2, 3, 4}, true);
  backward(sum(p));
  for (double g : p.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, NonScalarLossRejected) {
  Tensor p = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(backward(add(p, p)), std::logic_error);
}

TEST(Backward, GradientAccumulatesAcrossConsumers) {
  // A value consumed twice receives the sum of both pathway gradients.
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  Tensor twice = add(x, x);
  backward(sum(twice));
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 2.0);

  Tensor y = Tensor::from({2}, {0.3, 0.7}, true);
  backward(sum(add(mul(y, y), scale(y, 3.0))));
  EXPECT_NEAR(y.grad()[0], 2 * 0.3 + 3, 1e-12);
  EXPECT_NEAR(y.grad()[1], 2 * 0.7 + 3, 1e-12);
}

TEST(Backward, AllRecordedOpsVisitedOnce) {
  // Diamond graph: x feeds two paths that rejoin; the shared node's
  // closure must run once with the full fan-in gradient.
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor m = scale(x, 2.0);
  Tensor loss = sum(add(m, m));
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(FiniteDiff, QuadraticIsExact) {
  Tensor p = Tensor::scalar(3.0, true);
  backward(mul(p, p));
  auto f = [&] {
    NoGradGuard g;
    return p.value() * p.value();
  };
  const auto report = finite_diff_check(f, {{"p", p}});
  EXPECT_LT(report.max_rel_err, 1e-8);
}

TEST(FiniteDiff, ReportsWorstGroup) {
  Tensor p = Tensor::scalar(2.0, true);
  Tensor q = Tensor::scalar(5.0, true);
  backward(add(mul(p, p), mul(q, q)));
  q.grad()[0] += 1.0;  // corrupt one group
  auto f = [&] {
    NoGradGuard g;
    return p.value() * p.value() + q.value() * q.value();
  };
  const auto report = finite_diff_check(f, {{"p", p}, {"q", q}});
  EXPECT_EQ(report.worst_group, "q");
  EXPECT_GT(report.max_rel_err, 0.05);
  EXPECT_LT(report.per_group.at("p"), 1e-8);
}

TEST(Ops, ElementwiseAndBroadcastGradients) {
  Rng rng(51);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3, 4}, rng);
  Tensor v = random_tensor({4}, rng);
  Tensor r = random_tensor({3}, rng);
  EXPECT_LT(check_gradient([&] { return mul(a, b); }, {{"a", a}, {"b", b}}),
            1e-6);
  EXPECT_LT(check_gradient([&] { return add_row_vector(a, v); },
                           {{"a", a}, {"v", v}}),
            1e-6);
  EXPECT_LT(check_gradient([&] { return scale_rows(a, r); },
                           {{"a", a}, {"r", r}}),
            1e-6);
  EXPECT_LT(check_gradient([&] { return transpose(a); }, {{"a", a}}), 1e-6);
  EXPECT_LT(check_gradient([&] { return slice_cols(a, 1, 3); }, {{"a", a}}),
            1e-6);
  EXPECT_LT(check_gradient([&] { return concat_cols({a, b}); },
                           {{"a", a}, {"b", b}}),
            1e-6);
  EXPECT_LT(check_gradient([&] { return matvec(a, v); }, {{"a", a}, {"v", v}}),
            1e-6);
  EXPECT_LT(
      check_gradient([&] { return lincomb(0.3, a, 0.7, b); },
                     {{"a", a}, {"b", b}}),
      1e-6);
  EXPECT_LT(check_gradient([&] { return log_softmax(v); }, {{"v", v}}), 1e-6);
  EXPECT_LT(check_gradient([&] { return row(a, 1); }, {{"a", a}}), 1e-6);
}

TEST(Ops, EmbeddingRowsGradientScatters) {
  Tensor table = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  Tensor out = embedding_rows(table, {2, 0, 2});
  backward(sum(out));
  EXPECT_DOUBLE_EQ(table.grad()[0], 1.0);  // row 0 once
  EXPECT_DOUBLE_EQ(table.grad()[2], 0.0);  // row 1 never
  EXPECT_DOUBLE_EQ(table.grad()[4], 2.0);  // row 2 twice
}

TEST(Ops, EmbeddingRowsOutOfRange) {
  Tensor table = Tensor::zeros({3, 2});
  try {
    embedding_rows(table, {0, 7});
    FAIL() << "expected vocabulary error";
  } catch (const std::out_of_range& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("7"), std::string::npos);
    EXPECT_NE(msg.find("position 1"), std::string::npos);
  }
}

TEST(Ops, DetachStopsGradient) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor d = detach(x);
  EXPECT_FALSE(d.requires_grad());
  backward(sum(mul(d, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 2.0);
}
