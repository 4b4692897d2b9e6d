#include <gtest/gtest.h>

#include <cmath>

#include "oracles/oracles.hpp"
#include "ssmtl/dlvm.hpp"

using namespace ssmtl;

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;

SsmtlModel zero_model(ModelDims d, std::size_t units) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < units; ++i) ids.push_back("u" + std::to_string(i));
  return SsmtlModel(d, GaussianHead(Mlp::constant({d.D + d.K, 4, 2 * (d.Dx + d.Dy)})),
                    GaussianHead(Mlp::constant({d.Dx + d.K, 4, 2 * d.Dy})),
                    GaussianHead(Mlp::constant({d.Dx + d.Dy + d.K, 4, 2 * d.D})),
                    ContextTable::fresh(ids, d.K));
}

SsmtlModel random_model(std::uint64_t seed, std::size_t units = 2) {
  SsmtlInit init;
  init.dims = ModelDims{2, 3, 2, 1};
  init.hidden = {8};
  for (std::size_t i = 0; i < units; ++i) init.unit_ids.push_back("u" + std::to_string(i));
  init.seed = seed;
  return SsmtlModel(init);
}

}  // namespace

TEST(LogProb, Basics) {
  const std::vector<double> zero{0.0};
  EXPECT_NEAR(log_prob_diag_normal(zero, {{0.0}, {1.0}}), -kHalfLog2Pi, 1e-12);
  EXPECT_NEAR(log_prob_diag_normal(std::vector<double>{1.3}, {{1.3}, {2.0}}),
              -kHalfLog2Pi - std::log(2.0), 1e-12);
  const GaussianDiag g3{{0.1, -0.2, 0.3}, {0.5, 1.5, 2.5}};
  const std::vector<double> v{1.0, 2.0, -1.0};
  double parts = 0.0;
  for (int k = 0; k < 3; ++k) {
    parts += log_prob_diag_normal(std::vector<double>{v[k]}, {{g3.mean[k]}, {g3.std[k]}});
  }
  EXPECT_NEAR(log_prob_diag_normal(v, g3), parts, 1e-12);
  EXPECT_THROW(log_prob_diag_normal(zero, {{0.0}, {0.0}}), std::invalid_argument);
}

// Trapezoid over mean +- 8 sd with 4001 points.
TEST(LogProb, IntegratesToOne) {
  for (double s : {0.1, 1.0, 7.0}) {
    const GaussianDiag g{{0.3}, {s}};
    const int n = 4000;
    const double lo = 0.3 - 8 * s, h = 16 * s / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double w = (i == 0 || i == n) ? 0.5 : 1.0;
      acc += w * std::exp(log_prob_diag_normal(std::vector<double>{lo + i * h}, g));
    }
    EXPECT_NEAR(acc * h, 1.0, 1e-3);
  }
}

TEST(LogProb, RowsMatchScalar) {
  Rng rng(1);
  const auto v = rng.normals(6), m = rng.normals(6), ls = rng.normals(6);
  const auto rows = log_prob_rows(Tensor({2, 3}, v), Tensor({2, 3}, m), Tensor({2, 3}, ls));
  for (std::size_t r = 0; r < 2; ++r) {
    GaussianDiag g;
    for (std::size_t k = 0; k < 3; ++k) {
      g.mean.push_back(m[3 * r + k]);
      g.std.push_back(std::exp(ls[3 * r + k]));
    }
    EXPECT_NEAR(rows.at(r), log_prob_diag_normal(std::span(v).subspan(3 * r, 3), g), 1e-12);
  }
}

TEST(Reparam, Basics) {
  EXPECT_EQ(reparam_sample({{0.0}, {1.0}}, std::vector<double>{0.5})[0], 0.5);
  EXPECT_EQ(reparam_sample({{2.0}, {3.0}}, std::vector<double>{0.0})[0], 2.0);
}

// Sample mean and sd of 1e5 draws within 3 standard errors of (m, s).
TEST(Reparam, MonteCarloMoments) {
  Rng rng(2);
  const GaussianDiag g{{1.5}, {0.7}};
  const std::size_t n = 100000;
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = reparam_sample(g, std::vector<double>{rng.normal()})[0];
    s1 += x;
    s2 += x * x;
  }
  const double mean = s1 / n, sd = std::sqrt(s2 / n - mean * mean);
  EXPECT_LT(std::abs(mean - 1.5), 3 * 0.7 / std::sqrt(double(n)));
  EXPECT_LT(std::abs(sd - 0.7), 3 * 0.7 / std::sqrt(2.0 * n));
}

TEST(Context, VanishingVarianceReturnsMean) {
  auto model = random_model(3);
  auto& ctx = model.contexts();
  for (auto& v : ctx.mean.mutable_values()) v = 1.0;
  for (auto& v : ctx.log_std.mutable_values()) v = -1e9;
  Rng rng(4);
  const auto draw = model.sample_context(1, rng);
  for (double c : draw.c_tilde) EXPECT_NEAR(c, 1.0, 1e-2);
  EXPECT_THROW(model.sample_context(2, rng), std::out_of_range);
}

TEST(Context, SampleMeanWithinThreeSigma) {
  auto model = random_model(5);
  for (auto& v : model.contexts().mean.mutable_values()) v = -0.4;
  Rng rng(6);
  const std::size_t n = 10000;
  std::vector<double> acc(2, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto d = model.sample_context(0, rng);
    for (std::size_t k = 0; k < 2; ++k) acc[k] += d.c_tilde[k];
  }
  for (double a : acc) EXPECT_LT(std::abs(a / n + 0.4), 3 * 0.5 / std::sqrt(double(n)));
  Rng r1(7), r2(7);
  EXPECT_EQ(model.sample_context(0, r1).c_tilde, model.sample_context(0, r2).c_tilde);
}

TEST(Heads, ZeroNetworksGiveStandardNormals) {
  const auto model = zero_model({2, 3, 2, 1}, 1);
  const std::vector<double> x{1.0, 2.0}, y{0.5}, c{0.1, 0.2}, z{1.0, 1.0, 1.0};
  for (const auto& g : {model.encode_y(x, c), model.encode_z(x, y, c), model.decode(z, c)}) {
    for (double m : g.mean) EXPECT_EQ(m, 0.0);
    for (double s : g.std) EXPECT_EQ(s, 1.0);
  }
  EXPECT_EQ(model.decode(z, c).mean.size(), 3u);
  EXPECT_EQ(model.encode_z(x, y, c).mean.size(), 3u);
}

TEST(Heads, DecoderDensitySplitsIntoXAndY) {
  const auto model = random_model(8);
  const std::vector<double> z{0.3, -0.1, 0.7}, c{0.2, -0.5}, xy{0.4, -1.0, 2.0};
  const auto g = model.decode(z, c);
  const double joint = log_prob_diag_normal(xy, g);
  const double x_part = log_prob_diag_normal(std::span(xy).first(2),
                                             {{g.mean[0], g.mean[1]}, {g.std[0], g.std[1]}});
  const double y_part = log_prob_diag_normal(std::span(xy).last(1), {{g.mean[2]}, {g.std[2]}});
  EXPECT_NEAR(joint, x_part + y_part, 1e-12);
}

// Finite-difference Jacobian of the y-encoder mean with respect to x.
TEST(Heads, EncoderJacobianMatchesAutodiff) {
  const auto model = random_model(9);
  Tensor x({1, 2}, {0.3, -0.8}, true);
  const Tensor c({1, 2}, {0.1, 0.4});
  sum(model.encode_y(x, c).mean).backward();
  const std::vector<double> g(x.grad().begin(), x.grad().end());
  for (std::size_t i = 0; i < 2; ++i) {
    const double fd = oracle::central_difference(
        [&] { return sum(model.encode_y(x, c).mean).item(); }, x, i, 1e-5);
    EXPECT_NEAR(g[i], fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Predict, UsesContextMean) {
  auto model = random_model(10);
  const std::vector<double> x{0.2, 0.4, -1.0, 1.0};
  EXPECT_EQ(model.predict_y(x, 0).mean, model.predict_y(x, 0).mean);
  // Equal contexts give equal predictions.
  auto m = model.contexts().mean.mutable_values();
  m[2] = m[0] = 0.7;
  m[3] = m[1] = -0.2;
  EXPECT_EQ(model.predict_y(x, 0).mean, model.predict_y(x, 1).mean);
  const auto direct = model.encode_y(std::span(x).first(2), std::vector<double>{0.7, -0.2});
  EXPECT_NEAR(model.predict_y(x, 0).mean[0], direct.mean[0], 1e-14);
  EXPECT_THROW(model.predict_y(x, 5), std::out_of_range);
}

TEST(Store, ModelRoundTrip) {
  const auto model = random_model(11, 3);
  ParameterStore store;
  model.to_store(store);
  const auto back = SsmtlModel::from_store(store);
  EXPECT_EQ(back.dims(), model.dims());
  EXPECT_EQ(back.contexts().unit_ids, model.contexts().unit_ids);
  ParameterStore again;
  back.to_store(again);
  EXPECT_TRUE(bitwise_equal(store, again));
}

TEST(Store, CopyAndWithContexts) {
  const auto model = random_model(12);
  const auto frozen = model.copy(false, false);
  for (const auto& p : frozen.parameters()) EXPECT_FALSE(p.requires_grad());
  auto table = ContextTable::fresh({"new"}, 2);
  const auto shared = model.with_contexts(table);
  EXPECT_EQ(shared.num_units(), 1u);
  EXPECT_EQ(shared.decoder().net().layers()[0].weight.node(),
            model.decoder().net().layers()[0].weight.node());
}
