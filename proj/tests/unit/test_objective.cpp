#include <gtest/gtest.h>

#include <cmath>

#include "oracles/oracles.hpp"
#include "ssmtl/objective.hpp"

using namespace ssmtl;

namespace {

SsmtlModel toy_model(std::uint64_t seed, std::size_t units = 2) {
  SsmtlInit init;
  init.dims = ModelDims{2, 3, 2, 1};
  init.hidden = {8};
  for (std::size_t i = 0; i < units; ++i) init.unit_ids.push_back("u" + std::to_string(i));
  init.seed = seed;
  SsmtlModel m(init);
  Rng rng(seed + 100);
  for (auto& v : m.contexts().mean.mutable_values()) v = 0.5 * rng.normal();
  for (auto& v : m.contexts().log_std.mutable_values()) v = -0.5 + 0.3 * rng.normal();
  return m;
}

std::vector<UnitData> toy_units(std::uint64_t seed, std::size_t nl0 = 2, std::size_t nu0 = 3) {
  Rng rng(seed);
  std::vector<UnitData> units(2);
  for (std::size_t i = 0; i < 2; ++i) {
    units[i].context_row = i;
    const std::size_t nl = nl0 + i, nu = nu0 - i;
    units[i].x_labeled = rng.normals(2 * nl);
    units[i].y_labeled = rng.normals(nl);
    units[i].x_unlabeled = rng.normals(2 * nu);
  }
  return units;
}

void expect_parts_near(const ElboBreakdown& b, const oracle::Parts& o, double tol) {
  auto close = [tol](double a, double e) { return std::abs(a - e) <= tol * std::max(1.0, std::abs(e)); };
  EXPECT_PRED2(close, b.unlabeled_term.item(), o.unlabeled);
  EXPECT_PRED2(close, b.labeled_term.item(), o.labeled);
  EXPECT_PRED2(close, b.kl_context_term.item(), o.kl);
  EXPECT_PRED2(close, b.aug_likelihood_term.item(), o.aug);
  EXPECT_PRED2(close, b.total.item(), o.total);
}

}  // namespace

TEST(Kl, ClosedFormExamples) {
  EXPECT_EQ(kl_diag_normal_vs_standard(std::vector<double>{0.0}, std::vector<double>{1.0}), 0.0);
  EXPECT_DOUBLE_EQ(kl_diag_normal_vs_standard(std::vector<double>{1.0, 0.0},
                                              std::vector<double>{1.0, 1.0}),
                   0.5);
  EXPECT_THROW(kl_diag_normal_vs_standard(std::vector<double>{0.0}, std::vector<double>{0.0}),
               std::invalid_argument);
}

// E_q[log q - log p] from 2e5 draws lies within 3 standard errors.
TEST(Kl, MatchesMonteCarlo) {
  Rng rng(1);
  const std::vector<double> m{0.7, -1.2}, s{0.4, 1.8};
  const std::size_t n = 200000;
  double acc = 0.0, acc2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.0;
    for (std::size_t k = 0; k < 2; ++k) {
      const double e = rng.normal(), c = m[k] + s[k] * e;
      v += -0.5 * e * e - std::log(s[k]) + 0.5 * c * c;
    }
    acc += v;
    acc2 += v * v;
  }
  const double mean = acc / n, se = std::sqrt((acc2 / n - mean * mean) / n);
  EXPECT_LT(std::abs(mean - kl_diag_normal_vs_standard(m, s)), 3 * se);
}

TEST(PointElbo, ZeroModelByHand) {
  const ModelDims d{1, 1, 1, 1};
  const SsmtlModel model(d, GaussianHead(Mlp::constant({2, 4})), GaussianHead(Mlp::constant({2, 2})),
                         GaussianHead(Mlp::constant({3, 2})), ContextTable::fresh({"a"}, 1));
  const std::vector<double> zero{0.0};
  EXPECT_NEAR(elbo_labeled_point(model, zero, zero, zero, zero), 2 * -0.9189385332046727, 1e-12);
  // Standard-normal log densities at zero: x, y and z terms minus q(z), then also minus q(y).
  EXPECT_NEAR(elbo_unlabeled_point(model, zero, zero, zero, zero), -0.9189385332046727, 1e-12);
}

TEST(PointElbo, RngVersionDrawsYThenZ) {
  const auto model = toy_model(2);
  const std::vector<double> x{0.3, -0.2}, c{0.1, 0.5};
  Rng a(3), b(3);
  const auto ey = b.normals(1), ez = b.normals(3);
  EXPECT_EQ(elbo_unlabeled_point(model, x, c, a), elbo_unlabeled_point(model, x, c, ey, ez));
  Rng r1(4), r2(4);
  EXPECT_EQ(elbo_labeled_point(model, x, std::vector<double>{1.0}, c, r1),
            elbo_labeled_point(model, x, std::vector<double>{1.0}, c, r2));
}

TEST(Weights, NormalizationTable) {
  ObjectiveConfig cfg;
  cfg.alpha = 2.0;
  const std::vector<std::size_t> nl{2, 0}, nu{8, 10};
  auto w = objective_weights(nl, nu, cfg);
  EXPECT_DOUBLE_EQ(w.elbo[0], 1.0 / 20);
  EXPECT_DOUBLE_EQ(w.aug[0], 2.0 / 2);
  EXPECT_EQ(w.aug[1], 0.0);
  cfg.normalization = Normalization::PerUnit;
  w = objective_weights(nl, nu, cfg);
  EXPECT_DOUBLE_EQ(w.elbo[0], 1.0 / 20);
  EXPECT_DOUBLE_EQ(w.elbo[1], 1.0 / 20);
  EXPECT_DOUBLE_EQ(w.aug[0], 2.0 / 20);
  cfg.normalization = Normalization::Raw;
  cfg.beta = 0.5;
  w = objective_weights(nl, nu, cfg);
  EXPECT_DOUBLE_EQ(w.elbo[0], 1.0);
  EXPECT_DOUBLE_EQ(w.aug[0], 0.5 * 10 / 2);
  EXPECT_EQ(w.aug[1], 0.0);
}

TEST(Config, Validation) {
  ObjectiveConfig cfg;
  cfg.mc_samples = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.mc_samples = 1;
  cfg.alpha = -1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_EQ(parse_normalization("per_unit"), Normalization::PerUnit);
  EXPECT_THROW(parse_normalization("bogus"), std::invalid_argument);
}

// The oracle evaluates every point separately with plain loops; agreement to
// 1e-12 (relative to max(1, |value|)) leaves room only for summation order.
TEST(Sgvb, MatchesStraightLineOracle) {
  for (auto norm : {Normalization::TotalCount, Normalization::PerUnit, Normalization::Raw}) {
    for (bool beta : {false, true}) {
      const auto model = toy_model(5);
      const auto units = toy_units(6);
      ObjectiveConfig cfg;
      cfg.alpha = 0.7;
      if (beta) cfg.beta = 0.3;
      cfg.mc_samples = 3;
      cfg.normalization = norm;
      Rng r1(7), r2(7);
      const auto b = sgvb_dataset_estimate(model, units, cfg, r1);
      const auto o = oracle::straight_line_sgvb(model, units, cfg, r2);
      expect_parts_near(b, o, 1e-12);
      EXPECT_EQ(b.total.item(), combine_parts(b.unlabeled_term.item(), b.labeled_term.item(),
                                              b.kl_context_term.item(), b.aug_likelihood_term.item()));
    }
  }
}

TEST(Sgvb, MinibatchScalingMatchesOracle) {
  const auto model = toy_model(8);
  auto units = toy_units(9);
  units[0].population_labeled = 10;
  units[0].population_unlabeled = 30;
  ObjectiveConfig cfg;
  Rng r1(10), r2(10);
  expect_parts_near(sgvb_dataset_estimate(model, units, cfg, r1),
                    oracle::straight_line_sgvb(model, units, cfg, r2), 1e-12);
}

TEST(Sgvb, EmptyUnlabeledAndAlphaZero) {
  const auto model = toy_model(11);
  auto units = toy_units(12);
  for (auto& u : units) u.x_unlabeled.clear();
  ObjectiveConfig cfg;
  cfg.alpha = 0.0;
  Rng rng(13);
  const auto b = sgvb_dataset_estimate(model, units, cfg, rng);
  EXPECT_EQ(b.unlabeled_term.item(), 0.0);
  EXPECT_EQ(b.aug_likelihood_term.item(), 0.0);
  EXPECT_EQ(b.total.item(), b.labeled_term.item() - b.kl_context_term.item());
}

TEST(Sgvb, KlIgnoresData) {
  const auto model = toy_model(14);
  ObjectiveConfig cfg;
  Rng r1(15), r2(15);
  const auto a = sgvb_dataset_estimate(model, toy_units(16), cfg, r1);
  const auto b = sgvb_dataset_estimate(model, toy_units(17), cfg, r2);
  EXPECT_EQ(a.kl_context_term.item(), b.kl_context_term.item());
}

// Raw normalization: the dataset value is a sum of per-unit values, each
// computed from its own noise.
TEST(Sgvb, AdditiveOverUnits) {
  const auto model = toy_model(18);
  const auto units = toy_units(19);
  ObjectiveConfig cfg;
  cfg.normalization = Normalization::Raw;
  Rng rng(20);
  const double both = sgvb_dataset_estimate(model, units, cfg, rng).value();
  Rng r2(20);
  const double first = sgvb_dataset_estimate(model, {units[0]}, cfg, r2).value();
  const double second = sgvb_dataset_estimate(model, {units[1]}, cfg, r2).value();
  EXPECT_NEAR(both, first + second, 1e-10 * std::abs(both));
}

TEST(Sgvb, UnknownContextRowRejected) {
  const auto model = toy_model(21);
  auto units = toy_units(22);
  units[1].context_row = 7;
  Rng rng(1);
  EXPECT_THROW(sgvb_dataset_estimate(model, units, ObjectiveConfig{}, rng), std::out_of_range);
}

TEST(Sgvb, LossIsNegatedTotal) {
  const auto model = toy_model(23);
  Rng rng(24);
  const auto b = sgvb_dataset_estimate(model, toy_units(25), ObjectiveConfig{}, rng);
  const Tensor loss = loss_for_training(b);
  EXPECT_EQ(loss.item(), -b.total.item());
  loss.backward();
  const auto g_loss = model.contexts().mean.to_vector().size();
  EXPECT_GT(g_loss, 0u);
  std::vector<double> gl(model.contexts().mean.grad().begin(), model.contexts().mean.grad().end());
  for (auto p : model.parameters()) p.zero_grad();
  b.total.backward();
  for (std::size_t i = 0; i < gl.size(); ++i) EXPECT_EQ(gl[i], -model.contexts().mean.grad()[i]);
}

// Quadrature ELBO of the linear model is a lower bound on its quadrature
// evidence, and the SGVB estimator averages to it.
TEST(Sgvb, LinearModelBoundAndUnbiasedness) {
  oracle::LinearModel lm;
  std::vector<oracle::LinearUnit> lunits(2);
  lunits[0] = {{0.4, -0.3}, {0.1, 0.9}, {1.2}, 0.2, std::log(0.7)};
  lunits[1] = {{-0.8}, {0.5}, {0.3, -1.1}, -0.4, std::log(1.2)};
  const auto quad = oracle::linear_quadrature(lm, lunits);
  EXPECT_LE(quad.elbo, quad.log_evidence + 1e-6);

  const auto model = lm.build({"a", "b"}, {0.2, -0.4}, {std::log(0.7), std::log(1.2)});
  std::vector<UnitData> units(2);
  for (std::size_t i = 0; i < 2; ++i) {
    units[i].context_row = i;
    units[i].x_labeled = lunits[i].x_labeled;
    units[i].y_labeled = lunits[i].y_labeled;
    units[i].x_unlabeled = lunits[i].x_unlabeled;
  }
  ObjectiveConfig cfg;
  cfg.alpha = 0.0;
  cfg.mc_samples = 1;
  cfg.normalization = Normalization::Raw;
  Rng rng(26);
  const std::size_t n = 20000;
  double acc = 0.0, acc2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = sgvb_dataset_estimate(model, units, cfg, rng).value();
    acc += v;
    acc2 += v * v;
  }
  const double mean = acc / n, se = std::sqrt((acc2 / n - mean * mean) / n);
  EXPECT_LT(std::abs(mean - quad.elbo), 3 * se) << mean << " vs " << quad.elbo;
}

// With common random numbers the objective is a smooth deterministic function;
// small Adam steps should raise it at every one of the first 50 steps.
TEST(Sgvb, TrainingRaisesObjective) {
  int monotone = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto model = toy_model(30 + seed);
    const auto units = toy_units(40 + seed);
    Adam adam(model.parameters(), AdamOptions{1e-3});
    double prev = -std::numeric_limits<double>::infinity();
    bool ok = true;
    for (int step = 0; step < 50; ++step) {
      Rng rng(seed);
      const auto b = sgvb_dataset_estimate(model, units, ObjectiveConfig{}, rng);
      if (b.value() < prev) ok = false;
      prev = b.value();
      adam.zero_grad();
      loss_for_training(b).backward();
      adam.step();
    }
    monotone += ok;
  }
  EXPECT_GE(monotone, 9);
}
