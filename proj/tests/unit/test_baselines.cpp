#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>

#include "oracles/oracles.hpp"
#include "ssmtl/baselines.hpp"

using namespace ssmtl;

namespace {

double rbf(const double* a, const double* b, std::size_t d, double gamma) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::exp(-gamma * s);
}

std::vector<UnitData> mtl_units(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<UnitData> units(3);
  for (std::size_t i = 0; i < 3; ++i) {
    units[i].context_row = i;
    units[i].x_labeled = rng.normals(2 * (2 + i));
    units[i].y_labeled = rng.normals(2 + i);
  }
  return units;
}

MtlModel mtl_model(std::size_t K, std::uint64_t seed) {
  MtlInit init;
  init.K = K;
  init.hidden = {6};
  init.unit_ids = {"a", "b", "c"};
  init.seed = seed;
  MtlModel m(init);
  Rng rng(seed + 1);
  for (auto& v : m.contexts().mean.mutable_values()) v = rng.normal();
  return m;
}

// Hand-written loss with the same draw order: K normals per unit in unit order.
double mtl_loss_by_hand(const MtlModel& m, const std::vector<UnitData>& units, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t K = m.K();
  const double ls = std::clamp(m.log_sigma().item(), -7.0, 7.0);
  double nll = 0.0, kl = 0.0;
  std::size_t n = 0;
  for (const auto& u : units) {
    std::vector<double> c(K);
    for (std::size_t k = 0; k < K; ++k) {
      const double mk = m.contexts().mean.at(u.context_row, k);
      const double lk = std::clamp(m.contexts().log_std.at(u.context_row, k), -7.0, 7.0);
      c[k] = mk + std::exp(lk) * rng.normal();
      kl += 0.5 * (mk * mk + std::exp(2 * lk) - 1.0 - 2 * lk);
    }
    for (std::size_t j = 0; j < u.y_labeled.size(); ++j, ++n) {
      const double mu = oracle::mlp_forward(m.f(), oracle::cat(oracle::row(u.x_labeled, j, 2), c))[0];
      const double r = (u.y_labeled[j] - mu) / std::exp(ls);
      nll += 0.5 * r * r + ls + 0.5 * oracle::kLog2Pi;
    }
  }
  return (nll + kl) / static_cast<double>(n);
}

}  // namespace

// Oracle: dense LDLT solve of (G + lambda I) a = y built from the definition.
TEST(Stl, MatchesDenseSolve) {
  Rng rng(1);
  const std::size_t n = 30, d = 2;
  const auto x = rng.normals(n * d), y = rng.normals(n);
  const double gamma = 0.7, lambda = 0.05;
  Eigen::MatrixXd G(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) G(a, b) = rbf(&x[a * d], &x[b * d], d, gamma);
  }
  const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  const Eigen::VectorXd dual = (G + lambda * Eigen::MatrixXd::Identity(n, n)).ldlt().solve(yv);
  const auto m = stl_fit(x, y, d, gamma, lambda);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(m.dual[i], dual(i), 1e-8);
  const auto q = rng.normals(5 * d);
  const auto pred = m.predict(q);
  for (std::size_t i = 0; i < 5; ++i) {
    double e = 0.0;
    for (std::size_t a = 0; a < n; ++a) e += dual(a) * rbf(&q[i * d], &x[a * d], d, gamma);
    EXPECT_NEAR(pred[i], e, 1e-8);
  }
}

TEST(Stl, InterpolatesAndShrinks) {
  const std::vector<double> x{0.0, 1.0, 2.0}, y{1.0, -1.0, 0.5};
  const auto tight = stl_fit(x, y, 1, 1.0, 1e-12).predict(x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(tight[i], y[i], 1e-8);
  const auto loose = stl_fit(x, y, 1, 1.0, 1e8).predict(x);
  for (double v : loose) EXPECT_NEAR(v, 0.0, 1e-7);
  EXPECT_THROW(stl_fit(std::vector<double>{1.0, 1.0}, std::vector<double>{0.0, 1.0}, 1, 1.0, 0.0),
               SingularSystemError);
  EXPECT_THROW(stl_fit({}, {}, 1, 1.0, 0.1), std::invalid_argument);
}

TEST(Stl, GridSearchIsExhaustiveAndSeeded) {
  Rng rng(2);
  const std::size_t n = 20;
  std::vector<double> x = rng.normals(n), y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = std::sin(2 * x[i]);
  const StlGrid grid;
  const auto r = stl_hyperparam_search(x, y, 1, grid, 0.25, 3);
  ASSERT_EQ(r.cell_mse.size(), grid.gammas.size() * grid.lambdas.size());
  const auto best = std::min_element(r.cell_mse.begin(), r.cell_mse.end());
  EXPECT_EQ(r.validation_mse, *best);
  const auto cell = static_cast<std::size_t>(best - r.cell_mse.begin());
  EXPECT_EQ(r.gamma, grid.gammas[cell / grid.lambdas.size()]);
  EXPECT_EQ(r.lambda, grid.lambdas[cell % grid.lambdas.size()]);
  EXPECT_EQ(r.validation_index.size(), 5u);
  std::vector<std::size_t> all = r.train_index;
  all.insert(all.end(), r.validation_index.begin(), r.validation_index.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(all[i], i);
  EXPECT_EQ(stl_hyperparam_search(x, y, 1, grid, 0.25, 3).validation_index, r.validation_index);
  EXPECT_FALSE(r.fallback);

  const auto few = stl_hyperparam_search(std::vector<double>{0, 1, 2}, std::vector<double>{0, 1, 2},
                                         1, grid, 0.25, 3);
  EXPECT_TRUE(few.fallback);
  EXPECT_EQ(few.gamma, grid.default_gamma);
}

TEST(Mtl, LossMatchesHandComputation) {
  for (std::size_t K : {0u, 2u}) {
    const auto m = mtl_model(K, 4);
    const auto units = mtl_units(5);
    Rng rng(6);
    EXPECT_NEAR(mtl_loss(m, units, rng).item(), mtl_loss_by_hand(m, units, 6), 1e-12);
  }
}

TEST(Mtl, GradientMatchesFiniteDifferences) {
  auto m = mtl_model(2, 7);
  const auto units = mtl_units(8);
  auto loss = [&] {
    Rng rng(9);
    return mtl_loss(m, units, rng).item();
  };
  Rng rng(9);
  mtl_loss(m, units, rng).backward();
  for (auto p : m.parameters()) {
    const std::vector<double> g(p.grad().begin(), p.grad().end());
    for (std::size_t i = 0; i < g.size(); i += 3) {
      const double fd = oracle::central_difference(loss, p, i, 1e-6);
      EXPECT_NEAR(g[i], fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Mtl, PredictUsesContextMeanAndRoundTrips) {
  const auto m = mtl_model(2, 10);
  const std::vector<double> x{0.3, -0.1};
  const auto p = m.predict_y(x, 1);
  const auto c = std::vector<double>{m.contexts().mean.at(1, 0), m.contexts().mean.at(1, 1)};
  EXPECT_NEAR(p.mean[0], oracle::mlp_forward(m.f(), oracle::cat(x, c))[0], 1e-12);
  EXPECT_THROW(m.predict_y(x, 3), std::out_of_range);
  ParameterStore store;
  m.to_store(store);
  const auto back = MtlModel::from_store(store);
  EXPECT_EQ(back.predict_y(x, 1).mean, p.mean);
  store.set_attr("model.kind", "ssmtl");
  EXPECT_THROW(MtlModel::from_store(store), CheckpointError);
}

TEST(Mtl, NoLabeledDataRejected) {
  const auto m = mtl_model(1, 11);
  std::vector<UnitData> units(1);
  Rng rng(1);
  EXPECT_THROW(mtl_loss(m, units, rng), std::invalid_argument);
}
