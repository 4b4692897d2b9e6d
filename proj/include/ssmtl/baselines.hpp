#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssmtl/checkpoint.hpp"
#include "ssmtl/dlvm.hpp"
#include "ssmtl/neural.hpp"
#include "ssmtl/objective.hpp"
#include "ssmtl/rng.hpp"

namespace ssmtl {

// ---------------------------------------------------------------------------
// Discriminative multi-task regressor: y ~ N(f(x, c_i), sigma^2)

struct MtlInit {
  std::size_t K = 4;
  std::size_t Dx = 2;
  std::size_t Dy = 1;
  std::vector<std::size_t> hidden{200, 200};
  std::vector<std::string> unit_ids;
  std::uint64_t seed = 0;
  double context_log_std = ContextTable::kFreshLogStd;
};

class MtlModel {
 public:
  MtlModel() = default;
  explicit MtlModel(const MtlInit& init);
  MtlModel(Mlp f, Tensor log_sigma, ContextTable contexts, std::size_t K, std::size_t Dx,
           std::size_t Dy);

  std::size_t K() const { return K_; }
  std::size_t Dx() const { return Dx_; }
  std::size_t Dy() const { return Dy_; }
  const Mlp& f() const { return f_; }
  const Tensor& log_sigma() const { return log_sigma_; }
  ContextTable& contexts() { return contexts_; }
  const ContextTable& contexts() const { return contexts_; }
  std::size_t num_units() const { return contexts_.size(); }

  // f(x || c) for x [B x Dx], c [B x K].
  Tensor mean(const Tensor& x, const Tensor& c) const;
  Prediction predict_y(std::span<const double> x, std::size_t unit) const;

  std::vector<Tensor> network_parameters() const;
  std::vector<Tensor> context_parameters() const;
  std::vector<Tensor> parameters() const;
  MtlModel copy(bool networks_trainable = true, bool contexts_trainable = true) const;
  MtlModel with_contexts(ContextTable contexts) const;

  void to_store(ParameterStore& store) const;
  static MtlModel from_store(const ParameterStore& store);

 private:
  Mlp f_;
  Tensor log_sigma_;
  ContextTable contexts_;
  std::size_t K_ = 0, Dx_ = 0, Dy_ = 0;
};

// Negative expected log-likelihood over labeled points plus context KL, one
// reparameterized context draw per unit (K normals per unit, in unit order),
// divided by the number of labeled points.
Tensor mtl_loss(const MtlModel& model, const std::vector<UnitData>& units, Rng& rng);

// ---------------------------------------------------------------------------
// Single-task RBF kernel ridge regressor

struct StlModel {
  std::size_t dx = 0;
  std::vector<double> support;  // [n x dx]
  std::vector<double> dual;     // [n]
  double gamma = 1.0;
  double lambda = 1e-2;

  std::vector<double> predict(std::span<const double> x) const;
};

class SingularSystemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// dual = (G + lambda I)^-1 y with G_ab = exp(-gamma |x_a - x_b|^2). Targets are
// expected centered (predictions shrink to 0 as lambda grows).
StlModel stl_fit(std::span<const double> x, std::span<const double> y, std::size_t dx,
                 double gamma, double lambda);

struct StlGrid {
  std::vector<double> gammas{0.01, 0.1, 1.0, 10.0};
  std::vector<double> lambdas{1e-4, 1e-2, 1.0};
  double default_gamma = 1.0;
  double default_lambda = 1e-2;
};

struct StlSearchResult {
  double gamma = 1.0;
  double lambda = 1e-2;
  bool fallback = false;  // too few points; defaults used
  double validation_mse = 0.0;
  std::vector<double> cell_mse;  // gammas x lambdas, row-major
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> validation_index;
};

// Exhaustive grid search on a seeded validation split. Fewer than 4 points
// falls back to the grid defaults and logs a warning to stderr.
StlSearchResult stl_hyperparam_search(std::span<const double> x, std::span<const double> y,
                                      std::size_t dx, const StlGrid& grid,
                                      double validation_fraction, std::uint64_t seed);

}  // namespace ssmtl
