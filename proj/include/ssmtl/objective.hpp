#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssmtl/dlvm.hpp"
#include "ssmtl/rng.hpp"
#include "ssmtl/tensor.hpp"

namespace ssmtl {

enum class Normalization { TotalCount, PerUnit, Raw };

std::string to_string(Normalization n);
Normalization parse_normalization(const std::string& s);

struct ObjectiveConfig {
  double alpha = 1.0;
  // When set, unit i uses alpha_i = beta * (N_i^l + N_i^u) / N_i^l instead of alpha.
  std::optional<double> beta;
  std::size_t mc_samples = 5;
  Normalization normalization = Normalization::TotalCount;

  void validate() const;
};

// One unit's (standardized) data as seen by the objective.
struct UnitData {
  std::size_t context_row = 0;
  std::vector<double> x_labeled;    // [n_l x Dx]
  std::vector<double> y_labeled;    // [n_l x Dy]
  std::vector<double> x_unlabeled;  // [n_u x Dx]
  // Population sizes used for normalization and minibatch scaling. Zero means
  // "same as the data held here".
  std::size_t population_labeled = 0;
  std::size_t population_unlabeled = 0;

  std::size_t n_labeled(std::size_t Dx) const { return x_labeled.size() / Dx; }
  std::size_t n_unlabeled(std::size_t Dx) const { return x_unlabeled.size() / Dx; }
};

// Per-unit raw quantities ([M] tensors) and weighted scalar parts.
//   total = unlabeled_term + labeled_term - kl_context_term + aug_likelihood_term
struct ElboBreakdown {
  Tensor unit_unlabeled;  // sum over unlabeled points of the per-point ELBO
  Tensor unit_labeled;    // sum over labeled points of the per-point ELBO
  Tensor unit_kl;         // KL(q(c_i) || N(0, I))
  Tensor unit_aug;        // sum over labeled points of log q(y | x, c_i)

  Tensor unlabeled_term;
  Tensor labeled_term;
  Tensor kl_context_term;
  Tensor aug_likelihood_term;
  Tensor total;

  std::vector<double> elbo_weights;  // per unit
  std::vector<double> aug_weights;   // per unit

  double value() const { return total.item(); }
};

// The weighted combination in plain doubles, for checking the identity.
double combine_parts(double unlabeled, double labeled, double kl, double aug);

// 0.5 * sum_k (m_k^2 + s_k^2 - 1 - 2 log s_k). Throws on s <= 0.
double kl_diag_normal_vs_standard(std::span<const double> m, std::span<const double> s);

// Single-point estimators with explicit noise.
double elbo_unlabeled_point(const SsmtlModel& model, std::span<const double> x,
                            std::span<const double> c_tilde, std::span<const double> eps_y,
                            std::span<const double> eps_z);
double elbo_labeled_point(const SsmtlModel& model, std::span<const double> x,
                          std::span<const double> y, std::span<const double> c_tilde,
                          std::span<const double> eps_z);
// Same, drawing eps_y then eps_z from rng.
double elbo_unlabeled_point(const SsmtlModel& model, std::span<const double> x,
                            std::span<const double> c_tilde, Rng& rng);
double elbo_labeled_point(const SsmtlModel& model, std::span<const double> x,
                          std::span<const double> y, std::span<const double> c_tilde, Rng& rng);

// SGVB estimate of the augmented objective. Noise is consumed from rng in this
// order, unit by unit: K context draws; then for each Monte-Carlo sample, for
// each unlabeled point Dy draws (y) followed by D draws (z), then for each
// labeled point D draws (z).
ElboBreakdown sgvb_dataset_estimate(const SsmtlModel& model, const std::vector<UnitData>& units,
                                    const ObjectiveConfig& config, Rng& rng);

// -total, differentiable.
Tensor loss_for_training(const ElboBreakdown& breakdown);

// Weights applied to each unit's ELBO and augmented term.
struct UnitWeights {
  std::vector<double> elbo;
  std::vector<double> aug;
};
UnitWeights objective_weights(const std::vector<std::size_t>& n_labeled,
                              const std::vector<std::size_t>& n_unlabeled,
                              const ObjectiveConfig& config);

}  // namespace ssmtl
