#include "ssmtl/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace ssmtl {

namespace {

Tensor matrix(std::vector<double> v, std::size_t cols) {
  const std::size_t rows = cols ? v.size() / cols : 0;
  return Tensor({rows, cols}, std::move(v));
}

Tensor matrix(std::span<const double> v, std::size_t cols) {
  return matrix(std::vector<double>(v.begin(), v.end()), cols);
}

// Per-row ELBO of unlabeled points: [R].
Tensor unlabeled_rows(const SsmtlModel& model, const Tensor& x, const Tensor& c,
                      const Tensor& eps_y, const Tensor& eps_z) {
  const auto qy = model.encode_y(x, c);
  const Tensor y = qy.mean + qy.std * eps_y;
  const auto qz = model.encode_z(x, y, c);
  const Tensor z = qz.mean + qz.std * eps_z;
  const auto px = model.decode(z, c);
  return log_prob_rows(concat_cols({x, y}), px.mean, px.log_std) + log_prob_standard_rows(z) -
         log_prob_rows(y, qy.mean, qy.log_std) - log_prob_rows(z, qz.mean, qz.log_std);
}

// Per-row ELBO of labeled points: [R].
Tensor labeled_rows(const SsmtlModel& model, const Tensor& x, const Tensor& y, const Tensor& c,
                    const Tensor& eps_z) {
  const auto qz = model.encode_z(x, y, c);
  const Tensor z = qz.mean + qz.std * eps_z;
  const auto px = model.decode(z, c);
  return log_prob_rows(concat_cols({x, y}), px.mean, px.log_std) + log_prob_standard_rows(z) -
         log_prob_rows(z, qz.mean, qz.log_std);
}

// log q(y | x, c) per row: [R].
Tensor aug_rows(const SsmtlModel& model, const Tensor& x, const Tensor& y, const Tensor& c) {
  const auto qy = model.encode_y(x, c);
  return log_prob_rows(y, qy.mean, qy.log_std);
}

std::size_t checked_rows(const std::vector<double>& v, std::size_t width, const char* what) {
  if (v.size() % width != 0) {
    throw ShapeError(what, Shape{v.size()}, Shape{0, width});
  }
  return v.size() / width;
}

}  // namespace

std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::TotalCount: return "total_count";
    case Normalization::PerUnit: return "per_unit";
    case Normalization::Raw: return "raw";
  }
  return "total_count";
}

Normalization parse_normalization(const std::string& s) {
  if (s == "total_count") return Normalization::TotalCount;
  if (s == "per_unit") return Normalization::PerUnit;
  if (s == "raw") return Normalization::Raw;
  throw std::invalid_argument("unknown normalization '" + s +
                              "' (expected total_count, per_unit or raw)");
}

void ObjectiveConfig::validate() const {
  if (mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be non-negative");
  if (beta && !(*beta >= 0.0)) throw std::invalid_argument("beta must be non-negative");
}

double combine_parts(double unlabeled, double labeled, double kl, double aug) {
  return unlabeled + labeled - kl + aug;
}

double kl_diag_normal_vs_standard(std::span<const double> m, std::span<const double> s) {
  if (m.size() != s.size()) throw ShapeError("kl_diag_normal_vs_standard", Shape{m.size()}, Shape{s.size()});
  double kl = 0.0;
  for (std::size_t k = 0; k < m.size(); ++k) {
    if (!(s[k] > 0.0)) throw std::invalid_argument("kl_diag_normal_vs_standard: s must be positive");
    kl += m[k] * m[k] + s[k] * s[k] - 1.0 - 2.0 * std::log(s[k]);
  }
  return 0.5 * kl;
}

double elbo_unlabeled_point(const SsmtlModel& model, std::span<const double> x,
                            std::span<const double> c_tilde, std::span<const double> eps_y,
                            std::span<const double> eps_z) {
  const auto& d = model.dims();
  return unlabeled_rows(model, matrix(x, d.Dx), matrix(c_tilde, d.K), matrix(eps_y, d.Dy),
                        matrix(eps_z, d.D))
      .item();
}

double elbo_labeled_point(const SsmtlModel& model, std::span<const double> x,
                          std::span<const double> y, std::span<const double> c_tilde,
                          std::span<const double> eps_z) {
  const auto& d = model.dims();
  return labeled_rows(model, matrix(x, d.Dx), matrix(y, d.Dy), matrix(c_tilde, d.K),
                      matrix(eps_z, d.D))
      .item();
}

double elbo_unlabeled_point(const SsmtlModel& model, std::span<const double> x,
                            std::span<const double> c_tilde, Rng& rng) {
  const auto eps_y = rng.normals(model.dims().Dy);
  const auto eps_z = rng.normals(model.dims().D);
  return elbo_unlabeled_point(model, x, c_tilde, eps_y, eps_z);
}

double elbo_labeled_point(const SsmtlModel& model, std::span<const double> x,
                          std::span<const double> y, std::span<const double> c_tilde,
                          Rng& rng) {
  const auto eps_z = rng.normals(model.dims().D);
  return elbo_labeled_point(model, x, y, c_tilde, eps_z);
}

UnitWeights objective_weights(const std::vector<std::size_t>& n_labeled,
                              const std::vector<std::size_t>& n_unlabeled,
                              const ObjectiveConfig& config) {
  const std::size_t M = n_labeled.size();
  double total = 0.0, total_labeled = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    total += static_cast<double>(n_labeled[i] + n_unlabeled[i]);
    total_labeled += static_cast<double>(n_labeled[i]);
  }
  UnitWeights w;
  w.elbo.assign(M, 0.0);
  w.aug.assign(M, 0.0);
  for (std::size_t i = 0; i < M; ++i) {
    const double nl = static_cast<double>(n_labeled[i]);
    const double ni = nl + static_cast<double>(n_unlabeled[i]);
    double alpha_i = 0.0;
    if (nl > 0) alpha_i = config.beta ? *config.beta * ni / nl : config.alpha;
    switch (config.normalization) {
      case Normalization::TotalCount:
        w.elbo[i] = total > 0 ? 1.0 / total : 0.0;
        if (config.beta) {
          w.aug[i] = total > 0 ? alpha_i / total : 0.0;
        } else {
          w.aug[i] = total_labeled > 0 ? alpha_i / total_labeled : 0.0;
        }
        break;
      case Normalization::PerUnit:
        w.elbo[i] = ni > 0 ? 1.0 / (static_cast<double>(M) * ni) : 0.0;
        w.aug[i] = ni > 0 ? alpha_i / (static_cast<double>(M) * ni) : 0.0;
        break;
      case Normalization::Raw:
        w.elbo[i] = 1.0;
        w.aug[i] = alpha_i;
        break;
    }
  }
  return w;
}

ElboBreakdown sgvb_dataset_estimate(const SsmtlModel& model, const std::vector<UnitData>& units,
                                    const ObjectiveConfig& config, Rng& rng) {
  config.validate();
  const auto& d = model.dims();
  const std::size_t M = units.size();
  const std::size_t S = config.mc_samples;
  if (M == 0) throw std::invalid_argument("sgvb_dataset_estimate: no units");

  std::vector<std::size_t> ctx_rows(M);
  std::vector<double> eps_c;
  eps_c.reserve(M * d.K);

  // Unlabeled rows (per sample), labeled rows (per sample), augmented rows (once).
  std::vector<double> xu, eyu, ezu, scale_u;
  std::vector<std::size_t> unit_u;
  std::vector<double> xl, yl, ezl, scale_l;
  std::vector<std::size_t> unit_l;
  std::vector<double> xa, ya, scale_a;
  std::vector<std::size_t> unit_a;
  std::vector<std::size_t> pop_l(M), pop_u(M);

  for (std::size_t i = 0; i < M; ++i) {
    const auto& u = units[i];
    if (u.context_row >= model.num_units()) {
      throw std::out_of_range("unit " + std::to_string(i) + " refers to context row " +
                              std::to_string(u.context_row) + " but the model has " +
                              std::to_string(model.num_units()));
    }
    ctx_rows[i] = u.context_row;
    const std::size_t nl = checked_rows(u.x_labeled, d.Dx, "labeled x");
    const std::size_t nu = checked_rows(u.x_unlabeled, d.Dx, "unlabeled x");
    if (checked_rows(u.y_labeled, d.Dy, "labeled y") != nl) {
      throw ShapeError("labeled y", Shape{u.y_labeled.size()}, Shape{nl, d.Dy});
    }
    pop_l[i] = u.population_labeled ? u.population_labeled : nl;
    pop_u[i] = u.population_unlabeled ? u.population_unlabeled : nu;
    const double su = nu ? static_cast<double>(pop_u[i]) / static_cast<double>(nu) : 0.0;
    const double sl = nl ? static_cast<double>(pop_l[i]) / static_cast<double>(nl) : 0.0;

    for (std::size_t k = 0; k < d.K; ++k) eps_c.push_back(rng.normal());
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t j = 0; j < nu; ++j) {
        xu.insert(xu.end(), u.x_unlabeled.begin() + static_cast<std::ptrdiff_t>(j * d.Dx),
                  u.x_unlabeled.begin() + static_cast<std::ptrdiff_t>((j + 1) * d.Dx));
        for (std::size_t k = 0; k < d.Dy; ++k) eyu.push_back(rng.normal());
        for (std::size_t k = 0; k < d.D; ++k) ezu.push_back(rng.normal());
        unit_u.push_back(i);
        scale_u.push_back(su / static_cast<double>(S));
      }
      for (std::size_t j = 0; j < nl; ++j) {
        xl.insert(xl.end(), u.x_labeled.begin() + static_cast<std::ptrdiff_t>(j * d.Dx),
                  u.x_labeled.begin() + static_cast<std::ptrdiff_t>((j + 1) * d.Dx));
        yl.insert(yl.end(), u.y_labeled.begin() + static_cast<std::ptrdiff_t>(j * d.Dy),
                  u.y_labeled.begin() + static_cast<std::ptrdiff_t>((j + 1) * d.Dy));
        for (std::size_t k = 0; k < d.D; ++k) ezl.push_back(rng.normal());
        unit_l.push_back(i);
        scale_l.push_back(sl / static_cast<double>(S));
      }
    }
    xa.insert(xa.end(), u.x_labeled.begin(), u.x_labeled.end());
    ya.insert(ya.end(), u.y_labeled.begin(), u.y_labeled.end());
    for (std::size_t j = 0; j < nl; ++j) {
      unit_a.push_back(i);
      scale_a.push_back(sl);
    }
  }

  const auto& ctx = model.contexts();
  const Tensor m = gather_rows(ctx.mean, ctx_rows);
  const Tensor log_s = gather_rows(ctx.clamped_log_std(), ctx_rows);
  const Tensor c_tilde = m + exp(log_s) * Tensor({M, d.K}, std::move(eps_c));

  ElboBreakdown out;
  if (!unit_u.empty()) {
    const std::size_t R = unit_u.size();
    const Tensor rows = unlabeled_rows(model, matrix(std::move(xu), d.Dx),
                                       gather_rows(c_tilde, unit_u),
                                       matrix(std::move(eyu), d.Dy), matrix(std::move(ezu), d.D));
    out.unit_unlabeled = segment_sum(rows * Tensor({R}, std::move(scale_u)), unit_u, M);
  } else {
    out.unit_unlabeled = Tensor::zeros({M});
  }
  if (!unit_l.empty()) {
    const std::size_t R = unit_l.size();
    const Tensor rows = labeled_rows(model, matrix(std::move(xl), d.Dx),
                                     matrix(std::move(yl), d.Dy), gather_rows(c_tilde, unit_l),
                                     matrix(std::move(ezl), d.D));
    out.unit_labeled = segment_sum(rows * Tensor({R}, std::move(scale_l)), unit_l, M);
    const std::size_t Ra = unit_a.size();
    const Tensor arows = aug_rows(model, matrix(std::move(xa), d.Dx), matrix(std::move(ya), d.Dy),
                                  gather_rows(c_tilde, unit_a));
    out.unit_aug = segment_sum(arows * Tensor({Ra}, std::move(scale_a)), unit_a, M);
  } else {
    out.unit_labeled = Tensor::zeros({M});
    out.unit_aug = Tensor::zeros({M});
  }
  out.unit_kl = 0.5 * add_scalar(sum_rows(square(m) + exp(2.0 * log_s) - 2.0 * log_s),
                                 -static_cast<double>(d.K));

  const auto w = objective_weights(pop_l, pop_u, config);
  out.elbo_weights = w.elbo;
  out.aug_weights = w.aug;
  const Tensor we({M}, w.elbo);
  const Tensor wa({M}, w.aug);
  out.unlabeled_term = sum(out.unit_unlabeled * we);
  out.labeled_term = sum(out.unit_labeled * we);
  out.kl_context_term = sum(out.unit_kl * we);
  out.aug_likelihood_term = sum(out.unit_aug * wa);
  out.total = out.unlabeled_term + out.labeled_term - out.kl_context_term + out.aug_likelihood_term;
  return out;
}

Tensor loss_for_training(const ElboBreakdown& breakdown) { return neg(breakdown.total); }

}  // namespace ssmtl
