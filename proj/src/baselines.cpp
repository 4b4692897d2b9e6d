#include "ssmtl/baselines.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <iostream>
#include <limits>

namespace ssmtl {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

Tensor matrix(std::vector<double> v, std::size_t cols) {
  const std::size_t rows = cols ? v.size() / cols : 0;
  return Tensor({rows, cols}, std::move(v));
}

}  // namespace

// ---------------------------------------------------------------------------
// MtlModel

MtlModel::MtlModel(const MtlInit& init) : K_(init.K), Dx_(init.Dx), Dy_(init.Dy) {
  std::vector<std::size_t> widths{Dx_ + K_};
  widths.insert(widths.end(), init.hidden.begin(), init.hidden.end());
  widths.push_back(Dy_);
  f_ = Mlp::he_init(widths, Rng(init.seed).split(0).next_u64());
  log_sigma_ = Tensor::zeros({1}, true);
  contexts_ = ContextTable::fresh(init.unit_ids, K_, init.context_log_std);
}

MtlModel::MtlModel(Mlp f, Tensor log_sigma, ContextTable contexts, std::size_t K,
                   std::size_t Dx, std::size_t Dy)
    : f_(std::move(f)),
      log_sigma_(std::move(log_sigma)),
      contexts_(std::move(contexts)),
      K_(K),
      Dx_(Dx),
      Dy_(Dy) {
  if (f_.in_width() != Dx_ + K_ || f_.out_width() != Dy_) {
    throw std::invalid_argument("MTL network widths do not match dimensions");
  }
}

Tensor MtlModel::mean(const Tensor& x, const Tensor& c) const {
  return f_.forward(K_ ? concat_cols({x, c}) : x);
}

Prediction MtlModel::predict_y(std::span<const double> x, std::size_t unit) const {
  if (unit >= num_units()) throw std::out_of_range("unit index out of range");
  const std::size_t n = x.size() / Dx_;
  std::vector<double> cs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < K_; ++k) cs.push_back(contexts_.mean.at(unit, k));
  }
  const Tensor m = mean(matrix(std::vector<double>(x.begin(), x.end()), Dx_),
                        Tensor({n, K_}, std::move(cs)));
  Prediction p;
  p.mean = m.to_vector();
  p.std.assign(p.mean.size(), std::exp(log_sigma_.item()));
  return p;
}

std::vector<Tensor> MtlModel::network_parameters() const {
  auto p = f_.parameters();
  p.push_back(log_sigma_);
  return p;
}

std::vector<Tensor> MtlModel::context_parameters() const {
  return {contexts_.mean, contexts_.log_std};
}

std::vector<Tensor> MtlModel::parameters() const {
  auto p = network_parameters();
  for (auto& t : context_parameters()) p.push_back(t);
  return p;
}

MtlModel MtlModel::copy(bool networks_trainable, bool contexts_trainable) const {
  return MtlModel(f_.copy(networks_trainable),
                  log_sigma_.detach().set_requires_grad(networks_trainable),
                  contexts_.copy(contexts_trainable), K_, Dx_, Dy_);
}

MtlModel MtlModel::with_contexts(ContextTable contexts) const {
  return MtlModel(f_, log_sigma_, std::move(contexts), K_, Dx_, Dy_);
}

void MtlModel::to_store(ParameterStore& store) const {
  store.set_attr("model.kind", "mtl");
  store.set_attr("dims.K", std::to_string(K_));
  store.set_attr("dims.Dx", std::to_string(Dx_));
  store.set_attr("dims.Dy", std::to_string(Dy_));
  f_.save(store, "f");
  store.put("log_sigma", log_sigma_);
  save_contexts(store, contexts_);
}

MtlModel MtlModel::from_store(const ParameterStore& store) {
  if (store.attr("model.kind") != "mtl") {
    throw CheckpointError("checkpoint holds a '" + store.attr("model.kind") + "' model");
  }
  return MtlModel(Mlp::load(store, "f"), store.get("log_sigma").detach().set_requires_grad(true),
                  load_contexts(store), std::stoull(store.attr("dims.K")),
                  std::stoull(store.attr("dims.Dx")), std::stoull(store.attr("dims.Dy")));
}

Tensor mtl_loss(const MtlModel& model, const std::vector<UnitData>& units, Rng& rng) {
  const std::size_t K = model.K(), Dx = model.Dx(), Dy = model.Dy();
  const std::size_t M = units.size();
  std::vector<std::size_t> ctx_rows, row_unit;
  std::vector<double> eps, xs, ys;
  for (std::size_t i = 0; i < M; ++i) {
    const auto& u = units[i];
    if (u.context_row >= model.num_units()) throw std::out_of_range("unit without context");
    ctx_rows.push_back(u.context_row);
    for (std::size_t k = 0; k < K; ++k) eps.push_back(rng.normal());
    xs.insert(xs.end(), u.x_labeled.begin(), u.x_labeled.end());
    ys.insert(ys.end(), u.y_labeled.begin(), u.y_labeled.end());
    for (std::size_t j = 0; j < u.x_labeled.size() / Dx; ++j) row_unit.push_back(i);
  }
  const std::size_t n = row_unit.size();
  if (n == 0) throw std::invalid_argument("mtl_loss: no labeled data");

  const auto& ctx = model.contexts();
  const Tensor m = gather_rows(ctx.mean, ctx_rows);
  const Tensor log_s = gather_rows(ctx.clamped_log_std(), ctx_rows);
  const Tensor c_tilde = m + exp(log_s) * Tensor({M, K}, std::move(eps));
  const Tensor mu = model.mean(matrix(std::move(xs), Dx), gather_rows(c_tilde, row_unit));
  const Tensor ls = clamp(model.log_sigma(), GaussianHead::kLogStdMin, GaussianHead::kLogStdMax);
  const Tensor r = (matrix(std::move(ys), Dy) - mu) * exp(neg(ls));
  // -sum log N(y; mu, sigma^2)
  const Tensor nll = add_scalar(0.5 * sum(square(r)) + static_cast<double>(n * Dy) * sum(ls),
                                kHalfLog2Pi * static_cast<double>(n * Dy));
  const Tensor kl =
      0.5 * add_scalar(sum(square(m) + exp(2.0 * log_s) - 2.0 * log_s),
                       -static_cast<double>(M * K));
  return (nll + kl) * (1.0 / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// STL

namespace {

double sqdist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

}  // namespace

std::vector<double> StlModel::predict(std::span<const double> x) const {
  const std::size_t n = dual.size();
  const std::size_t m = x.size() / dx;
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      s += dual[a] * std::exp(-gamma * sqdist(x.data() + i * dx, support.data() + a * dx, dx));
    }
    out[i] = s;
  }
  return out;
}

StlModel stl_fit(std::span<const double> x, std::span<const double> y, std::size_t dx,
                 double gamma, double lambda) {
  const std::size_t n = y.size();
  if (n == 0 || x.size() != n * dx) throw std::invalid_argument("stl_fit needs >= 1 labeled pair");
  Eigen::MatrixXd G(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      G(a, b) = std::exp(-gamma * sqdist(x.data() + a * dx, x.data() + b * dx, dx));
    }
    G(a, a) += lambda;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(G);
  if (!lu.isInvertible()) {
    throw SingularSystemError("kernel system is singular (duplicate inputs?); use lambda > 0");
  }
  const Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(n));
  const Eigen::VectorXd alpha = lu.solve(rhs);
  StlModel m;
  m.dx = dx;
  m.support.assign(x.begin(), x.end());
  m.dual.assign(alpha.data(), alpha.data() + n);
  m.gamma = gamma;
  m.lambda = lambda;
  return m;
}

StlSearchResult stl_hyperparam_search(std::span<const double> x, std::span<const double> y,
                                      std::size_t dx, const StlGrid& grid,
                                      double validation_fraction, std::uint64_t seed) {
  StlSearchResult res;
  const std::size_t n = y.size();
  if (n < 4) {
    std::cerr << "warning: " << n << " labeled points is too few for a validation split; "
              << "using gamma=" << grid.default_gamma << " lambda=" << grid.default_lambda << '\n';
    res.gamma = grid.default_gamma;
    res.lambda = grid.default_lambda;
    res.fallback = true;
    return res;
  }
  Rng rng(seed);
  const auto perm = rng.permutation(n);
  std::size_t n_val = static_cast<std::size_t>(std::lround(validation_fraction * static_cast<double>(n)));
  n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  res.validation_index.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  res.train_index.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());

  auto pick = [&](const std::vector<std::size_t>& idx, std::vector<double>& xs, std::vector<double>& ys) {
    for (auto i : idx) {
      xs.insert(xs.end(), x.begin() + static_cast<std::ptrdiff_t>(i * dx),
                x.begin() + static_cast<std::ptrdiff_t>((i + 1) * dx));
      ys.push_back(y[i]);
    }
  };
  std::vector<double> xt, yt, xv, yv;
  pick(res.train_index, xt, yt);
  pick(res.validation_index, xv, yv);

  res.validation_mse = std::numeric_limits<double>::infinity();
  for (double g : grid.gammas) {
    for (double l : grid.lambdas) {
      double mse = std::numeric_limits<double>::infinity();
      try {
        const auto pred = stl_fit(xt, yt, dx, g, l).predict(xv);
        mse = 0.0;
        for (std::size_t i = 0; i < yv.size(); ++i) mse += (pred[i] - yv[i]) * (pred[i] - yv[i]);
        mse /= static_cast<double>(yv.size());
      } catch (const SingularSystemError&) {
      }
      res.cell_mse.push_back(mse);
      if (mse < res.validation_mse) {
        res.validation_mse = mse;
        res.gamma = g;
        res.lambda = l;
      }
    }
  }
  return res;
}

}  // namespace ssmtl
