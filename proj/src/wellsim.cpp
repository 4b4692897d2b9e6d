#include "ssmtl/wellsim.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>

namespace ssmtl {

namespace {

constexpr double kRankThreshold = 1e-10;

// Column-equilibrated least squares via a complete orthogonal decomposition.
Eigen::VectorXd solve_ls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                         const std::string& stage, const LsOptions& opts) {
  Eigen::VectorXd scale(A.cols());
  for (Eigen::Index j = 0; j < A.cols(); ++j) {
    const double n = A.col(j).norm();
    scale(j) = n > 0.0 ? 1.0 / n : 1.0;
  }
  const Eigen::MatrixXd As = A * scale.asDiagonal();
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
  cod.setThreshold(kRankThreshold);
  cod.compute(As);
  if (cod.rank() < A.cols() && !opts.allow_rank_deficient) {
    throw LsRankError(stage, static_cast<long>(cod.rank()), static_cast<long>(A.cols()));
  }
  return scale.asDiagonal() * cod.solve(b);
}

std::string range_text(const char* name, const Range& r) {
  std::ostringstream os;
  os << name << " in [" << r.lo << ", " << r.hi << "]";
  return os.str();
}

}  // namespace

LsRankError::LsRankError(const std::string& stage, long rank, long needed)
    : std::runtime_error(stage + " system is rank deficient: rank " + std::to_string(rank) +
                         " < " + std::to_string(needed)),
      rank_(rank) {}

double mean_pressure(const WellParams& k, double u) {
  const double u2 = u * u;
  return (k.k3 + k.k1 * k.k4 * u2) / (1.0 + k.k2 * k.k4 * u2);
}

double mean_flow(const WellParams& k, double u) {
  const double u2 = u * u;
  const double radicand = -k.k1 * u2 + k.k2 * u2 * mean_pressure(k, u);
  if (radicand < 0.0) {
    throw WellSimError("negative flow radicand at u=" + std::to_string(u));
  }
  return std::sqrt(radicand);
}

LsTheta ls_theta_from_params(const WellParams& k) {
  if (k.k1 != 0.0) {
    throw std::invalid_argument("the LS model family contains the generator only when k1 == 0");
  }
  return {0.0, k.k2, k.k3, -k.k4};
}

WellObservation simulate_ls_model(const LsTheta& t, double u) {
  const double c0 = t.b0 + t.a0 * t.b1;
  const double c1 = t.a1 * t.b1;
  const double denom = 1.0 - c1 * u * u;
  if (!(denom > 0.0)) throw WellSimError("LS model has no steady state at u=" + std::to_string(u));
  WellObservation obs;
  obs.u = u;
  obs.p = c0 / denom;
  const double q2 = t.a0 + t.a1 * u * u * obs.p;
  if (q2 < 0.0) throw WellSimError("LS model gives negative Q^2 at u=" + std::to_string(u));
  obs.Q = std::sqrt(q2);
  return obs;
}

std::vector<WellObservation> generate_unit(const WellParams& params, std::size_t n,
                                           double sigma_p, double sigma_q, Rng& rng) {
  if (n < 1) throw std::invalid_argument("generate_unit needs n >= 1");
  if (sigma_p < 0.0 || sigma_q < 0.0) throw std::invalid_argument("noise levels must be >= 0");
  std::vector<WellObservation> out;
  out.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    WellObservation obs;
    obs.u = rng.uniform(0.0, 100.0);
    const double mu_p = mean_pressure(params, obs.u);
    obs.p = mu_p + sigma_p * rng.normal();
    const double mu_q = mean_flow(params, obs.u);
    double q = mu_q + sigma_q * rng.normal();
    for (int tries = 0; q <= 0.0; ++tries) {
      if (tries == 1000) throw WellSimError("could not draw a positive flow");
      q = mu_q + sigma_q * rng.normal();
    }
    obs.Q = q;
    out.push_back(obs);
  }
  return out;
}

std::vector<WellObservation> generate_unit(const WellParams& params, std::size_t n,
                                           double sigma_p, double sigma_q, std::uint64_t seed) {
  Rng rng(seed);
  return generate_unit(params, n, sigma_p, sigma_q, rng);
}

std::pair<double, double> signal_std(const WellParams& params) {
  constexpr int kGrid = 1001;
  double sp = 0, sp2 = 0, sq = 0, sq2 = 0;
  for (int i = 0; i < kGrid; ++i) {
    const double u = 100.0 * i / (kGrid - 1);
    const double p = mean_pressure(params, u);
    const double q = mean_flow(params, u);
    sp += p;
    sp2 += p * p;
    sq += q;
    sq2 += q * q;
  }
  const double n = kGrid;
  return {std::sqrt(std::max(sp2 / n - (sp / n) * (sp / n), 0.0)),
          std::sqrt(std::max(sq2 / n - (sq / n) * (sq / n), 0.0))};
}

void FleetConfig::validate() const {
  for (const auto& [name, r] : {std::pair{"k1", k1}, {"k2", k2}, {"k3", k3}, {"k4", k4}}) {
    const bool degenerate_zero = r.lo == 0.0 && r.hi == 0.0;
    if (!degenerate_zero && !(r.lo > 0.0 && r.hi >= r.lo && std::isfinite(r.hi))) {
      throw std::invalid_argument("invalid parameter range: " + range_text(name, r) +
                                  " (need 0 < lo <= hi, or lo == hi == 0)");
    }
  }
  if (!(noise_fraction >= 0.0)) throw std::invalid_argument("noise_fraction must be >= 0");
  if (max_redraws < 1) throw std::invalid_argument("max_redraws must be >= 1");
}

nlohmann::json FleetConfig::to_json() const {
  auto range = [](const Range& r) { return nlohmann::json::array({r.lo, r.hi}); };
  return {{"units", units},
          {"labeled", n_labeled},
          {"unlabeled", n_unlabeled},
          {"test", n_test},
          {"k1", range(k1)},
          {"k2", range(k2)},
          {"k3", range(k3)},
          {"k4", range(k4)},
          {"noise_fraction", noise_fraction},
          {"max_redraws", max_redraws},
          {"seed", seed},
          {"id_prefix", id_prefix}};
}

double sample_range(const Range& r, Rng& rng) {
  if (r.lo == r.hi) return r.lo;
  return std::exp(rng.uniform(std::log(r.lo), std::log(r.hi)));
}

WellParams sample_params(const FleetConfig& cfg, Rng& rng) {
  for (std::size_t attempt = 0; attempt < cfg.max_redraws; ++attempt) {
    WellParams k{sample_range(cfg.k1, rng), sample_range(cfg.k2, rng),
                 sample_range(cfg.k3, rng), sample_range(cfg.k4, rng)};
    const double p_end = mean_pressure(k, 100.0);
    // Pressure stays on its plateau [k3/2, k3]; the flow radicand stays positive.
    if (p_end < 0.5 * k.k3) continue;
    if (-k.k1 + k.k2 * p_end <= 0.0) continue;
    return k;
  }
  throw WellSimError("parameter rejection budget of " + std::to_string(cfg.max_redraws) +
                     " draws exhausted for ranges " + range_text("k1", cfg.k1) + ", " +
                     range_text("k2", cfg.k2) + ", " + range_text("k3", cfg.k3) + ", " +
                     range_text("k4", cfg.k4));
}

MultiUnitDataset generate_fleet(const FleetConfig& cfg) {
  cfg.validate();
  MultiUnitDataset data;
  data.Dx = 2;
  data.Dy = 1;
  const Rng master(cfg.seed);
  nlohmann::json params_json = nlohmann::json::array();
  std::uint64_t row = 0;
  const int width = static_cast<int>(std::to_string(cfg.units > 0 ? cfg.units - 1 : 0).size());
  for (std::size_t i = 0; i < cfg.units; ++i) {
    Rng rng = master.split(i);
    const WellParams k = sample_params(cfg, rng);
    const auto [sd_p, sd_q] = signal_std(k);
    const double sigma_p = cfg.noise_fraction * sd_p;
    const double sigma_q = cfg.noise_fraction * sd_q;
    const std::size_t total = cfg.n_labeled + cfg.n_unlabeled + cfg.n_test;
    std::vector<WellObservation> obs;
    if (total > 0) obs = generate_unit(k, total, sigma_p, sigma_q, rng);

    UnitSplit unit;
    std::string idx = std::to_string(i);
    unit.id = cfg.id_prefix + std::string(static_cast<std::size_t>(width) - idx.size(), '0') + idx;
    for (std::size_t j = 0; j < total; ++j) {
      const auto& o = obs[j];
      if (j < cfg.n_labeled) {
        unit.x_labeled.insert(unit.x_labeled.end(), {o.u, o.p});
        unit.y_labeled.push_back(*o.Q);
        unit.rows_labeled.push_back(row++);
      } else if (j < cfg.n_labeled + cfg.n_unlabeled) {
        unit.x_unlabeled.insert(unit.x_unlabeled.end(), {o.u, o.p});
        unit.rows_unlabeled.push_back(row++);
      } else {
        unit.x_test.insert(unit.x_test.end(), {o.u, o.p});
        unit.y_test.push_back(*o.Q);
        unit.rows_test.push_back(row++);
      }
    }
    params_json.push_back({{"unit_id", unit.id},
                           {"k1", k.k1},
                           {"k2", k.k2},
                           {"k3", k.k3},
                           {"k4", k.k4},
                           {"sigma_p", sigma_p},
                           {"sigma_q", sigma_q}});
    data.units.push_back(std::move(unit));
  }
  data.metadata["generator"] = cfg.to_json();
  data.metadata["true_params"] = std::move(params_json);
  return data;
}

LsTheta ls_supervised(const std::vector<WellObservation>& labeled, LsOptions opts) {
  if (labeled.size() < 2) {
    throw std::invalid_argument("ls_supervised needs at least 2 labeled triples");
  }
  const auto n = static_cast<Eigen::Index>(labeled.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * n, 4);
  Eigen::VectorXd b(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& o = labeled[static_cast<std::size_t>(i)];
    if (!o.Q) throw std::invalid_argument("ls_supervised given an unlabeled observation");
    const double q2 = *o.Q * *o.Q;
    A(2 * i, 0) = 1.0;
    A(2 * i, 1) = o.u * o.u * o.p;
    b(2 * i) = q2;
    A(2 * i + 1, 2) = 1.0;
    A(2 * i + 1, 3) = q2;
    b(2 * i + 1) = o.p;
  }
  const auto x = solve_ls(A, b, "supervised", opts);
  return {x(0), x(1), x(2), x(3)};
}

LsSemiResult ls_semisupervised(const std::vector<WellObservation>& unlabeled,
                               const std::vector<WellObservation>& labeled, LsOptions opts) {
  if (unlabeled.size() < 2) {
    throw LsRankError("stage 1 (unlabeled)", static_cast<long>(unlabeled.size()), 2);
  }
  if (labeled.empty()) throw LsRankError("stage 2 (labeled)", 0, 2);

  const auto nu = static_cast<Eigen::Index>(unlabeled.size());
  Eigen::MatrixXd A1(nu, 2);
  Eigen::VectorXd b1(nu);
  for (Eigen::Index i = 0; i < nu; ++i) {
    const auto& o = unlabeled[static_cast<std::size_t>(i)];
    A1(i, 0) = 1.0;
    A1(i, 1) = o.u * o.u * o.p;
    b1(i) = o.p;
  }
  const auto c = solve_ls(A1, b1, "stage 1 (unlabeled)", opts);
  const double c0 = c(0), c1 = c(1);

  const auto nl = static_cast<Eigen::Index>(labeled.size());
  Eigen::MatrixXd A2(2 * nl, 2);
  Eigen::VectorXd b2(2 * nl);
  for (Eigen::Index i = 0; i < nl; ++i) {
    const auto& o = labeled[static_cast<std::size_t>(i)];
    if (!o.Q) throw std::invalid_argument("ls_semisupervised given an unlabeled triple");
    const double q2 = *o.Q * *o.Q;
    A2(2 * i, 0) = 1.0;
    A2(2 * i, 1) = o.u * o.u * o.p;
    b2(2 * i) = q2;
    A2(2 * i + 1, 0) = c1;
    A2(2 * i + 1, 1) = o.p - c0;
    b2(2 * i + 1) = c1 * q2;
  }
  const auto a = solve_ls(A2, b2, "stage 2 (labeled)", opts);
  return {a(0), a(1), c0, c1};
}

}  // namespace ssmtl
