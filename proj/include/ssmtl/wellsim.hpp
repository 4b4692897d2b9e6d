#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmtl/data.hpp"
#include "ssmtl/rng.hpp"

namespace ssmtl {

// Lumped constants of the choke/pipe model:
//   Q^2 = -k1 u^2 + k2 u^2 p,  p = k3 - k4 Q^2
struct WellParams {
  double k1 = 0.1;
  double k2 = 0.01;
  double k3 = 60.0;
  double k4 = 0.005;
};

struct WellObservation {
  double u = 0.0;
  double p = 0.0;
  std::optional<double> Q;
};

// Q^2 = a0 + a1 u^2 p,  p = b0 + b1 Q^2
struct LsTheta {
  double a0 = 0.0;
  double a1 = 0.0;
  double b0 = 0.0;
  double b1 = 0.0;
};

struct LsSemiResult {
  double a0 = 0.0;
  double a1 = 0.0;
  double c0 = 0.0;  // b0 + a0 b1
  double c1 = 0.0;  // a1 b1
};

class WellSimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LsRankError : public std::runtime_error {
 public:
  LsRankError(const std::string& stage, long rank, long needed);
  long rank() const { return rank_; }

 private:
  long rank_;
};

double mean_pressure(const WellParams& k, double u);
// Throws WellSimError if the radicand is negative.
double mean_flow(const WellParams& k, double u);

// Exact LS parameters of the generator; defined only for k1 == 0.
LsTheta ls_theta_from_params(const WellParams& k);

// Noise-free observation of the LS model family at choke opening u.
WellObservation simulate_ls_model(const LsTheta& theta, double u);

// Draws observations per the generator; Q of every observation is present.
// Non-positive noisy Q values are redrawn.
std::vector<WellObservation> generate_unit(const WellParams& params, std::size_t n,
                                           double sigma_p, double sigma_q, Rng& rng);
std::vector<WellObservation> generate_unit(const WellParams& params, std::size_t n,
                                           double sigma_p, double sigma_q, std::uint64_t seed);

// Standard deviations of the noise-free pressure and flow over a uniform grid of u.
std::pair<double, double> signal_std(const WellParams& params);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct FleetConfig {
  std::size_t units = 20;
  std::size_t n_labeled = 5;
  std::size_t n_unlabeled = 100;
  std::size_t n_test = 100;
  Range k1{0.05, 0.2};
  Range k2{0.008, 0.02};
  Range k3{40.0, 80.0};
  Range k4{0.001, 0.01};
  // Noise std as a fraction of each unit's noise-free signal std.
  double noise_fraction = 0.01;
  std::size_t max_redraws = 1000;
  std::uint64_t seed = 1;
  std::string id_prefix = "unit";

  void validate() const;
  nlohmann::json to_json() const;
};

// Log-uniform in [lo, hi]; lo == hi returns lo (zero allowed only then).
double sample_range(const Range& r, Rng& rng);
WellParams sample_params(const FleetConfig& cfg, Rng& rng);

MultiUnitDataset generate_fleet(const FleetConfig& cfg);

struct LsOptions {
  // Return the minimum-norm solution instead of failing on rank deficiency.
  bool allow_rank_deficient = false;
};

LsTheta ls_supervised(const std::vector<WellObservation>& labeled, LsOptions opts = {});
LsSemiResult ls_semisupervised(const std::vector<WellObservation>& unlabeled,
                               const std::vector<WellObservation>& labeled,
                               LsOptions opts = {});

}  // namespace ssmtl
