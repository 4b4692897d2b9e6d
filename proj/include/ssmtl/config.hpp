#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "ssmtl/baselines.hpp"
#include "ssmtl/experiments.hpp"
#include "ssmtl/wellsim.hpp"

namespace ssmtl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything a CLI run needs. JSON keys mirror the field names; unknown keys
// are rejected.
//
// {
//   "seed": 1, "out": "runs/x",
//   "fleet":     {"units", "labeled", "unlabeled", "test", "k1".."k4": [lo, hi],
//                 "noise_fraction", "max_redraws", "id_prefix"},
//   "model":     {"K", "D", "hidden": [..]},
//   "objective": {"alpha", "beta" (number or null), "mc_samples",
//                 "normalization": "total_count" | "per_unit" | "raw"},
//   "train":     {"lr", "context_lr_scale", "max_steps", "eval_every", "patience",
//                 "validation_fraction",
//                 "batch_size", "repetitions", "divergence_limit"},
//   "finetune":  {"mode", "epochs", "lr", "init", "variance", "mc_samples", "alpha",
//                 "n_labeled", "n_unlabeled"},
//   "matrix":    {"ratios": [..], "models": [..], "labeled", "jobs"},
//   "stl":       {"gammas": [..], "lambdas": [..], "default_gamma", "default_lambda",
//                 "validation_fraction"}
// }
struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = "runs/default";
  FleetConfig fleet;
  TrainConfig train;
  FinetuneConfig finetune;
  std::size_t finetune_labeled = 5;
  std::size_t finetune_unlabeled = 50;
  MatrixConfig matrix;
  StlGrid stl;
  double stl_validation_fraction = 0.2;

  // Propagates `seed` into the sub-configs.
  void apply_seed(std::uint64_t s);
  void validate() const;
  nlohmann::json to_json() const;
};

RunConfig default_config();
// Overlays a JSON document on `base`. Throws ConfigError on unknown keys or bad values.
RunConfig merge_config(RunConfig base, const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);
void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& dir);

}  // namespace ssmtl
