#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmtl/baselines.hpp"
#include "ssmtl/data.hpp"
#include "ssmtl/dlvm.hpp"
#include "ssmtl/objective.hpp"

namespace ssmtl {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Metrics

// 100 * mean(|pred - truth| / |truth|). Throws on a zero truth.
double mape(std::span<const double> predictions, std::span<const double> truths);
// Linear interpolation between closest ranks; q in [0, 100].
double percentile(std::vector<double> values, double q);

struct Aggregate {
  double mean = 0.0;
  double p10 = 0.0;
  double p50 = 0.0;
  double p90 = 0.0;
};
Aggregate aggregate(const std::vector<double>& values);

// ---------------------------------------------------------------------------
// Multi-unit training

enum class ModelKind { STL, MTL, SSMTL };
std::string to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& s);

// Defaults are sized for a 20-unit fleet on one desktop core.
struct TrainConfig {
  double lr = 1e-3;
  // Context parameters use lr * context_lr_scale.
  double context_lr_scale = 10.0;
  // Std of every fresh context posterior. Wide starts let the networks learn
  // to ignore c on some seeds.
  double context_init_std = 0.1;
  std::size_t max_steps = 8000;
  std::size_t eval_every = 10;
  std::size_t patience = 200;  // evaluations without improvement
  double validation_fraction = 0.2;
  std::size_t batch_size = 10;  // points per unit and split per step; 0 = full batch
  std::size_t divergence_limit = 10;
  std::size_t repetitions = 3;
  ModelDims dims;
  std::vector<std::size_t> hidden{64, 64};
  ObjectiveConfig objective{100.0, std::nullopt};
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainRecord {
  std::size_t step = 0;
  double total = 0.0;
  double unlabeled = 0.0;
  double labeled = 0.0;
  double kl = 0.0;
  double aug = 0.0;
  std::optional<double> validation;
  double wall_time = 0.0;

  nlohmann::json to_json() const;
};

// Receives one record per optimization step.
using TrainLogger = std::function<void(const TrainRecord&)>;

struct TrainedSsmtl {
  SsmtlModel model;
  Standardizer standardizer;
  std::size_t best_step = 0;
  double best_validation = 0.0;
  std::size_t steps_run = 0;
};

struct TrainedMtl {
  MtlModel model;
  Standardizer standardizer;
  std::size_t best_step = 0;
  double best_validation = 0.0;
  std::size_t steps_run = 0;
};

struct TrainedStl {
  std::vector<StlModel> units;
  std::vector<StlSearchResult> searches;
  Standardizer standardizer;
};

// Splits each unit's labeled pairs into training and validation (seeded).
struct ValidationSplit {
  MultiUnitDataset train;
  std::vector<std::vector<double>> x_val;  // per unit
  std::vector<std::vector<double>> y_val;
};
ValidationSplit split_validation(const MultiUnitDataset& standardized, double fraction,
                                 std::uint64_t seed);

TrainedSsmtl train_ssmtl(const MultiUnitDataset& data, const TrainConfig& cfg,
                         const TrainLogger& log = {});
TrainedMtl train_mtl(const MultiUnitDataset& data, const TrainConfig& cfg,
                     const TrainLogger& log = {});
TrainedStl train_stl(const MultiUnitDataset& data, const StlGrid& grid,
                     double validation_fraction, std::uint64_t seed);

// Predictions in original units for unit `unit` of the dataset the model was trained on.
std::vector<double> predict_original(const TrainedSsmtl& t, std::span<const double> x_raw,
                                     std::size_t unit);
std::vector<double> predict_original(const TrainedMtl& t, std::span<const double> x_raw,
                                     std::size_t unit);
std::vector<double> predict_original(const TrainedStl& t, std::span<const double> x_raw,
                                     std::size_t unit);

// Per-unit test MAPE.
template <class Trained>
std::vector<double> test_mape(const Trained& t, const MultiUnitDataset& data) {
  std::vector<double> out;
  for (std::size_t i = 0; i < data.units.size(); ++i) {
    const auto& u = data.units[i];
    out.push_back(mape(predict_original(t, u.x_test, i), u.y_test));
  }
  return out;
}

void save_trained(const TrainedSsmtl& t, const std::filesystem::path& path);
void save_trained(const TrainedMtl& t, const std::filesystem::path& path);
void save_trained(const TrainedStl& t, const std::vector<std::string>& ids,
                  const std::filesystem::path& path);
// Reads any of the three kinds.
struct LoadedModel {
  ModelKind kind = ModelKind::SSMTL;
  std::optional<TrainedSsmtl> ssmtl;
  std::optional<TrainedMtl> mtl;
  std::optional<TrainedStl> stl;
  std::vector<std::string> unit_ids;
};
LoadedModel load_trained(const std::filesystem::path& path);
// Per-unit test MAPE of a loaded model on the units of `data` it knows.
std::vector<double> evaluate_loaded(const LoadedModel& m, const MultiUnitDataset& data);

// ---------------------------------------------------------------------------
// Finetuning

enum class FinetuneMode { Supervised, Unsupervised, SemiSupervised };
enum class ContextInit { Zero, MeanOfUnits };
enum class FinetuneOptimizer { Sgd, Adam };
std::string to_string(FinetuneMode m);
FinetuneMode parse_finetune_mode(const std::string& s);
std::string to_string(ContextInit c);
std::string to_string(FinetuneOptimizer o);
FinetuneOptimizer parse_finetune_optimizer(const std::string& s);
ContextInit parse_context_init(const std::string& s);

struct FinetuneConfig {
  FinetuneMode mode = FinetuneMode::SemiSupervised;
  // Plain SGD at lr 1e-4 diverges on trained models whose predictive stds are
  // small; Adam bounds the per-step move of the context mean.
  FinetuneOptimizer optimizer = FinetuneOptimizer::Adam;
  std::size_t epochs = 300;
  double lr = 1e-2;
  ContextInit init = ContextInit::Zero;
  double variance = 0.1;  // fixed variance of q(c)
  ObjectiveConfig objective{1.0, std::nullopt, 5, Normalization::Raw};
  std::uint64_t seed = 0;
};

struct FinetuneResult {
  ContextTable context;  // one row
  std::vector<double> objective_trace;
};

// Learns only the context mean of a new unit with frozen networks. `unit` is in
// original units; it is standardized with the trained model's standardizer.
FinetuneResult finetune_unit(const TrainedSsmtl& trained, const UnitSplit& unit,
                             const FinetuneConfig& cfg);
// Test predictions (original units) for a finetuned context.
std::vector<double> predict_with_context(const TrainedSsmtl& trained, const ContextTable& ctx,
                                         std::span<const double> x_raw);
// Context with m = init policy and the fixed variance, without learning.
ContextTable initial_context(const TrainedSsmtl& trained, const std::string& id,
                             const FinetuneConfig& cfg);

// ---------------------------------------------------------------------------
// Experiment matrix

struct MatrixConfig {
  std::vector<double> ratios{1, 5, 20};
  std::vector<ModelKind> models{ModelKind::STL, ModelKind::MTL, ModelKind::SSMTL};
  std::size_t n_labeled = 5;
  std::size_t jobs = 1;
};

struct CellReport {
  ModelKind model = ModelKind::SSMTL;
  std::optional<double> ratio;  // SSMTL only
  std::vector<std::string> unit_ids;
  std::vector<double> per_unit_mape;  // averaged over repetitions
  Aggregate summary;
  std::size_t repetitions = 0;
  std::string status = "ok";
  std::string error;
  double wall_time = 0.0;

  std::string label() const;
  // Without timing fields.
  nlohmann::json to_json(const std::string& fingerprint) const;
};

struct MatrixOutputs {
  std::optional<std::filesystem::path> dir;  // report.jsonl, report.csv, timing.json, logs
};

std::vector<CellReport> run_matrix(const MultiUnitDataset& data, const MatrixConfig& mcfg,
                                   const TrainConfig& tcfg, const StlGrid& grid,
                                   double stl_validation_fraction,
                                   const MatrixOutputs& outputs = {});

void write_reports(const std::vector<CellReport>& cells, const std::string& fingerprint,
                   const std::filesystem::path& dir);
std::string format_table(const std::vector<CellReport>& cells);

// 64-bit FNV-1a of a string, as 16 hex digits.
std::string fingerprint(const std::string& text);

}  // namespace ssmtl
