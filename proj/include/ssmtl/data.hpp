#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmtl/objective.hpp"
#include "ssmtl/rng.hpp"

namespace ssmtl {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One unit's observations. Inputs are row-major [n x Dx], targets [n x Dy].
struct UnitSplit {
  std::string id;
  std::vector<double> x_labeled;
  std::vector<double> y_labeled;
  std::vector<double> x_unlabeled;
  std::vector<double> x_test;
  std::vector<double> y_test;
  std::vector<std::uint64_t> rows_labeled;
  std::vector<std::uint64_t> rows_unlabeled;
  std::vector<std::uint64_t> rows_test;

  std::size_t n_labeled(std::size_t dx) const { return x_labeled.size() / dx; }
  std::size_t n_unlabeled(std::size_t dx) const { return x_unlabeled.size() / dx; }
  std::size_t n_test(std::size_t dx) const { return x_test.size() / dx; }
};

struct MultiUnitDataset {
  std::size_t Dx = 2;
  std::size_t Dy = 1;
  std::vector<UnitSplit> units;
  nlohmann::json metadata = nlohmann::json::object();

  std::vector<std::string> unit_ids() const;
  std::size_t index_of(const std::string& id) const;
  // Throws if any training row id also tags a test row.
  void check_no_leakage() const;
};

// Affine feature/target scaling fitted on training data only.
struct Standardizer {
  std::vector<double> x_mean, x_std;
  std::vector<double> y_mean, y_std;

  // x statistics over labeled and unlabeled training inputs of all units;
  // y statistics over labeled training targets.
  static Standardizer fit(const MultiUnitDataset& data);
  static Standardizer identity(std::size_t dx, std::size_t dy);

  std::vector<double> transform_x(const std::vector<double>& x) const;
  std::vector<double> transform_y(const std::vector<double>& y) const;
  std::vector<double> inverse_y(const std::vector<double>& y) const;
  std::vector<double> inverse_y_std(const std::vector<double>& s) const;

  nlohmann::json to_json() const;
  static Standardizer from_json(const nlohmann::json& j);
};

// Copy of a dataset with every input and target standardized.
MultiUnitDataset standardize(const MultiUnitDataset& data, const Standardizer& s);

// Objective inputs for each unit (context row = position in the dataset).
std::vector<UnitData> to_unit_data(const MultiUnitDataset& standardized);

// Keeps the first `n_labeled` labeled and `n_unlabeled` unlabeled points of each unit.
MultiUnitDataset truncate_training(const MultiUnitDataset& data, std::size_t n_labeled,
                                   std::size_t n_unlabeled);

// CSV: unit_id,split,u,p,Q with Q empty for unlabeled rows. Row ids are implied
// by file order. Values are written with 17 significant digits.
void write_dataset_csv(const MultiUnitDataset& data, const std::filesystem::path& path);
MultiUnitDataset read_dataset_csv(const std::filesystem::path& path);

// Sidecar metadata next to a CSV: <stem>.meta.json
std::filesystem::path metadata_path(const std::filesystem::path& csv);
void write_dataset(const MultiUnitDataset& data, const std::filesystem::path& csv);
MultiUnitDataset read_dataset(const std::filesystem::path& csv);

}  // namespace ssmtl
