#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ssmtl/data.hpp"
#include "ssmtl/wellsim.hpp"

using namespace ssmtl;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ssmtl_test_data_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

MultiUnitDataset small_fleet() {
  FleetConfig cfg;
  cfg.units = 3;
  cfg.n_labeled = 4;
  cfg.n_unlabeled = 6;
  cfg.n_test = 5;
  cfg.seed = 11;
  return generate_fleet(cfg);
}

}  // namespace

TEST(Standardizer, FitsTrainingStatisticsOnly) {
  MultiUnitDataset d;
  d.units.resize(1);
  d.units[0].x_labeled = {1, 10, 3, 30};
  d.units[0].y_labeled = {2, 4};
  d.units[0].x_unlabeled = {5, 50};
  d.units[0].x_test = {1000, 1000};
  d.units[0].y_test = {1000};
  const auto s = Standardizer::fit(d);
  EXPECT_DOUBLE_EQ(s.x_mean[0], 3.0);
  EXPECT_DOUBLE_EQ(s.x_mean[1], 30.0);
  EXPECT_NEAR(s.x_std[0], std::sqrt(8.0 / 3.0), 1e-12);
  EXPECT_DOUBLE_EQ(s.y_mean[0], 3.0);
  EXPECT_DOUBLE_EQ(s.y_std[0], 1.0);
}

TEST(Standardizer, RoundTripsAndSerializes) {
  const auto d = small_fleet();
  const auto s = Standardizer::fit(d);
  const auto& y = d.units[1].y_test;
  const auto back = s.inverse_y(s.transform_y(y));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(back[i], y[i], 1e-12 * std::abs(y[i]));
  const auto t = Standardizer::from_json(s.to_json());
  EXPECT_EQ(t.x_mean, s.x_mean);
  EXPECT_EQ(t.y_std, s.y_std);
  const auto z = standardize(d, s);
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& u : z.units) {
    for (std::size_t i = 0; i < u.x_labeled.size(); i += 2, ++n) acc += u.x_labeled[i];
    for (std::size_t i = 0; i < u.x_unlabeled.size(); i += 2, ++n) acc += u.x_unlabeled[i];
  }
  EXPECT_NEAR(acc / static_cast<double>(n), 0.0, 1e-12);
}

TEST(Csv, RoundTripIsExact) {
  const auto d = small_fleet();
  const auto dir = temp_dir("roundtrip");
  write_dataset(d, dir / "fleet.csv");
  const auto r = read_dataset(dir / "fleet.csv");
  ASSERT_EQ(r.units.size(), d.units.size());
  for (std::size_t i = 0; i < d.units.size(); ++i) {
    EXPECT_EQ(r.units[i].id, d.units[i].id);
    EXPECT_EQ(r.units[i].x_labeled, d.units[i].x_labeled);
    EXPECT_EQ(r.units[i].y_labeled, d.units[i].y_labeled);
    EXPECT_EQ(r.units[i].x_unlabeled, d.units[i].x_unlabeled);
    EXPECT_EQ(r.units[i].x_test, d.units[i].x_test);
    EXPECT_EQ(r.units[i].y_test, d.units[i].y_test);
  }
  EXPECT_EQ(r.metadata["generator"], d.metadata["generator"]);
  EXPECT_EQ(r.metadata["true_params"], d.metadata["true_params"]);
}

TEST(Csv, RejectsMalformedFiles) {
  const auto dir = temp_dir("bad");
  auto write = [&](const std::string& body) {
    std::ofstream(dir / "f.csv") << body;
    std::filesystem::remove(metadata_path(dir / "f.csv"));
  };
  write("a,b\n");
  EXPECT_THROW(read_dataset_csv(dir / "f.csv"), DataError);
  write("unit_id,split,u,p,Q\nw,labeled,1,2\n");
  EXPECT_THROW(read_dataset_csv(dir / "f.csv"), DataError);
  write("unit_id,split,u,p,Q\nw,unlabeled,1,2,3\n");
  EXPECT_THROW(read_dataset_csv(dir / "f.csv"), DataError);
  write("unit_id,split,u,p,Q\nw,holdout,1,2,3\n");
  EXPECT_THROW(read_dataset_csv(dir / "f.csv"), DataError);
  write("unit_id,split,u,p,Q\nw,labeled,x,2,3\n");
  EXPECT_THROW(read_dataset_csv(dir / "f.csv"), DataError);
  EXPECT_THROW(read_dataset_csv(dir / "missing.csv"), DataError);
}

TEST(Dataset, LeakageIsDetected) {
  auto d = small_fleet();
  EXPECT_NO_THROW(d.check_no_leakage());
  d.units[2].rows_unlabeled.push_back(d.units[0].rows_test.front());
  EXPECT_THROW(d.check_no_leakage(), DataError);
}

TEST(Dataset, TruncateAndUnitData) {
  const auto d = small_fleet();
  const auto t = truncate_training(d, 2, 3);
  for (std::size_t i = 0; i < d.units.size(); ++i) {
    EXPECT_EQ(t.units[i].n_labeled(2), 2u);
    EXPECT_EQ(t.units[i].n_unlabeled(2), 3u);
    EXPECT_EQ(t.units[i].x_test, d.units[i].x_test);
    EXPECT_TRUE(std::equal(t.units[i].x_labeled.begin(), t.units[i].x_labeled.end(),
                           d.units[i].x_labeled.begin()));
  }
  const auto ud = to_unit_data(t);
  ASSERT_EQ(ud.size(), 3u);
  EXPECT_EQ(ud[2].context_row, 2u);
  EXPECT_EQ(ud[1].y_labeled, t.units[1].y_labeled);
  EXPECT_EQ(d.index_of(d.units[1].id), 1u);
  EXPECT_THROW(d.index_of("nope"), DataError);
}
