#include "ssmtl/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace ssmtl {

namespace {

constexpr double kMinStd = 1e-12;

void column_stats(const std::vector<const std::vector<double>*>& blocks, std::size_t width,
                  std::vector<double>& mean, std::vector<double>& sd) {
  mean.assign(width, 0.0);
  sd.assign(width, 1.0);
  std::vector<double> s(width, 0.0), s2(width, 0.0);
  std::size_t n = 0;
  for (const auto* b : blocks) {
    for (std::size_t r = 0; r < b->size() / width; ++r) {
      for (std::size_t j = 0; j < width; ++j) {
        const double v = (*b)[r * width + j];
        s[j] += v;
        s2[j] += v * v;
      }
      ++n;
    }
  }
  if (n == 0) return;
  for (std::size_t j = 0; j < width; ++j) {
    mean[j] = s[j] / static_cast<double>(n);
    const double var = s2[j] / static_cast<double>(n) - mean[j] * mean[j];
    const double v = std::sqrt(std::max(var, 0.0));
    sd[j] = v > kMinStd ? v : 1.0;
  }
}

std::vector<double> affine(const std::vector<double>& v, const std::vector<double>& mean,
                           const std::vector<double>& sd, bool forward) {
  const std::size_t w = mean.size();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t j = i % w;
    out[i] = forward ? (v[i] - mean[j]) / sd[j] : v[i] * sd[j] + mean[j];
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto* begin = s.data();
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw DataError("line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace

std::vector<std::string> MultiUnitDataset::unit_ids() const {
  std::vector<std::string> ids;
  for (const auto& u : units) ids.push_back(u.id);
  return ids;
}

std::size_t MultiUnitDataset::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (units[i].id == id) return i;
  }
  throw DataError("dataset has no unit '" + id + "'");
}

void MultiUnitDataset::check_no_leakage() const {
  std::set<std::uint64_t> test_rows;
  for (const auto& u : units) test_rows.insert(u.rows_test.begin(), u.rows_test.end());
  for (const auto& u : units) {
    for (const auto* rows : {&u.rows_labeled, &u.rows_unlabeled}) {
      for (auto r : *rows) {
        if (test_rows.contains(r)) {
          throw DataError("row " + std::to_string(r) + " of unit " + u.id +
                          " is tagged both training and test");
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Standardizer

Standardizer Standardizer::fit(const MultiUnitDataset& data) {
  Standardizer s;
  std::vector<const std::vector<double>*> xs, ys;
  for (const auto& u : data.units) {
    xs.push_back(&u.x_labeled);
    xs.push_back(&u.x_unlabeled);
    ys.push_back(&u.y_labeled);
  }
  column_stats(xs, data.Dx, s.x_mean, s.x_std);
  column_stats(ys, data.Dy, s.y_mean, s.y_std);
  return s;
}

Standardizer Standardizer::identity(std::size_t dx, std::size_t dy) {
  return {std::vector<double>(dx, 0.0), std::vector<double>(dx, 1.0),
          std::vector<double>(dy, 0.0), std::vector<double>(dy, 1.0)};
}

std::vector<double> Standardizer::transform_x(const std::vector<double>& x) const {
  return affine(x, x_mean, x_std, true);
}
std::vector<double> Standardizer::transform_y(const std::vector<double>& y) const {
  return affine(y, y_mean, y_std, true);
}
std::vector<double> Standardizer::inverse_y(const std::vector<double>& y) const {
  return affine(y, y_mean, y_std, false);
}
std::vector<double> Standardizer::inverse_y_std(const std::vector<double>& s) const {
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] * y_std[i % y_std.size()];
  return out;
}

nlohmann::json Standardizer::to_json() const {
  return {{"x_mean", x_mean}, {"x_std", x_std}, {"y_mean", y_mean}, {"y_std", y_std}};
}

Standardizer Standardizer::from_json(const nlohmann::json& j) {
  Standardizer s;
  j.at("x_mean").get_to(s.x_mean);
  j.at("x_std").get_to(s.x_std);
  j.at("y_mean").get_to(s.y_mean);
  j.at("y_std").get_to(s.y_std);
  return s;
}

MultiUnitDataset standardize(const MultiUnitDataset& data, const Standardizer& s) {
  MultiUnitDataset out = data;
  for (auto& u : out.units) {
    u.x_labeled = s.transform_x(u.x_labeled);
    u.x_unlabeled = s.transform_x(u.x_unlabeled);
    u.x_test = s.transform_x(u.x_test);
    u.y_labeled = s.transform_y(u.y_labeled);
    u.y_test = s.transform_y(u.y_test);
  }
  return out;
}

std::vector<UnitData> to_unit_data(const MultiUnitDataset& standardized) {
  std::vector<UnitData> out;
  for (std::size_t i = 0; i < standardized.units.size(); ++i) {
    const auto& u = standardized.units[i];
    UnitData d;
    d.context_row = i;
    d.x_labeled = u.x_labeled;
    d.y_labeled = u.y_labeled;
    d.x_unlabeled = u.x_unlabeled;
    out.push_back(std::move(d));
  }
  return out;
}

MultiUnitDataset truncate_training(const MultiUnitDataset& data, std::size_t n_labeled,
                                   std::size_t n_unlabeled) {
  MultiUnitDataset out = data;
  for (auto& u : out.units) {
    const std::size_t nl = std::min(n_labeled, u.n_labeled(data.Dx));
    const std::size_t nu = std::min(n_unlabeled, u.n_unlabeled(data.Dx));
    u.x_labeled.resize(nl * data.Dx);
    u.y_labeled.resize(nl * data.Dy);
    u.rows_labeled.resize(nl);
    u.x_unlabeled.resize(nu * data.Dx);
    u.rows_unlabeled.resize(nu);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

void write_dataset_csv(const MultiUnitDataset& data, const std::filesystem::path& path) {
  if (data.Dx != 2 || data.Dy != 1) {
    throw DataError("the CSV schema holds (u, p) inputs and a scalar Q");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "unit_id,split,u,p,Q\n";
  for (const auto& u : data.units) {
    for (std::size_t r = 0; r < u.n_labeled(2); ++r) {
      out << u.id << ",train_labeled," << fmt(u.x_labeled[2 * r]) << ','
          << fmt(u.x_labeled[2 * r + 1]) << ',' << fmt(u.y_labeled[r]) << '\n';
    }
    for (std::size_t r = 0; r < u.n_unlabeled(2); ++r) {
      out << u.id << ",train_unlabeled," << fmt(u.x_unlabeled[2 * r]) << ','
          << fmt(u.x_unlabeled[2 * r + 1]) << ",\n";
    }
    for (std::size_t r = 0; r < u.n_test(2); ++r) {
      out << u.id << ",test," << fmt(u.x_test[2 * r]) << ',' << fmt(u.x_test[2 * r + 1]) << ','
          << fmt(u.y_test[r]) << '\n';
    }
  }
  if (!out) throw DataError("write failed for " + path.string());
}

MultiUnitDataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "unit_id,split,u,p,Q") {
    throw DataError(path.string() + ": expected header 'unit_id,split,u,p,Q'");
  }
  MultiUnitDataset data;
  std::map<std::string, std::size_t> index;
  std::uint64_t row = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 5) {
      throw DataError("line " + std::to_string(lineno) + ": expected 5 fields, got " +
                      std::to_string(f.size()));
    }
    auto [it, inserted] = index.emplace(f[0], data.units.size());
    if (inserted) {
      data.units.emplace_back();
      data.units.back().id = f[0];
    }
    auto& u = data.units[it->second];
    const double uu = parse_double(f[2], lineno);
    const double p = parse_double(f[3], lineno);
    if (f[1] == "train_labeled") {
      u.x_labeled.insert(u.x_labeled.end(), {uu, p});
      u.y_labeled.push_back(parse_double(f[4], lineno));
      u.rows_labeled.push_back(row);
    } else if (f[1] == "train_unlabeled") {
      if (!f[4].empty()) {
        throw DataError("line " + std::to_string(lineno) + ": unlabeled row carries a Q value");
      }
      u.x_unlabeled.insert(u.x_unlabeled.end(), {uu, p});
      u.rows_unlabeled.push_back(row);
    } else if (f[1] == "test") {
      u.x_test.insert(u.x_test.end(), {uu, p});
      u.y_test.push_back(parse_double(f[4], lineno));
      u.rows_test.push_back(row);
    } else {
      throw DataError("line " + std::to_string(lineno) + ": unknown split '" + f[1] + "'");
    }
    ++row;
  }
  return data;
}

std::filesystem::path metadata_path(const std::filesystem::path& csv) {
  auto p = csv;
  p.replace_extension(".meta.json");
  return p;
}

void write_dataset(const MultiUnitDataset& data, const std::filesystem::path& csv) {
  write_dataset_csv(data, csv);
  nlohmann::json meta = data.metadata;
  meta["standardization"] = Standardizer::fit(data).to_json();
  std::ofstream out(metadata_path(csv), std::ios::trunc);
  if (!out) throw DataError("cannot write " + metadata_path(csv).string());
  out << meta.dump(2) << '\n';
}

MultiUnitDataset read_dataset(const std::filesystem::path& csv) {
  auto data = read_dataset_csv(csv);
  const auto meta = metadata_path(csv);
  if (std::filesystem::exists(meta)) {
    std::ifstream in(meta);
    try {
      data.metadata = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("corrupt metadata " + meta.string() + ": " + e.what());
    }
  }
  data.check_no_leakage();
  return data;
}

}  // namespace ssmtl
