#include "ssmtl/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace ssmtl {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string json_string(const ParameterStore& store, const std::string& key) {
  return store.attr(key);
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics

double mape(std::span<const double> predictions, std::span<const double> truths) {
  if (predictions.size() != truths.size()) {
    throw std::invalid_argument("mape: prediction and truth lengths differ");
  }
  if (truths.empty()) throw std::invalid_argument("mape: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (truths[i] == 0.0) throw std::invalid_argument("mape: zero truth value");
    s += std::abs(predictions[i] - truths[i]) / std::abs(truths[i]);
  }
  return 100.0 * s / static_cast<double>(truths.size());
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty list");
  if (q < 0.0 || q > 100.0) throw std::invalid_argument("percentile q must be in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  double s = 0.0;
  for (double v : values) s += v;
  a.mean = s / static_cast<double>(values.size());
  a.p10 = percentile(values, 10);
  a.p50 = percentile(values, 50);
  a.p90 = percentile(values, 90);
  return a;
}

// ---------------------------------------------------------------------------
// Enums

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::STL: return "STL";
    case ModelKind::MTL: return "MTL";
    case ModelKind::SSMTL: return "SSMTL";
  }
  return "SSMTL";
}

ModelKind parse_model_kind(const std::string& s) {
  if (s == "STL" || s == "stl") return ModelKind::STL;
  if (s == "MTL" || s == "mtl") return ModelKind::MTL;
  if (s == "SSMTL" || s == "ssmtl") return ModelKind::SSMTL;
  throw std::invalid_argument("unknown model kind '" + s + "' (expected STL, MTL or SSMTL)");
}

std::string to_string(FinetuneMode m) {
  switch (m) {
    case FinetuneMode::Supervised: return "supervised";
    case FinetuneMode::Unsupervised: return "unsupervised";
    case FinetuneMode::SemiSupervised: return "semi_supervised";
  }
  return "semi_supervised";
}

FinetuneMode parse_finetune_mode(const std::string& s) {
  if (s == "supervised") return FinetuneMode::Supervised;
  if (s == "unsupervised") return FinetuneMode::Unsupervised;
  if (s == "semi_supervised") return FinetuneMode::SemiSupervised;
  throw std::invalid_argument("unknown finetune mode '" + s +
                              "' (expected supervised, unsupervised or semi_supervised)");
}

std::string to_string(FinetuneOptimizer o) { return o == FinetuneOptimizer::Sgd ? "sgd" : "adam"; }

FinetuneOptimizer parse_finetune_optimizer(const std::string& s) {
  if (s == "sgd") return FinetuneOptimizer::Sgd;
  if (s == "adam") return FinetuneOptimizer::Adam;
  throw std::invalid_argument("unknown finetune optimizer '" + s + "' (allowed: sgd, adam)");
}

std::string to_string(ContextInit c) { return c == ContextInit::Zero ? "zero" : "mean_of_units"; }

ContextInit parse_context_init(const std::string& s) {
  if (s == "zero") return ContextInit::Zero;
  if (s == "mean_of_units") return ContextInit::MeanOfUnits;
  throw std::invalid_argument("unknown context init '" + s + "' (expected zero or mean_of_units)");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("train.lr must be positive");
  if (!(context_init_std > 0.0)) {
    throw std::invalid_argument("train.context_init_std must be positive");
  }
  if (!(context_lr_scale > 0.0)) {
    throw std::invalid_argument("train.context_lr_scale must be positive");
  }
  if (eval_every < 1) throw std::invalid_argument("train.eval_every must be >= 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("train.validation_fraction must be in (0, 1)");
  }
  if (repetitions < 1) throw std::invalid_argument("train.repetitions must be >= 1");
  if (divergence_limit < 1) throw std::invalid_argument("train.divergence_limit must be >= 1");
  for (auto h : hidden) {
    if (h == 0) throw std::invalid_argument("hidden widths must be positive");
  }
  objective.validate();
}

nlohmann::json TrainRecord::to_json() const {
  nlohmann::json j = {{"step", step},
                      {"total", total},
                      {"parts",
                       {{"unlabeled", unlabeled}, {"labeled", labeled}, {"kl", kl}, {"aug", aug}}},
                      {"wall_time", wall_time}};
  if (validation) j["validation_mse"] = *validation;
  return j;
}

// ---------------------------------------------------------------------------
// Training

ValidationSplit split_validation(const MultiUnitDataset& data, double fraction,
                                 std::uint64_t seed) {
  ValidationSplit out;
  out.train = data;
  const Rng master(seed);
  const std::size_t dx = data.Dx, dy = data.Dy;
  for (std::size_t i = 0; i < data.units.size(); ++i) {
    const auto& u = data.units[i];
    auto& t = out.train.units[i];
    const std::size_t n = u.n_labeled(dx);
    std::size_t n_val = 0;
    if (n >= 2) {
      n_val = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
      n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    }
    Rng rng = master.split(i);
    const auto perm = rng.permutation(n);
    std::vector<bool> is_val(n, false);
    for (std::size_t k = 0; k < n_val; ++k) is_val[perm[k]] = true;
    t.x_labeled.clear();
    t.y_labeled.clear();
    t.rows_labeled.clear();
    std::vector<double> xv, yv;
    for (std::size_t j = 0; j < n; ++j) {
      auto& xs = is_val[j] ? xv : t.x_labeled;
      auto& ys = is_val[j] ? yv : t.y_labeled;
      xs.insert(xs.end(), u.x_labeled.begin() + static_cast<std::ptrdiff_t>(j * dx),
                u.x_labeled.begin() + static_cast<std::ptrdiff_t>((j + 1) * dx));
      ys.insert(ys.end(), u.y_labeled.begin() + static_cast<std::ptrdiff_t>(j * dy),
                u.y_labeled.begin() + static_cast<std::ptrdiff_t>((j + 1) * dy));
      if (!is_val[j]) t.rows_labeled.push_back(u.rows_labeled[j]);
    }
    out.x_val.push_back(std::move(xv));
    out.y_val.push_back(std::move(yv));
  }
  return out;
}

namespace {

template <class Model>
std::optional<double> validation_mse(const Model& model, const ValidationSplit& split) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < split.x_val.size(); ++i) {
    if (split.y_val[i].empty()) continue;
    const auto pred = model.predict_y(split.x_val[i], i);
    for (std::size_t j = 0; j < pred.mean.size(); ++j) {
      const double r = pred.mean[j] - split.y_val[i][j];
      s += r * r;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

// Random subset of at most `k` rows of a row-major block.
std::vector<double> pick_rows(const std::vector<double>& v, std::size_t width,
                              const std::vector<std::size_t>& rows) {
  std::vector<double> out;
  for (auto r : rows) {
    out.insert(out.end(), v.begin() + static_cast<std::ptrdiff_t>(r * width),
               v.begin() + static_cast<std::ptrdiff_t>((r + 1) * width));
  }
  return out;
}

std::vector<UnitData> minibatch(const std::vector<UnitData>& full, std::size_t bs,
                                std::size_t dx, std::size_t dy, Rng& rng) {
  std::vector<UnitData> out;
  for (const auto& u : full) {
    UnitData b;
    b.context_row = u.context_row;
    const std::size_t nl = u.n_labeled(dx), nu = u.n_unlabeled(dx);
    auto pl = rng.permutation(nl);
    auto pu = rng.permutation(nu);
    pl.resize(std::min(bs, nl));
    pu.resize(std::min(bs, nu));
    b.x_labeled = pick_rows(u.x_labeled, dx, pl);
    b.y_labeled = pick_rows(u.y_labeled, dy, pl);
    b.x_unlabeled = pick_rows(u.x_unlabeled, dx, pu);
    b.population_labeled = nl;
    b.population_unlabeled = nu;
    out.push_back(std::move(b));
  }
  return out;
}

struct LoopResult {
  std::size_t best_step = 0;
  double best_validation = std::numeric_limits<double>::infinity();
  std::size_t steps_run = 0;
};

// Adam with periodic validation and patience-based early stopping. `best` ends
// up holding a frozen copy of the best-validation parameters.
template <class Model, class LossFn>
LoopResult optimize(Model& model, Model& best, const ValidationSplit& split,
                    const TrainConfig& cfg, LossFn&& loss_fn, const TrainLogger& log) {
  const auto t0 = Clock::now();
  Adam adam_nets(model.network_parameters(), AdamOptions{cfg.lr});
  Adam adam_ctx(model.context_parameters(), AdamOptions{cfg.lr * cfg.context_lr_scale});
  LoopResult res;
  best = model.copy(false, false);
  if (auto v = validation_mse(model, split)) res.best_validation = *v;
  std::size_t stale = 0, bad_steps = 0;
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    TrainRecord rec;
    rec.step = step;
    Tensor loss = loss_fn(rec);
    const bool finite = !loss.poisoned() && std::isfinite(loss.item());
    bool stepped = false;
    if (finite) {
      adam_nets.zero_grad();
      adam_ctx.zero_grad();
      loss.backward();
      // Both groups skip together when any gradient is non-finite.
      stepped = grads_finite(model.parameters()) && adam_nets.step() && adam_ctx.step();
    }
    res.steps_run = step;
    if (!stepped) {
      if (++bad_steps >= cfg.divergence_limit) {
        throw DivergenceError("training diverged: " + std::to_string(bad_steps) +
                              " consecutive non-finite steps ending at step " +
                              std::to_string(step) + " (last loss " +
                              std::to_string(loss.item()) + ")");
      }
    } else {
      bad_steps = 0;
    }
    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      rec.validation = validation_mse(model, split);
      if (rec.validation) {
        if (*rec.validation < res.best_validation) {
          res.best_validation = *rec.validation;
          res.best_step = step;
          best = model.copy(false, false);
          stale = 0;
        } else {
          ++stale;
        }
      } else {
        best = model.copy(false, false);
        res.best_step = step;
      }
    }
    rec.wall_time = seconds_since(t0);
    if (log) log(rec);
    if (stale >= cfg.patience) break;
  }
  return res;
}

void record_parts(TrainRecord& rec, const ElboBreakdown& br) {
  rec.total = br.total.item();
  rec.unlabeled = br.unlabeled_term.item();
  rec.labeled = br.labeled_term.item();
  rec.kl = br.kl_context_term.item();
  rec.aug = br.aug_likelihood_term.item();
}

}  // namespace

TrainedSsmtl train_ssmtl(const MultiUnitDataset& data, const TrainConfig& cfg,
                         const TrainLogger& log) {
  cfg.validate();
  if (data.units.empty()) throw DataError("cannot train on an empty dataset");
  TrainedSsmtl out;
  out.standardizer = Standardizer::fit(data);
  const auto split = split_validation(standardize(data, out.standardizer),
                                      cfg.validation_fraction, Rng(cfg.seed).split(1).next_u64());
  const auto units = to_unit_data(split.train);

  SsmtlInit init;
  init.dims = cfg.dims;
  init.dims.Dx = data.Dx;
  init.dims.Dy = data.Dy;
  init.hidden = cfg.hidden;
  init.unit_ids = data.unit_ids();
  init.seed = Rng(cfg.seed).split(2).next_u64();
  init.context_log_std = std::log(cfg.context_init_std);
  SsmtlModel model(init);
  Rng rng = Rng(cfg.seed).split(3);

  const auto res = optimize(model, out.model, split, cfg,
      [&](TrainRecord& rec) {
        const auto br = cfg.batch_size
                            ? sgvb_dataset_estimate(model,
                                                    minibatch(units, cfg.batch_size, data.Dx,
                                                              data.Dy, rng),
                                                    cfg.objective, rng)
                            : sgvb_dataset_estimate(model, units, cfg.objective, rng);
        record_parts(rec, br);
        return loss_for_training(br);
      },
      log);
  out.best_step = res.best_step;
  out.best_validation = res.best_validation;
  out.steps_run = res.steps_run;
  return out;
}

TrainedMtl train_mtl(const MultiUnitDataset& data, const TrainConfig& cfg,
                     const TrainLogger& log) {
  cfg.validate();
  if (data.units.empty()) throw DataError("cannot train on an empty dataset");
  TrainedMtl out;
  out.standardizer = Standardizer::fit(data);
  const auto split = split_validation(standardize(data, out.standardizer),
                                      cfg.validation_fraction, Rng(cfg.seed).split(1).next_u64());
  auto units = to_unit_data(split.train);
  for (auto& u : units) u.x_unlabeled.clear();

  MtlInit init;
  init.K = cfg.dims.K;
  init.Dx = data.Dx;
  init.Dy = data.Dy;
  init.hidden = cfg.hidden;
  init.unit_ids = data.unit_ids();
  init.seed = Rng(cfg.seed).split(2).next_u64();
  init.context_log_std = std::log(cfg.context_init_std);
  MtlModel model(init);
  Rng rng = Rng(cfg.seed).split(3);

  const auto res = optimize(model, out.model, split, cfg,
      [&](TrainRecord& rec) {
        Tensor loss = cfg.batch_size
                          ? mtl_loss(model, minibatch(units, cfg.batch_size, data.Dx, data.Dy, rng),
                                     rng)
                          : mtl_loss(model, units, rng);
        rec.total = -loss.item();
        rec.labeled = rec.total;
        return loss;
      },
      log);
  out.best_step = res.best_step;
  out.best_validation = res.best_validation;
  out.steps_run = res.steps_run;
  return out;
}

TrainedStl train_stl(const MultiUnitDataset& data, const StlGrid& grid,
                     double validation_fraction, std::uint64_t seed) {
  TrainedStl out;
  out.standardizer = Standardizer::fit(data);
  const auto sdata = standardize(data, out.standardizer);
  const Rng master(seed);
  for (std::size_t i = 0; i < sdata.units.size(); ++i) {
    const auto& u = sdata.units[i];
    if (u.y_labeled.empty()) throw DataError("unit " + u.id + " has no labeled data for STL");
    auto search = stl_hyperparam_search(u.x_labeled, u.y_labeled, data.Dx, grid,
                                        validation_fraction, master.split(i).next_u64());
    out.units.push_back(stl_fit(u.x_labeled, u.y_labeled, data.Dx, search.gamma, search.lambda));
    out.searches.push_back(std::move(search));
  }
  return out;
}

std::vector<double> predict_original(const TrainedSsmtl& t, std::span<const double> x_raw,
                                     std::size_t unit) {
  const auto x = t.standardizer.transform_x(std::vector<double>(x_raw.begin(), x_raw.end()));
  return t.standardizer.inverse_y(t.model.predict_y(x, unit).mean);
}

std::vector<double> predict_original(const TrainedMtl& t, std::span<const double> x_raw,
                                     std::size_t unit) {
  const auto x = t.standardizer.transform_x(std::vector<double>(x_raw.begin(), x_raw.end()));
  return t.standardizer.inverse_y(t.model.predict_y(x, unit).mean);
}

std::vector<double> predict_original(const TrainedStl& t, std::span<const double> x_raw,
                                     std::size_t unit) {
  if (unit >= t.units.size()) throw std::out_of_range("STL has no model for that unit");
  const auto x = t.standardizer.transform_x(std::vector<double>(x_raw.begin(), x_raw.end()));
  return t.standardizer.inverse_y(t.units[unit].predict(x));
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_trained(const TrainedSsmtl& t, const std::filesystem::path& path) {
  ParameterStore store;
  t.model.to_store(store);
  store.set_attr("standardizer", t.standardizer.to_json().dump());
  store.set_attr("train.best_step", std::to_string(t.best_step));
  store.save(path);
}

void save_trained(const TrainedMtl& t, const std::filesystem::path& path) {
  ParameterStore store;
  t.model.to_store(store);
  store.set_attr("standardizer", t.standardizer.to_json().dump());
  store.set_attr("train.best_step", std::to_string(t.best_step));
  store.save(path);
}

void save_trained(const TrainedStl& t, const std::vector<std::string>& ids,
                  const std::filesystem::path& path) {
  ParameterStore store;
  store.set_attr("model.kind", "stl");
  store.set_attr("standardizer", t.standardizer.to_json().dump());
  std::string joined;
  for (std::size_t i = 0; i < ids.size(); ++i) joined += (i ? "\n" : "") + ids[i];
  store.set_attr("stl.ids", joined);
  for (std::size_t i = 0; i < t.units.size(); ++i) {
    const auto& m = t.units[i];
    const std::string p = "stl." + std::to_string(i);
    store.put(p + ".support", Tensor({m.dual.size(), m.dx}, m.support));
    store.put(p + ".dual", Tensor({m.dual.size()}, m.dual));
    store.put(p + ".hyper", Tensor({2}, {m.gamma, m.lambda}));
  }
  store.save(path);
}

LoadedModel load_trained(const std::filesystem::path& path) {
  const auto store = ParameterStore::load(path);
  LoadedModel out;
  const auto kind = store.attr("model.kind");
  Standardizer stdz;
  try {
    stdz = Standardizer::from_json(nlohmann::json::parse(json_string(store, "standardizer")));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt standardizer in checkpoint: ") + e.what());
  }
  if (kind == "ssmtl") {
    out.kind = ModelKind::SSMTL;
    TrainedSsmtl t;
    t.model = SsmtlModel::from_store(store);
    t.standardizer = stdz;
    out.unit_ids = t.model.contexts().unit_ids;
    out.ssmtl = std::move(t);
  } else if (kind == "mtl") {
    out.kind = ModelKind::MTL;
    TrainedMtl t;
    t.model = MtlModel::from_store(store);
    t.standardizer = stdz;
    out.unit_ids = t.model.contexts().unit_ids;
    out.mtl = std::move(t);
  } else if (kind == "stl") {
    out.kind = ModelKind::STL;
    TrainedStl t;
    t.standardizer = stdz;
    std::istringstream ids(store.attr("stl.ids"));
    std::string line;
    while (std::getline(ids, line)) out.unit_ids.push_back(line);
    for (std::size_t i = 0; i < out.unit_ids.size(); ++i) {
      const std::string p = "stl." + std::to_string(i);
      StlModel m;
      const auto& sup = store.get(p + ".support");
      m.dx = sup.cols();
      m.support = sup.to_vector();
      m.dual = store.get(p + ".dual").to_vector();
      const auto h = store.get(p + ".hyper").to_vector();
      m.gamma = h.at(0);
      m.lambda = h.at(1);
      t.units.push_back(std::move(m));
    }
    out.stl = std::move(t);
  } else {
    throw CheckpointError("unknown model kind '" + kind + "'");
  }
  return out;
}

std::vector<double> evaluate_loaded(const LoadedModel& m, const MultiUnitDataset& data) {
  std::vector<double> out;
  for (const auto& u : data.units) {
    const auto it = std::find(m.unit_ids.begin(), m.unit_ids.end(), u.id);
    if (it == m.unit_ids.end()) {
      throw DataError("model has no context for unit '" + u.id + "'; finetune it first");
    }
    const auto idx = static_cast<std::size_t>(it - m.unit_ids.begin());
    std::vector<double> pred;
    if (m.ssmtl) pred = predict_original(*m.ssmtl, u.x_test, idx);
    if (m.mtl) pred = predict_original(*m.mtl, u.x_test, idx);
    if (m.stl) pred = predict_original(*m.stl, u.x_test, idx);
    out.push_back(mape(pred, u.y_test));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finetuning

ContextTable initial_context(const TrainedSsmtl& trained, const std::string& id,
                             const FinetuneConfig& cfg) {
  if (!(cfg.variance > 0.0)) throw std::invalid_argument("finetune variance must be positive");
  const std::size_t K = trained.model.dims().K;
  ContextTable ctx = ContextTable::fresh({id}, K, 0.5 * std::log(cfg.variance));
  ctx.log_std.set_requires_grad(false);
  if (cfg.init == ContextInit::MeanOfUnits) {
    const auto& m = trained.model.contexts().mean;
    auto dst = ctx.mean.mutable_values();
    const std::size_t M = m.rows();
    for (std::size_t k = 0; k < K; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < M; ++i) s += m.at(i, k);
      dst[k] = M ? s / static_cast<double>(M) : 0.0;
    }
  }
  return ctx;
}

FinetuneResult finetune_unit(const TrainedSsmtl& trained, const UnitSplit& unit,
                             const FinetuneConfig& cfg) {
  const std::size_t dx = trained.model.dims().Dx;
  const auto& s = trained.standardizer;
  UnitData d;
  d.context_row = 0;
  switch (cfg.mode) {
    case FinetuneMode::Supervised:
      if (unit.y_labeled.empty()) throw DataError("supervised finetuning needs labeled data");
      d.x_labeled = s.transform_x(unit.x_labeled);
      d.y_labeled = s.transform_y(unit.y_labeled);
      break;
    case FinetuneMode::Unsupervised:
      d.x_unlabeled = s.transform_x(unit.x_unlabeled);
      {
        const auto stripped = s.transform_x(unit.x_labeled);
        d.x_unlabeled.insert(d.x_unlabeled.end(), stripped.begin(), stripped.end());
      }
      if (d.x_unlabeled.empty()) throw DataError("unsupervised finetuning needs unlabeled data");
      break;
    case FinetuneMode::SemiSupervised:
      if (unit.y_labeled.empty() && unit.x_unlabeled.empty()) {
        throw DataError("semi-supervised finetuning needs data");
      }
      d.x_labeled = s.transform_x(unit.x_labeled);
      d.y_labeled = s.transform_y(unit.y_labeled);
      d.x_unlabeled = s.transform_x(unit.x_unlabeled);
      break;
  }
  (void)dx;

  FinetuneResult out;
  out.context = initial_context(trained, unit.id, cfg);
  const SsmtlModel model = trained.model.copy(false, false).with_contexts(out.context);
  std::vector<Tensor> params{out.context.mean};
  Adam adam(params, AdamOptions{cfg.lr});
  Rng rng(cfg.seed);
  const std::vector<UnitData> units{d};
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto br = sgvb_dataset_estimate(model, units, cfg.objective, rng);
    const Tensor loss = loss_for_training(br);
    out.objective_trace.push_back(br.value());
    if (loss.poisoned() || !std::isfinite(loss.item())) continue;
    zero_grads(params);
    loss.backward();
    if (cfg.optimizer == FinetuneOptimizer::Adam) {
      adam.step();
    } else {
      sgd_step(params, cfg.lr);
    }
  }
  return out;
}

std::vector<double> predict_with_context(const TrainedSsmtl& trained, const ContextTable& ctx,
                                         std::span<const double> x_raw) {
  const auto& s = trained.standardizer;
  const SsmtlModel model = trained.model.with_contexts(ctx);
  const auto x = s.transform_x(std::vector<double>(x_raw.begin(), x_raw.end()));
  return s.inverse_y(model.predict_y(x, 0).mean);
}

// ---------------------------------------------------------------------------
// Matrix

std::string CellReport::label() const {
  if (!ratio) return to_string(model);
  std::ostringstream os;
  os << to_string(model) << "_r" << *ratio;
  return os.str();
}

nlohmann::json CellReport::to_json(const std::string& fp) const {
  nlohmann::json j = {{"model", to_string(model)},
                      {"ratio", ratio ? nlohmann::json(*ratio) : nlohmann::json(nullptr)},
                      {"repetitions", repetitions},
                      {"status", status},
                      {"config_fingerprint", fp}};
  if (status == "ok") {
    j["unit_ids"] = unit_ids;
    j["per_unit_mape"] = per_unit_mape;
    j["mean"] = summary.mean;
    j["p10"] = summary.p10;
    j["p50"] = summary.p50;
    j["p90"] = summary.p90;
  } else {
    j["error"] = error;
  }
  return j;
}

std::string fingerprint(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<CellReport> run_matrix(const MultiUnitDataset& data, const MatrixConfig& mcfg,
                                   const TrainConfig& tcfg, const StlGrid& grid,
                                   double stl_validation_fraction, const MatrixOutputs& outputs) {
  std::vector<CellReport> cells;
  for (auto kind : mcfg.models) {
    if (kind == ModelKind::SSMTL) {
      for (double r : mcfg.ratios) {
        CellReport c;
        c.model = kind;
        c.ratio = r;
        cells.push_back(c);
      }
    } else {
      CellReport c;
      c.model = kind;
      cells.push_back(c);
    }
  }

  struct Job {
    std::size_t cell;
    std::size_t rep;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const std::size_t reps = cells[c].model == ModelKind::STL ? 1 : tcfg.repetitions;
    cells[c].repetitions = reps;
    for (std::size_t r = 0; r < reps; ++r) jobs.push_back({c, r});
  }

  if (outputs.dir) std::filesystem::create_directories(*outputs.dir / "logs");

  auto run_job = [&](const Job& job) -> std::vector<double> {
    const auto& cell = cells[job.cell];
    TrainConfig cfg = tcfg;
    cfg.seed = Rng(tcfg.seed).split(job.rep).next_u64();
    std::size_t n_unl = 0;
    if (cell.ratio) n_unl = static_cast<std::size_t>(std::lround(*cell.ratio * mcfg.n_labeled));
    const auto train = truncate_training(data, mcfg.n_labeled, n_unl);
    std::ofstream logf;
    TrainLogger log;
    if (outputs.dir) {
      logf.open(*outputs.dir / "logs" / (cell.label() + "_rep" + std::to_string(job.rep) + ".jsonl"),
                std::ios::trunc);
      log = [&logf](const TrainRecord& r) { logf << r.to_json().dump() << '\n'; };
    }
    switch (cell.model) {
      case ModelKind::STL:
        return test_mape(train_stl(train, grid, stl_validation_fraction, cfg.seed), train);
      case ModelKind::MTL:
        return test_mape(train_mtl(train, cfg, log), train);
      case ModelKind::SSMTL:
        return test_mape(train_ssmtl(train, cfg, log), train);
    }
    return {};
  };

  std::vector<std::vector<double>> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::vector<double> times(jobs.size(), 0.0);
  const std::size_t width = std::max<std::size_t>(1, mcfg.jobs);
  for (std::size_t start = 0; start < jobs.size(); start += width) {
    std::vector<std::future<void>> running;
    for (std::size_t j = start; j < std::min(start + width, jobs.size()); ++j) {
      running.push_back(std::async(width > 1 ? std::launch::async : std::launch::deferred, [&, j] {
        const auto t0 = Clock::now();
        try {
          results[j] = run_job(jobs[j]);
        } catch (const std::exception& e) {
          errors[j] = e.what();
        }
        times[j] = seconds_since(t0);
      }));
    }
    for (auto& f : running) f.get();
  }

  const auto ids = data.unit_ids();
  for (std::size_t c = 0; c < cells.size(); ++c) {
    auto& cell = cells[c];
    std::vector<double> acc(ids.size(), 0.0);
    std::size_t n_ok = 0;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      if (jobs[j].cell != c) continue;
      cell.wall_time += times[j];
      if (!errors[j].empty()) {
        cell.status = "failed";
        cell.error = errors[j];
        continue;
      }
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += results[j][i];
      ++n_ok;
    }
    if (cell.status == "ok" && n_ok > 0) {
      for (auto& v : acc) v /= static_cast<double>(n_ok);
      cell.unit_ids = ids;
      cell.per_unit_mape = acc;
      cell.summary = aggregate(acc);
    }
  }
  return cells;
}

void write_reports(const std::vector<CellReport>& cells, const std::string& fp,
                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream jl(dir / "report.jsonl", std::ios::trunc);
  std::ofstream csv(dir / "report.csv", std::ios::trunc);
  nlohmann::json timing = nlohmann::json::object();
  csv << "model,ratio,unit_id,mape\n";
  for (const auto& c : cells) {
    jl << c.to_json(fp).dump() << '\n';
    timing[c.label()] = c.wall_time;
    for (std::size_t i = 0; i < c.per_unit_mape.size(); ++i) {
      csv << to_string(c.model) << ',' << (c.ratio ? nlohmann::json(*c.ratio).dump() : std::string())
          << ',' << c.unit_ids[i] << ',' << nlohmann::json(c.per_unit_mape[i]).dump() << '\n';
    }
  }
  std::ofstream(dir / "timing.json", std::ios::trunc) << timing.dump(2) << '\n';
}

std::string format_table(const std::vector<CellReport>& cells) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "Model" << std::setw(17) << "Unlabeled ratio" << std::right
     << std::setw(10) << "Mean" << std::setw(10) << "P10" << std::setw(10) << "P50"
     << std::setw(10) << "P90" << '\n';
  os << std::fixed << std::setprecision(3);
  for (const auto& c : cells) {
    std::ostringstream ratio;
    if (c.ratio) ratio << *c.ratio; else ratio << '-';
    os << std::left << std::setw(8) << to_string(c.model) << std::setw(17) << ratio.str()
       << std::right;
    if (c.status != "ok") {
      os << "  failed: " << c.error << '\n';
      continue;
    }
    os << std::setw(10) << c.summary.mean << std::setw(10) << c.summary.p10 << std::setw(10)
       << c.summary.p50 << std::setw(10) << c.summary.p90 << '\n';
  }
  return os.str();
}

}  // namespace ssmtl
