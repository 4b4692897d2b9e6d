// Command-line driver: generate, train, finetune, evaluate, matrix, lsq.

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "ssmtl/config.hpp"
#include "ssmtl/data.hpp"
#include "ssmtl/experiments.hpp"
#include "ssmtl/wellsim.hpp"

namespace fs = std::filesystem;
using namespace ssmtl;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kDivergence = 4 };

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> jobs;
  std::optional<std::size_t> units, labeled, unlabeled, test;
};

struct Context {
  RunConfig cfg;
  fs::path out;
};

Context resolve(const GlobalFlags& g, const std::string& command) {
  Context ctx;
  bool config_sets_out = false;
  if (!g.config.empty()) {
    ctx.cfg = load_config(g.config);
    std::ifstream in(g.config);
    config_sets_out = nlohmann::json::parse(in).contains("out");
  } else {
    ctx.cfg = default_config();
  }
  if (g.seed) ctx.cfg.apply_seed(*g.seed);
  if (g.jobs) ctx.cfg.matrix.jobs = *g.jobs;
  if (g.units) ctx.cfg.fleet.units = *g.units;
  if (g.labeled) ctx.cfg.fleet.n_labeled = *g.labeled;
  if (g.unlabeled) ctx.cfg.fleet.n_unlabeled = *g.unlabeled;
  if (g.test) ctx.cfg.fleet.n_test = *g.test;
  if (!g.out.empty()) {
    ctx.cfg.out = g.out;
  } else if (!config_sets_out) {
    const char* env = std::getenv("SSMTL_OUT");
    ctx.cfg.out = fs::path(env && *env ? env : "runs") / command;
  }
  ctx.cfg.validate();
  ctx.out = ctx.cfg.out;
  fs::create_directories(ctx.out);
  write_resolved_config(ctx.cfg, ctx.out);
  return ctx;
}

MultiUnitDataset dataset_or_generate(const Context& ctx, const std::string& data_path) {
  if (!data_path.empty()) return read_dataset(data_path);
  auto data = generate_fleet(ctx.cfg.fleet);
  write_dataset(data, ctx.out / "fleet.csv");
  return data;
}

// The output location does not change results, so it is left out.
std::string config_fingerprint(const RunConfig& cfg) {
  auto j = cfg.to_json();
  j.erase("out");
  return fingerprint(j.dump());
}

void print_cells(const std::vector<CellReport>& cells) { std::cout << format_table(cells); }

int cmd_generate(const Context& ctx) {
  const auto data = generate_fleet(ctx.cfg.fleet);
  const auto path = ctx.out / "fleet.csv";
  write_dataset(data, path);
  std::cout << "wrote " << path.string() << " (" << data.units.size() << " units)\n";
  return kOk;
}

int cmd_train(const Context& ctx, const std::string& data_path, const std::string& model) {
  const auto data = dataset_or_generate(ctx, data_path);
  const auto kind = parse_model_kind(model);
  const auto ckpt = ctx.out / "model.ckpt";
  std::ofstream log(ctx.out / "train_log.jsonl", std::ios::trunc);
  TrainLogger logger = [&log](const TrainRecord& r) { log << r.to_json().dump() << '\n'; };
  CellReport cell;
  cell.model = kind;
  cell.repetitions = 1;
  cell.unit_ids = data.unit_ids();
  switch (kind) {
    case ModelKind::SSMTL: {
      const auto t = train_ssmtl(data, ctx.cfg.train, logger);
      save_trained(t, ckpt);
      cell.per_unit_mape = test_mape(t, data);
      std::cout << "best step " << t.best_step << " of " << t.steps_run << '\n';
      break;
    }
    case ModelKind::MTL: {
      const auto t = train_mtl(data, ctx.cfg.train, logger);
      save_trained(t, ckpt);
      cell.per_unit_mape = test_mape(t, data);
      std::cout << "best step " << t.best_step << " of " << t.steps_run << '\n';
      break;
    }
    case ModelKind::STL: {
      const auto t = train_stl(data, ctx.cfg.stl, ctx.cfg.stl_validation_fraction, ctx.cfg.seed);
      save_trained(t, data.unit_ids(), ckpt);
      cell.per_unit_mape = test_mape(t, data);
      break;
    }
  }
  cell.summary = aggregate(cell.per_unit_mape);
  std::cout << "wrote " << ckpt.string() << '\n';
  print_cells({cell});
  return kOk;
}

int cmd_evaluate(const Context& ctx, const std::string& data_path, const std::string& ckpt) {
  const auto data = read_dataset(data_path);
  const auto model = load_trained(ckpt);
  CellReport cell;
  cell.model = model.kind;
  cell.repetitions = 1;
  cell.unit_ids = data.unit_ids();
  cell.per_unit_mape = evaluate_loaded(model, data);
  cell.summary = aggregate(cell.per_unit_mape);
  std::ofstream(ctx.out / "evaluation.jsonl", std::ios::trunc)
      << cell.to_json(config_fingerprint(ctx.cfg)).dump() << '\n';
  print_cells({cell});
  return kOk;
}

int cmd_finetune(const Context& ctx, const std::string& data_path, const std::string& ckpt,
                 const std::string& unit_id, const std::string& mode) {
  const auto data = read_dataset(data_path);
  const auto loaded = load_trained(ckpt);
  if (!loaded.ssmtl) throw CheckpointError("finetuning needs an SSMTL checkpoint");
  FinetuneConfig fcfg = ctx.cfg.finetune;
  if (!mode.empty()) fcfg.mode = parse_finetune_mode(mode);
  nlohmann::json report = nlohmann::json::array();
  std::vector<UnitSplit> targets;
  for (const auto& u : data.units) {
    if (unit_id.empty() || u.id == unit_id) targets.push_back(u);
  }
  if (targets.empty()) throw DataError("no unit '" + unit_id + "' in " + data_path);
  const std::size_t dx = data.Dx;
  for (auto u : targets) {
    const std::size_t nl = std::min(ctx.cfg.finetune_labeled, u.n_labeled(dx));
    const std::size_t nu = std::min(ctx.cfg.finetune_unlabeled, u.n_unlabeled(dx));
    u.x_labeled.resize(nl * dx);
    u.y_labeled.resize(nl);
    u.x_unlabeled.resize(nu * dx);
    const auto prior = initial_context(*loaded.ssmtl, u.id, fcfg);
    const double before = mape(predict_with_context(*loaded.ssmtl, prior, u.x_test), u.y_test);
    const auto res = finetune_unit(*loaded.ssmtl, u, fcfg);
    const double after = mape(predict_with_context(*loaded.ssmtl, res.context, u.x_test), u.y_test);
    report.push_back({{"unit_id", u.id},
                      {"mode", to_string(fcfg.mode)},
                      {"n_labeled", nl},
                      {"n_unlabeled", nu},
                      {"prior_mape", before},
                      {"mape", after},
                      {"context_mean", res.context.mean.to_vector()}});
    std::cout << u.id << "  " << to_string(fcfg.mode) << "  MAPE " << std::fixed
              << std::setprecision(3) << before << " -> " << after << '\n';
    TrainedSsmtl tuned{loaded.ssmtl->model.with_contexts(res.context),
                       loaded.ssmtl->standardizer, 0, 0.0, 0};
    save_trained(tuned, ctx.out / (u.id + ".finetuned.ckpt"));
  }
  std::ofstream(ctx.out / "finetune.json", std::ios::trunc) << report.dump(2) << '\n';
  return kOk;
}

int cmd_matrix(const Context& ctx, const std::string& data_path) {
  const auto data = dataset_or_generate(ctx, data_path);
  const auto cells = run_matrix(data, ctx.cfg.matrix, ctx.cfg.train, ctx.cfg.stl,
                                ctx.cfg.stl_validation_fraction, {ctx.out});
  write_reports(cells, config_fingerprint(ctx.cfg), ctx.out);
  print_cells(cells);
  return kOk;
}

std::vector<WellObservation> observations(const std::vector<double>& x,
                                          const std::vector<double>* y) {
  std::vector<WellObservation> out;
  for (std::size_t i = 0; i < x.size() / 2; ++i) {
    WellObservation o{x[2 * i], x[2 * i + 1], std::nullopt};
    if (y) o.Q = (*y)[i];
    out.push_back(o);
  }
  return out;
}

int cmd_lsq(const Context& ctx, const std::string& data_path) {
  const auto data = read_dataset(data_path);
  nlohmann::json report = nlohmann::json::array();
  std::map<std::string, nlohmann::json> truth;
  if (data.metadata.contains("true_params")) {
    for (const auto& p : data.metadata["true_params"]) truth[p["unit_id"]] = p;
  }
  std::cout << std::setprecision(10);
  for (const auto& u : data.units) {
    nlohmann::json row = {{"unit_id", u.id}};
    std::cout << u.id << '\n';
    std::optional<LsTheta> exact;
    if (auto it = truth.find(u.id); it != truth.end() && it->second["k1"].get<double>() == 0.0) {
      exact = ls_theta_from_params({0.0, it->second["k2"], it->second["k3"], it->second["k4"]});
    }
    try {
      const auto t = ls_supervised(observations(u.x_labeled, &u.y_labeled));
      row["supervised"] = {{"a0", t.a0}, {"a1", t.a1}, {"b0", t.b0}, {"b1", t.b1}};
      std::cout << "  supervised      a0=" << t.a0 << " a1=" << t.a1 << " b0=" << t.b0
                << " b1=" << t.b1 << '\n';
      if (exact) {
        const double err = std::max({std::abs(t.a0 - exact->a0), std::abs(t.a1 - exact->a1),
                                     std::abs(t.b0 - exact->b0), std::abs(t.b1 - exact->b1)});
        row["supervised_max_abs_error"] = err;
        std::cout << "  max abs error   " << err << '\n';
      }
    } catch (const std::exception& e) {
      row["supervised_error"] = e.what();
      std::cout << "  supervised      " << e.what() << '\n';
    }
    try {
      const auto s = ls_semisupervised(observations(u.x_unlabeled, nullptr),
                                       observations(u.x_labeled, &u.y_labeled));
      row["semisupervised"] = {{"a0", s.a0}, {"a1", s.a1}, {"c0", s.c0}, {"c1", s.c1}};
      std::cout << "  semi-supervised a0=" << s.a0 << " a1=" << s.a1 << " c0=" << s.c0
                << " c1=" << s.c1 << '\n';
    } catch (const std::exception& e) {
      row["semisupervised_error"] = e.what();
      std::cout << "  semi-supervised " << e.what() << '\n';
    }
    report.push_back(row);
  }
  std::ofstream(ctx.out / "lsq.json", std::ios::trunc) << report.dump(2) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised multi-task soft sensor toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalFlags g;
  app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Master seed (overrides config)");
  app.add_option("--out", g.out, "Output directory (default: $SSMTL_OUT/<command> or runs/<command>)");
  app.add_option("--jobs", g.jobs, "Parallel matrix jobs");
  app.add_option("--units", g.units, "Fleet size");
  app.add_option("--labeled", g.labeled, "Labeled points per unit");
  app.add_option("--unlabeled", g.unlabeled, "Unlabeled points per unit");
  app.add_option("--test", g.test, "Test points per unit");

  std::string data_path, ckpt, model = "ssmtl", unit_id, mode;
  auto* gen = app.add_subcommand("generate", "Generate a synthetic fleet (CSV + metadata)");
  auto* train = app.add_subcommand("train", "Train one model on a dataset");
  train->add_option("--data", data_path, "Dataset CSV (generated from config if omitted)");
  train->add_option("--model", model, "ssmtl, mtl or stl");
  auto* finetune = app.add_subcommand("finetune", "Learn contexts of new units with frozen networks");
  finetune->add_option("--data", data_path, "Dataset CSV with the new units")->required();
  finetune->add_option("--checkpoint", ckpt, "Trained SSMTL checkpoint")->required();
  finetune->add_option("--unit", unit_id, "Only this unit");
  finetune->add_option("--mode", mode, "supervised, unsupervised or semi_supervised");
  auto* evaluate = app.add_subcommand("evaluate", "Test MAPE table of a checkpoint");
  evaluate->add_option("--data", data_path, "Dataset CSV")->required();
  evaluate->add_option("--checkpoint", ckpt, "Checkpoint")->required();
  auto* matrix = app.add_subcommand("matrix", "Run the STL/MTL/SSMTL experiment matrix");
  matrix->add_option("--data", data_path, "Dataset CSV (generated from config if omitted)");
  auto* lsq = app.add_subcommand("lsq", "Closed-form least-squares estimates per unit");
  lsq->add_option("--data", data_path, "Dataset CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    const Context ctx = resolve(g, name);
    if (*gen) return cmd_generate(ctx);
    if (*train) return cmd_train(ctx, data_path, model);
    if (*finetune) return cmd_finetune(ctx, data_path, ckpt, unit_id, mode);
    if (*evaluate) return cmd_evaluate(ctx, data_path, ckpt);
    if (*matrix) return cmd_matrix(ctx, data_path);
    if (*lsq) return cmd_lsq(ctx, data_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "numeric divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kData;
  } catch (const WellSimError& e) {
    std::cerr << "generator error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
