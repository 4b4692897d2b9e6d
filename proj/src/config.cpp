#include "ssmtl/config.hpp"

#include <fstream>
#include <functional>
#include <map>

namespace ssmtl {

namespace {

using Json = nlohmann::json;
using Setter = std::function<void(const Json&)>;

void apply_section(const Json& doc, const std::string& section,
                   const std::map<std::string, Setter>& setters) {
  if (!doc.is_object()) throw ConfigError("'" + section + "' must be an object");
  for (const auto& [key, value] : doc.items()) {
    const auto it = setters.find(key);
    if (it == setters.end()) {
      std::string allowed;
      for (const auto& [k, _] : setters) allowed += (allowed.empty() ? "" : ", ") + k;
      throw ConfigError("unknown key '" + key + "' in " + section + " (allowed: " + allowed + ")");
    }
    try {
      it->second(value);
    } catch (const Json::exception& e) {
      throw ConfigError("bad value for " + section + "." + key + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError("bad value for " + section + "." + key + ": " + e.what());
    }
  }
}

template <class T>
Setter set(T& field) {
  return [&field](const Json& v) { field = v.get<T>(); };
}

Setter set_range(Range& r) {
  return [&r](const Json& v) {
    const auto pair = v.get<std::vector<double>>();
    if (pair.size() != 2) throw std::invalid_argument("expected [lo, hi]");
    r = {pair[0], pair[1]};
  };
}

Json range_json(const Range& r) { return Json::array({r.lo, r.hi}); }

}  // namespace

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  fleet.seed = s;
  train.seed = s;
  finetune.seed = s;
}

void RunConfig::validate() const {
  try {
    fleet.validate();
    train.validate();
    finetune.objective.validate();
    train.dims.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(finetune.lr > 0.0)) throw ConfigError("finetune.lr must be positive");
  if (!(finetune.variance > 0.0)) throw ConfigError("finetune.variance must be positive");
  if (matrix.ratios.empty() && std::find(matrix.models.begin(), matrix.models.end(),
                                         ModelKind::SSMTL) != matrix.models.end()) {
    throw ConfigError("matrix.ratios is empty but SSMTL is requested");
  }
  for (double r : matrix.ratios) {
    if (!(r >= 0.0)) throw ConfigError("matrix.ratios must be non-negative");
  }
  if (stl.gammas.empty() || stl.lambdas.empty()) throw ConfigError("stl grid must be non-empty");
  if (!(stl_validation_fraction > 0.0 && stl_validation_fraction < 1.0)) {
    throw ConfigError("stl.validation_fraction must be in (0, 1)");
  }
}

RunConfig default_config() {
  RunConfig c;
  c.apply_seed(1);
  return c;
}

RunConfig merge_config(RunConfig c, const Json& doc) {
  if (!doc.is_object()) throw ConfigError("config root must be a JSON object");
  std::string beta_marker;
  std::string normalization;
  std::string ft_mode, ft_init, ft_optimizer;
  std::vector<std::string> models;
  bool have_models = false, have_seed = false;
  std::uint64_t seed = c.seed;
  std::string out;
  Json beta = c.train.objective.beta ? Json(*c.train.objective.beta) : Json(nullptr);

  apply_section(
      doc, "config",
      {{"seed", [&](const Json& v) { seed = v.get<std::uint64_t>(); have_seed = true; }},
       {"out", [&](const Json& v) { out = v.get<std::string>(); }},
       {"fleet",
        [&](const Json& v) {
          apply_section(v, "fleet",
                        {{"units", set(c.fleet.units)},
                         {"labeled", set(c.fleet.n_labeled)},
                         {"unlabeled", set(c.fleet.n_unlabeled)},
                         {"test", set(c.fleet.n_test)},
                         {"k1", set_range(c.fleet.k1)},
                         {"k2", set_range(c.fleet.k2)},
                         {"k3", set_range(c.fleet.k3)},
                         {"k4", set_range(c.fleet.k4)},
                         {"noise_fraction", set(c.fleet.noise_fraction)},
                         {"max_redraws", set(c.fleet.max_redraws)},
                         {"id_prefix", set(c.fleet.id_prefix)}});
        }},
       {"model",
        [&](const Json& v) {
          apply_section(v, "model",
                        {{"K", set(c.train.dims.K)},
                         {"D", set(c.train.dims.D)},
                         {"hidden", set(c.train.hidden)}});
        }},
       {"objective",
        [&](const Json& v) {
          apply_section(v, "objective",
                        {{"alpha", set(c.train.objective.alpha)},
                         {"beta", [&](const Json& b) { beta = b; }},
                         {"mc_samples", set(c.train.objective.mc_samples)},
                         {"normalization", set(normalization)}});
        }},
       {"train",
        [&](const Json& v) {
          apply_section(v, "train",
                        {{"lr", set(c.train.lr)},
                         {"context_lr_scale", set(c.train.context_lr_scale)},
                         {"context_init_std", set(c.train.context_init_std)},
                         {"max_steps", set(c.train.max_steps)},
                         {"eval_every", set(c.train.eval_every)},
                         {"patience", set(c.train.patience)},
                         {"validation_fraction", set(c.train.validation_fraction)},
                         {"batch_size", set(c.train.batch_size)},
                         {"repetitions", set(c.train.repetitions)},
                         {"divergence_limit", set(c.train.divergence_limit)}});
        }},
       {"finetune",
        [&](const Json& v) {
          apply_section(v, "finetune",
                        {{"mode", set(ft_mode)},
                         {"optimizer", set(ft_optimizer)},
                         {"epochs", set(c.finetune.epochs)},
                         {"lr", set(c.finetune.lr)},
                         {"init", set(ft_init)},
                         {"variance", set(c.finetune.variance)},
                         {"mc_samples", set(c.finetune.objective.mc_samples)},
                         {"alpha", set(c.finetune.objective.alpha)},
                         {"n_labeled", set(c.finetune_labeled)},
                         {"n_unlabeled", set(c.finetune_unlabeled)}});
        }},
       {"matrix",
        [&](const Json& v) {
          apply_section(v, "matrix",
                        {{"ratios", set(c.matrix.ratios)},
                         {"models", [&](const Json& m) { models = m.get<std::vector<std::string>>(); have_models = true; }},
                         {"labeled", set(c.matrix.n_labeled)},
                         {"jobs", set(c.matrix.jobs)}});
        }},
       {"stl", [&](const Json& v) {
          apply_section(v, "stl",
                        {{"gammas", set(c.stl.gammas)},
                         {"lambdas", set(c.stl.lambdas)},
                         {"default_gamma", set(c.stl.default_gamma)},
                         {"default_lambda", set(c.stl.default_lambda)},
                         {"validation_fraction", set(c.stl_validation_fraction)}});
        }}});

  try {
    if (!normalization.empty()) c.train.objective.normalization = parse_normalization(normalization);
    if (!ft_mode.empty()) c.finetune.mode = parse_finetune_mode(ft_mode);
    if (!ft_init.empty()) c.finetune.init = parse_context_init(ft_init);
    if (!ft_optimizer.empty()) c.finetune.optimizer = parse_finetune_optimizer(ft_optimizer);
    if (have_models) {
      c.matrix.models.clear();
      for (const auto& m : models) c.matrix.models.push_back(parse_model_kind(m));
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (beta.is_null()) {
    c.train.objective.beta.reset();
  } else if (beta.is_number()) {
    c.train.objective.beta = beta.get<double>();
  } else {
    throw ConfigError("objective.beta must be a number or null");
  }
  if (!out.empty()) c.out = out;
  if (have_seed) c.apply_seed(seed);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return merge_config(default_config(), doc);
}

nlohmann::json RunConfig::to_json() const {
  std::vector<std::string> model_names;
  for (auto m : matrix.models) model_names.push_back(to_string(m));
  const auto& o = train.objective;
  return {
      {"seed", seed},
      {"out", out.string()},
      {"fleet",
       {{"units", fleet.units},
        {"labeled", fleet.n_labeled},
        {"unlabeled", fleet.n_unlabeled},
        {"test", fleet.n_test},
        {"k1", range_json(fleet.k1)},
        {"k2", range_json(fleet.k2)},
        {"k3", range_json(fleet.k3)},
        {"k4", range_json(fleet.k4)},
        {"noise_fraction", fleet.noise_fraction},
        {"max_redraws", fleet.max_redraws},
        {"id_prefix", fleet.id_prefix}}},
      {"model", {{"K", train.dims.K}, {"D", train.dims.D}, {"hidden", train.hidden}}},
      {"objective",
       {{"alpha", o.alpha},
        {"beta", o.beta ? Json(*o.beta) : Json(nullptr)},
        {"mc_samples", o.mc_samples},
        {"normalization", to_string(o.normalization)}}},
      {"train",
       {{"lr", train.lr},
        {"context_lr_scale", train.context_lr_scale},
        {"context_init_std", train.context_init_std},
        {"max_steps", train.max_steps},
        {"eval_every", train.eval_every},
        {"patience", train.patience},
        {"validation_fraction", train.validation_fraction},
        {"batch_size", train.batch_size},
        {"repetitions", train.repetitions},
        {"divergence_limit", train.divergence_limit}}},
      {"finetune",
       {{"mode", to_string(finetune.mode)},
        {"optimizer", to_string(finetune.optimizer)},
        {"epochs", finetune.epochs},
        {"lr", finetune.lr},
        {"init", to_string(finetune.init)},
        {"variance", finetune.variance},
        {"mc_samples", finetune.objective.mc_samples},
        {"alpha", finetune.objective.alpha},
        {"n_labeled", finetune_labeled},
        {"n_unlabeled", finetune_unlabeled}}},
      {"matrix",
       {{"ratios", matrix.ratios},
        {"models", model_names},
        {"labeled", matrix.n_labeled},
        {"jobs", matrix.jobs}}},
      {"stl",
       {{"gammas", stl.gammas},
        {"lambdas", stl.lambdas},
        {"default_gamma", stl.default_gamma},
        {"default_lambda", stl.default_lambda},
        {"validation_fraction", stl_validation_fraction}}}};
}

void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "resolved_config.json", std::ios::trunc);
  if (!out) throw ConfigError("cannot write resolved config in " + dir.string());
  out << cfg.to_json().dump(2) << '\n';
}

}  // namespace ssmtl
