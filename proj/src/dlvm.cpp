#include "ssmtl/dlvm.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace ssmtl {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

Tensor matrix(std::span<const double> v, std::size_t rows, std::size_t cols) {
  if (v.size() != rows * cols) {
    throw ShapeError("matrix", Shape{v.size()}, Shape{rows, cols});
  }
  return Tensor({rows, cols}, std::vector<double>(v.begin(), v.end()));
}

std::string join_lines(const std::vector<std::string>& items) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) s += '\n';
    s += items[i];
  }
  return s;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::istringstream in(s);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

}  // namespace

void ModelDims::validate() const {
  if (K == 0 || D == 0 || Dx == 0 || Dy == 0) {
    throw std::invalid_argument("model dimensions must be positive");
  }
}

// ---------------------------------------------------------------------------
// Densities

double log_prob_diag_normal(std::span<const double> value, const GaussianDiag& dist) {
  if (value.size() != dist.mean.size() || value.size() != dist.std.size()) {
    throw ShapeError("log_prob_diag_normal", Shape{value.size()}, Shape{dist.mean.size()});
  }
  double lp = 0.0;
  for (std::size_t d = 0; d < value.size(); ++d) {
    const double s = dist.std[d];
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw std::invalid_argument("log_prob_diag_normal: standard deviation must be positive");
    }
    const double r = (value[d] - dist.mean[d]) / s;
    lp += -kHalfLog2Pi - std::log(s) - 0.5 * r * r;
  }
  return lp;
}

std::vector<double> reparam_sample(const GaussianDiag& dist, std::span<const double> noise) {
  if (noise.size() != dist.mean.size() || noise.size() != dist.std.size()) {
    throw ShapeError("reparam_sample", Shape{noise.size()}, Shape{dist.mean.size()});
  }
  std::vector<double> out(noise.size());
  for (std::size_t d = 0; d < out.size(); ++d) out[d] = dist.mean[d] + dist.std[d] * noise[d];
  return out;
}

Tensor log_prob_rows(const Tensor& value, const Tensor& mean, const Tensor& log_std) {
  if (value.shape() != mean.shape() || value.shape() != log_std.shape()) {
    throw ShapeError("log_prob_rows", value.shape(), mean.shape());
  }
  const double d = static_cast<double>(value.cols());
  const Tensor r = (value - mean) * exp(neg(log_std));
  return add_scalar(neg(sum_rows(log_std)) - 0.5 * sum_rows(square(r)), -kHalfLog2Pi * d);
}

Tensor log_prob_standard_rows(const Tensor& value) {
  const double d = static_cast<double>(value.cols());
  return add_scalar(-0.5 * sum_rows(square(value)), -kHalfLog2Pi * d);
}

GaussianDiag row_of(const GaussianOutput& out, std::size_t row) {
  const std::size_t d = out.mean.cols();
  GaussianDiag g;
  for (std::size_t j = 0; j < d; ++j) {
    g.mean.push_back(out.mean.at(row, j));
    g.std.push_back(out.std.at(row, j));
  }
  return g;
}

// ---------------------------------------------------------------------------
// ContextTable

ContextTable ContextTable::fresh(const std::vector<std::string>& ids, std::size_t K,
                                 double log_std) {
  ContextTable t;
  t.unit_ids = ids;
  t.mean = Tensor::zeros({ids.size(), K}, true);
  t.log_std = Tensor::full({ids.size(), K}, log_std, true);
  return t;
}

std::size_t ContextTable::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < unit_ids.size(); ++i) {
    if (unit_ids[i] == id) return i;
  }
  throw std::out_of_range("no context for unit '" + id + "'");
}

Tensor ContextTable::clamped_log_std() const {
  return clamp(log_std, GaussianHead::kLogStdMin, GaussianHead::kLogStdMax);
}

ContextTable ContextTable::copy(bool trainable) const {
  ContextTable t;
  t.unit_ids = unit_ids;
  t.mean = mean.detach().set_requires_grad(trainable);
  t.log_std = log_std.detach().set_requires_grad(trainable);
  return t;
}

// ---------------------------------------------------------------------------
// SsmtlModel

SsmtlModel::SsmtlModel(const SsmtlInit& init) : dims_(init.dims) {
  dims_.validate();
  Rng rng(init.seed);
  Rng dec_rng = rng.split(0), y_rng = rng.split(1), z_rng = rng.split(2);
  decoder_ = GaussianHead::he_init(dims_.D + dims_.K, init.hidden, dims_.Dx + dims_.Dy, dec_rng);
  y_encoder_ = GaussianHead::he_init(dims_.Dx + dims_.K, init.hidden, dims_.Dy, y_rng);
  z_encoder_ =
      GaussianHead::he_init(dims_.Dx + dims_.Dy + dims_.K, init.hidden, dims_.D, z_rng);
  contexts_ = ContextTable::fresh(init.unit_ids, dims_.K, init.context_log_std);
}

SsmtlModel::SsmtlModel(ModelDims dims, GaussianHead decoder, GaussianHead y_encoder,
                       GaussianHead z_encoder, ContextTable contexts)
    : dims_(dims),
      decoder_(std::move(decoder)),
      y_encoder_(std::move(y_encoder)),
      z_encoder_(std::move(z_encoder)),
      contexts_(std::move(contexts)) {
  dims_.validate();
  if (decoder_.in_width() != dims_.D + dims_.K || decoder_.dim() != dims_.Dx + dims_.Dy ||
      y_encoder_.in_width() != dims_.Dx + dims_.K || y_encoder_.dim() != dims_.Dy ||
      z_encoder_.in_width() != dims_.Dx + dims_.Dy + dims_.K || z_encoder_.dim() != dims_.D) {
    throw std::invalid_argument("network widths do not match model dimensions");
  }
  if (contexts_.mean.defined() && contexts_.size() > 0 && contexts_.dim() != dims_.K) {
    throw std::invalid_argument("context table width does not match K");
  }
}

GaussianOutput SsmtlModel::encode_y(const Tensor& x, const Tensor& c) const {
  return y_encoder_.forward(concat_cols({x, c}));
}

GaussianOutput SsmtlModel::encode_z(const Tensor& x, const Tensor& y, const Tensor& c) const {
  return z_encoder_.forward(concat_cols({x, y, c}));
}

GaussianOutput SsmtlModel::decode(const Tensor& z, const Tensor& c) const {
  return decoder_.forward(concat_cols({z, c}));
}

GaussianDiag SsmtlModel::encode_y(std::span<const double> x, std::span<const double> c) const {
  return row_of(encode_y(matrix(x, 1, dims_.Dx), matrix(c, 1, dims_.K)), 0);
}

GaussianDiag SsmtlModel::encode_z(std::span<const double> x, std::span<const double> y,
                                  std::span<const double> c) const {
  return row_of(
      encode_z(matrix(x, 1, dims_.Dx), matrix(y, 1, dims_.Dy), matrix(c, 1, dims_.K)), 0);
}

GaussianDiag SsmtlModel::decode(std::span<const double> z, std::span<const double> c) const {
  return row_of(decode(matrix(z, 1, dims_.D), matrix(c, 1, dims_.K)), 0);
}

void SsmtlModel::check_unit(std::size_t unit) const {
  if (unit >= num_units()) {
    throw std::out_of_range("unit index " + std::to_string(unit) + " out of range (" +
                            std::to_string(num_units()) + " units)");
  }
}

SsmtlModel::ContextDraw SsmtlModel::sample_context(std::size_t unit, Rng& rng) const {
  check_unit(unit);
  ContextDraw draw;
  draw.noise = rng.normals(dims_.K);
  const Tensor log_s = contexts_.clamped_log_std();
  for (std::size_t k = 0; k < dims_.K; ++k) {
    draw.c_tilde.push_back(contexts_.mean.at(unit, k) +
                           std::exp(log_s.at(unit, k)) * draw.noise[k]);
  }
  return draw;
}

Prediction SsmtlModel::predict_at(std::span<const double> x, std::span<const double> c) const {
  const std::size_t n = x.size() / dims_.Dx;
  std::vector<double> cs;
  cs.reserve(n * dims_.K);
  for (std::size_t i = 0; i < n; ++i) cs.insert(cs.end(), c.begin(), c.end());
  const auto out = encode_y(matrix(x, n, dims_.Dx), Tensor({n, dims_.K}, std::move(cs)));
  return {out.mean.to_vector(), out.std.to_vector()};
}

Prediction SsmtlModel::predict_y(std::span<const double> x, std::size_t unit) const {
  check_unit(unit);
  if (x.size() % dims_.Dx != 0) throw ShapeError("predict_y", Shape{x.size()}, Shape{dims_.Dx});
  std::vector<double> c(dims_.K);
  for (std::size_t k = 0; k < dims_.K; ++k) c[k] = contexts_.mean.at(unit, k);
  return predict_at(x, c);
}

Prediction SsmtlModel::predict_y_sampled(std::span<const double> x, std::size_t unit,
                                         std::size_t samples, Rng& rng) const {
  check_unit(unit);
  if (samples == 0) throw std::invalid_argument("predict_y_sampled needs samples >= 1");
  Prediction acc;
  std::vector<double> second;
  for (std::size_t s = 0; s < samples; ++s) {
    const auto draw = sample_context(unit, rng);
    const auto p = predict_at(x, draw.c_tilde);
    if (acc.mean.empty()) {
      acc.mean.assign(p.mean.size(), 0.0);
      second.assign(p.mean.size(), 0.0);
    }
    for (std::size_t i = 0; i < p.mean.size(); ++i) {
      acc.mean[i] += p.mean[i];
      second[i] += p.std[i] * p.std[i] + p.mean[i] * p.mean[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(samples);
  acc.std.resize(acc.mean.size());
  for (std::size_t i = 0; i < acc.mean.size(); ++i) {
    acc.mean[i] *= inv;
    acc.std[i] = std::sqrt(std::max(second[i] * inv - acc.mean[i] * acc.mean[i], 0.0));
  }
  return acc;
}

std::vector<Tensor> SsmtlModel::network_parameters() const {
  std::vector<Tensor> out;
  for (const auto* head : {&decoder_, &y_encoder_, &z_encoder_}) {
    auto p = head->net().parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<Tensor> SsmtlModel::context_parameters() const {
  return {contexts_.mean, contexts_.log_std};
}

std::vector<Tensor> SsmtlModel::parameters() const {
  auto out = network_parameters();
  auto c = context_parameters();
  out.insert(out.end(), c.begin(), c.end());
  return out;
}

SsmtlModel SsmtlModel::copy(bool networks_trainable, bool contexts_trainable) const {
  return SsmtlModel(dims_, GaussianHead(decoder_.net().copy(networks_trainable)),
                    GaussianHead(y_encoder_.net().copy(networks_trainable)),
                    GaussianHead(z_encoder_.net().copy(networks_trainable)),
                    contexts_.copy(contexts_trainable));
}

SsmtlModel SsmtlModel::with_contexts(ContextTable contexts) const {
  return SsmtlModel(dims_, decoder_, y_encoder_, z_encoder_, std::move(contexts));
}

void save_dims(ParameterStore& store, const ModelDims& dims) {
  store.set_attr("dims.K", std::to_string(dims.K));
  store.set_attr("dims.D", std::to_string(dims.D));
  store.set_attr("dims.Dx", std::to_string(dims.Dx));
  store.set_attr("dims.Dy", std::to_string(dims.Dy));
}

ModelDims load_dims(const ParameterStore& store) {
  ModelDims d;
  d.K = std::stoull(store.attr("dims.K"));
  d.D = std::stoull(store.attr("dims.D"));
  d.Dx = std::stoull(store.attr("dims.Dx"));
  d.Dy = std::stoull(store.attr("dims.Dy"));
  d.validate();
  return d;
}

void save_contexts(ParameterStore& store, const ContextTable& table) {
  store.set_attr("contexts.ids", join_lines(table.unit_ids));
  store.put("contexts.mean", table.mean);
  store.put("contexts.log_std", table.log_std);
}

ContextTable load_contexts(const ParameterStore& store) {
  ContextTable t;
  t.unit_ids = split_lines(store.attr("contexts.ids"));
  t.mean = store.get("contexts.mean").detach().set_requires_grad(true);
  t.log_std = store.get("contexts.log_std").detach().set_requires_grad(true);
  if (t.mean.rank() != 2 || t.mean.rows() != t.unit_ids.size() ||
      t.log_std.shape() != t.mean.shape()) {
    throw CheckpointError("context table does not match its unit list");
  }
  return t;
}

void SsmtlModel::to_store(ParameterStore& store) const {
  store.set_attr("model.kind", "ssmtl");
  save_dims(store, dims_);
  decoder_.net().save(store, "decoder");
  y_encoder_.net().save(store, "y_encoder");
  z_encoder_.net().save(store, "z_encoder");
  save_contexts(store, contexts_);
}

SsmtlModel SsmtlModel::from_store(const ParameterStore& store) {
  if (store.attr("model.kind") != "ssmtl") {
    throw CheckpointError("checkpoint holds a '" + store.attr("model.kind") + "' model");
  }
  return SsmtlModel(load_dims(store), GaussianHead(Mlp::load(store, "decoder")),
                    GaussianHead(Mlp::load(store, "y_encoder")),
                    GaussianHead(Mlp::load(store, "z_encoder")), load_contexts(store));
}

}  // namespace ssmtl
