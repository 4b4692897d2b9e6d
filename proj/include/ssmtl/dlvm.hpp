#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssmtl/checkpoint.hpp"
#include "ssmtl/neural.hpp"
#include "ssmtl/rng.hpp"
#include "ssmtl/tensor.hpp"

namespace ssmtl {

struct ModelDims {
  std::size_t K = 4;   // context
  std::size_t D = 5;   // latent state
  std::size_t Dx = 2;  // input
  std::size_t Dy = 1;  // target

  void validate() const;
  bool operator==(const ModelDims&) const = default;
};

// Diagonal normal with explicit standard deviations.
struct GaussianDiag {
  std::vector<double> mean;
  std::vector<double> std;
};

// Sum over dimensions of log N(value_d; mean_d, std_d^2). Throws on std <= 0.
double log_prob_diag_normal(std::span<const double> value, const GaussianDiag& dist);
// mean + std * noise
std::vector<double> reparam_sample(const GaussianDiag& dist, std::span<const double> noise);

// Row-wise diagonal normal log density: [B x d] -> [B].
Tensor log_prob_rows(const Tensor& value, const Tensor& mean, const Tensor& log_std);
// Row-wise standard normal log density: [B x d] -> [B].
Tensor log_prob_standard_rows(const Tensor& value);

// Row `row` of a batched head output.
GaussianDiag row_of(const GaussianOutput& out, std::size_t row);

// Per-unit q(c_i) = N(mean_i, diag exp(log_std_i)^2), stored as [M x K] leaves.
struct ContextTable {
  Tensor mean;
  Tensor log_std;
  std::vector<std::string> unit_ids;

  static constexpr double kFreshLogStd = -0.6931471805599453;  // log 0.5

  static ContextTable fresh(const std::vector<std::string>& ids, std::size_t K,
                            double log_std = kFreshLogStd);
  std::size_t size() const { return unit_ids.size(); }
  std::size_t dim() const { return mean.cols(); }
  std::size_t index_of(const std::string& id) const;
  // log_std clamped into the head's range.
  Tensor clamped_log_std() const;
  ContextTable copy(bool trainable) const;
};

struct Prediction {
  std::vector<double> mean;  // [n x Dy] row-major
  std::vector<double> std;
};

struct SsmtlInit {
  ModelDims dims;
  std::vector<std::size_t> hidden{200, 200};
  std::vector<std::string> unit_ids;
  std::uint64_t seed = 0;
  double context_log_std = ContextTable::kFreshLogStd;
};

class SsmtlModel {
 public:
  SsmtlModel() = default;
  explicit SsmtlModel(const SsmtlInit& init);
  SsmtlModel(ModelDims dims, GaussianHead decoder, GaussianHead y_encoder,
             GaussianHead z_encoder, ContextTable contexts);

  const ModelDims& dims() const { return dims_; }
  const GaussianHead& decoder() const { return decoder_; }
  const GaussianHead& y_encoder() const { return y_encoder_; }
  const GaussianHead& z_encoder() const { return z_encoder_; }
  GaussianHead& decoder() { return decoder_; }
  GaussianHead& y_encoder() { return y_encoder_; }
  GaussianHead& z_encoder() { return z_encoder_; }
  ContextTable& contexts() { return contexts_; }
  const ContextTable& contexts() const { return contexts_; }
  std::size_t num_units() const { return contexts_.size(); }

  // Batched heads; x [B x Dx], y [B x Dy], z [B x D], c [B x K].
  GaussianOutput encode_y(const Tensor& x, const Tensor& c) const;
  GaussianOutput encode_z(const Tensor& x, const Tensor& y, const Tensor& c) const;
  // Distribution over the concatenation (x, y).
  GaussianOutput decode(const Tensor& z, const Tensor& c) const;

  // Single-point conveniences.
  GaussianDiag encode_y(std::span<const double> x, std::span<const double> c) const;
  GaussianDiag encode_z(std::span<const double> x, std::span<const double> y,
                        std::span<const double> c) const;
  GaussianDiag decode(std::span<const double> z, std::span<const double> c) const;

  struct ContextDraw {
    std::vector<double> c_tilde;
    std::vector<double> noise;
  };
  ContextDraw sample_context(std::size_t unit, Rng& rng) const;

  // encode_y at the context posterior mean; x is [n x Dx] row-major.
  Prediction predict_y(std::span<const double> x, std::size_t unit) const;
  // Mixture moments over `samples` context draws.
  Prediction predict_y_sampled(std::span<const double> x, std::size_t unit, std::size_t samples,
                               Rng& rng) const;

  std::vector<Tensor> network_parameters() const;
  std::vector<Tensor> context_parameters() const;
  std::vector<Tensor> parameters() const;

  // Deep copy; networks and contexts require grad iff the flags say so.
  SsmtlModel copy(bool networks_trainable = true, bool contexts_trainable = true) const;
  // Same networks (shared storage), different context table.
  SsmtlModel with_contexts(ContextTable contexts) const;

  void to_store(ParameterStore& store) const;
  static SsmtlModel from_store(const ParameterStore& store);

 private:
  void check_unit(std::size_t unit) const;
  Prediction predict_at(std::span<const double> x, std::span<const double> c) const;

  ModelDims dims_;
  GaussianHead decoder_;
  GaussianHead y_encoder_;
  GaussianHead z_encoder_;
  ContextTable contexts_;
};

void save_dims(ParameterStore& store, const ModelDims& dims);
ModelDims load_dims(const ParameterStore& store);
void save_contexts(ParameterStore& store, const ContextTable& table);
ContextTable load_contexts(const ParameterStore& store);

}  // namespace ssmtl
