#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssmtl/checkpoint.hpp"
#include "ssmtl/rng.hpp"
#include "ssmtl/tensor.hpp"

namespace ssmtl {

struct DenseLayer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
};

// Feed-forward network: ReLU on hidden layers, identity on the output layer.
class Mlp {
 public:
  Mlp() = default;

  // Weights ~ N(0, 2 / fan_in), biases zero.
  static Mlp he_init(const std::vector<std::size_t>& widths, std::uint64_t seed);
  static Mlp he_init(const std::vector<std::size_t>& widths, Rng& rng);
  // Every weight and bias set to `value`.
  static Mlp constant(const std::vector<std::size_t>& widths, double value = 0.0);

  Tensor forward(const Tensor& input) const;

  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t in_width() const { return widths_.front(); }
  std::size_t out_width() const { return widths_.back(); }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  // W0, b0, W1, b1, ...
  std::vector<Tensor> parameters() const;
  // Deep copy. Parameters of the copy require grad iff `trainable`.
  Mlp copy(bool trainable) const;

  void save(ParameterStore& store, const std::string& prefix) const;
  static Mlp load(const ParameterStore& store, const std::string& prefix);

 private:
  static void check_widths(const std::vector<std::size_t>& widths);
  std::vector<std::size_t> widths_;
  std::vector<DenseLayer> layers_;
};

struct GaussianOutput {
  Tensor mean;     // [batch x d]
  Tensor log_std;  // [batch x d], clamped
  Tensor std;      // [batch x d]
};

// Mlp with 2d outputs read as (mean, log std).
class GaussianHead {
 public:
  static constexpr double kLogStdMin = -7.0;
  static constexpr double kLogStdMax = 7.0;

  GaussianHead() = default;
  explicit GaussianHead(Mlp net);
  // widths = {in, hidden..., } ; output layer of width 2 * dim is appended.
  static GaussianHead he_init(std::size_t in, const std::vector<std::size_t>& hidden,
                              std::size_t dim, Rng& rng);

  GaussianOutput forward(const Tensor& input) const;

  std::size_t dim() const { return dim_; }
  std::size_t in_width() const { return net_.in_width(); }
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

 private:
  Mlp net_;
  std::size_t dim_ = 0;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list; gradients are read from the
// parameters themselves.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options = {});

  // Returns false, leaving parameters and moments untouched, if any gradient
  // is non-finite.
  bool step();
  void zero_grad();

  std::size_t step_count() const { return t_; }
  double lr() const { return options_.lr; }
  void set_lr(double lr) { options_.lr = lr; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamOptions options_;
  std::size_t t_ = 0;
};

// p <- p - lr * grad. Returns false without updating if a gradient is non-finite.
bool sgd_step(std::vector<Tensor>& params, double lr);

bool grads_finite(const std::vector<Tensor>& params);
void zero_grads(std::vector<Tensor>& params);

}  // namespace ssmtl
