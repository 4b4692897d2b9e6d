#include "ssmtl/neural.hpp"

#include <cmath>
#include <stdexcept>

namespace ssmtl {

// ---------------------------------------------------------------------------
// Mlp

void Mlp::check_widths(const std::vector<std::size_t>& widths) {
  if (widths.size() < 2) throw std::invalid_argument("Mlp needs at least two widths");
  for (auto w : widths) {
    if (w == 0) throw std::invalid_argument("Mlp widths must be positive");
  }
}

Mlp Mlp::he_init(const std::vector<std::size_t>& widths, std::uint64_t seed) {
  Rng rng(seed);
  return he_init(widths, rng);
}

Mlp Mlp::he_init(const std::vector<std::size_t>& widths, Rng& rng) {
  check_widths(widths);
  Mlp net;
  net.widths_ = widths;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    const double sd = std::sqrt(2.0 / static_cast<double>(in));
    std::vector<double> w(in * out);
    for (auto& v : w) v = sd * rng.normal();
    net.layers_.push_back({Tensor({in, out}, std::move(w), true), Tensor::zeros({out}, true)});
  }
  return net;
}

Mlp Mlp::constant(const std::vector<std::size_t>& widths, double value) {
  check_widths(widths);
  Mlp net;
  net.widths_ = widths;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    net.layers_.push_back({Tensor::full({widths[l], widths[l + 1]}, value, true),
                           Tensor::full({widths[l + 1]}, value, true)});
  }
  return net;
}

Tensor Mlp::forward(const Tensor& input) const {
  if (layers_.empty()) throw std::logic_error("forward through an empty Mlp");
  if (input.rank() != 2 || input.cols() != in_width()) {
    throw ShapeError("Mlp::forward", input.shape(), Shape{0, in_width()});
  }
  Tensor h = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = linear(h, layers_[l].weight, layers_[l].bias);
    if (l + 1 < layers_.size()) h = relu(h);
  }
  return h;
}

std::vector<Tensor> Mlp::parameters() const {
  std::vector<Tensor> out;
  for (const auto& l : layers_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

Mlp Mlp::copy(bool trainable) const {
  Mlp net;
  net.widths_ = widths_;
  for (const auto& l : layers_) {
    net.layers_.push_back({l.weight.detach().set_requires_grad(trainable),
                           l.bias.detach().set_requires_grad(trainable)});
  }
  return net;
}

void Mlp::save(ParameterStore& store, const std::string& prefix) const {
  std::string w;
  for (std::size_t i = 0; i < widths_.size(); ++i) w += (i ? "," : "") + std::to_string(widths_[i]);
  store.set_attr(prefix + ".widths", w);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    store.put(prefix + ".W" + std::to_string(l), layers_[l].weight);
    store.put(prefix + ".b" + std::to_string(l), layers_[l].bias);
  }
}

Mlp Mlp::load(const ParameterStore& store, const std::string& prefix) {
  Mlp net;
  const std::string& w = store.attr(prefix + ".widths");
  std::size_t pos = 0;
  while (pos <= w.size()) {
    const auto comma = w.find(',', pos);
    const auto token = w.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    net.widths_.push_back(static_cast<std::size_t>(std::stoull(token)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  check_widths(net.widths_);
  for (std::size_t l = 0; l + 1 < net.widths_.size(); ++l) {
    auto W = store.get(prefix + ".W" + std::to_string(l)).detach();
    auto b = store.get(prefix + ".b" + std::to_string(l)).detach();
    if (W.shape() != Shape{net.widths_[l], net.widths_[l + 1]} ||
        b.shape() != Shape{net.widths_[l + 1]}) {
      throw CheckpointError("layer " + std::to_string(l) + " of " + prefix +
                            " does not match its widths");
    }
    W.set_requires_grad(true);
    b.set_requires_grad(true);
    net.layers_.push_back({W, b});
  }
  return net;
}

// ---------------------------------------------------------------------------
// GaussianHead

GaussianHead::GaussianHead(Mlp net) : net_(std::move(net)) {
  if (net_.out_width() % 2 != 0) {
    throw std::invalid_argument("GaussianHead needs an even output width");
  }
  dim_ = net_.out_width() / 2;
}

GaussianHead GaussianHead::he_init(std::size_t in, const std::vector<std::size_t>& hidden,
                                   std::size_t dim, Rng& rng) {
  std::vector<std::size_t> widths{in};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(2 * dim);
  return GaussianHead(Mlp::he_init(widths, rng));
}

GaussianOutput GaussianHead::forward(const Tensor& input) const {
  const Tensor out = net_.forward(input);
  GaussianOutput g;
  g.mean = slice_cols(out, 0, dim_);
  g.log_std = clamp(slice_cols(out, dim_, 2 * dim_), kLogStdMin, kLogStdMax);
  g.std = exp(g.log_std);
  return g;
}

// ---------------------------------------------------------------------------
// Optimizers

bool grads_finite(const std::vector<Tensor>& params) {
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) return false;
    }
  }
  return true;
}

void zero_grads(std::vector<Tensor>& params) {
  for (auto& p : params) p.zero_grad();
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    if (!p.is_leaf()) throw std::invalid_argument("Adam parameters must be leaves");
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

bool Adam::step() {
  if (!grads_finite(params_)) return false;
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto v = p.mutable_values();
    for (std::size_t j = 0; j < v.size(); ++j) {
      m_[i][j] = b1 * m_[i][j] + (1.0 - b1) * g[j];
      v_[i][j] = b2 * v_[i][j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = m_[i][j] / c1;
      const double vhat = v_[i][j] / c2;
      v[j] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
  return true;
}

void Adam::zero_grad() { zero_grads(params_); }

bool sgd_step(std::vector<Tensor>& params, double lr) {
  if (!grads_finite(params)) return false;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto v = p.mutable_values();
    for (std::size_t j = 0; j < v.size(); ++j) v[j] -= lr * g[j];
  }
  return true;
}

}  // namespace ssmtl
