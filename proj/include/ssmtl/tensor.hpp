#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

// Dense f64 tensors with eager reverse-mode differentiation.
//
// Every operation whose inputs require gradients records its parents and an
// adjoint routine on the result node. Tape::record() linearizes the graph
// reachable from a scalar into topological order, and backward() replays it in
// reverse. A tensor graph is confined to one thread; separate graphs share no
// mutable state.

namespace ssmtl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string_view op, const Shape& lhs, const Shape& rhs);
  ShapeError(std::string_view op, const Shape& shape, std::string_view detail);

  const Shape& lhs() const { return lhs_; }
  const Shape& rhs() const { return rhs_; }

 private:
  Shape lhs_;
  Shape rhs_;
};

// Raised by backward() when the graph contains a NaN produced by log/sqrt of a
// non-positive value.
class PoisonedTapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool poisoned = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // 1 x n row built from a flat vector.
  static Tensor row(std::span<const double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  // Writable view of a leaf's storage. Used by optimizers.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat) const;
  double at(std::size_t r, std::size_t c) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;
  bool poisoned() const;
  const char* op_name() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Accumulates d(this)/d(leaf) into every reachable leaf that requires grad.
  void backward() const;

  // New leaf holding a copy of the values, detached from any graph.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  detail::Node& checked() const;
  std::shared_ptr<detail::Node> node_;
};

// Topologically ordered record of the operations reachable from a root.
class Tape {
 public:
  struct Entry {
    std::string_view op;
    std::vector<std::size_t> inputs;  // indices into entries(), all < own index
    bool leaf = false;
  };

  static Tape record(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  bool poisoned() const;
  void backward() const;

 private:
  std::vector<detail::Node*> nodes_;
  std::vector<Entry> entries_;
  std::shared_ptr<detail::Node> root_;
};

// Elementwise arithmetic. Shapes must be equal or broadcastable under
// trailing-dimension rules (numpy style); a single-element tensor broadcasts
// against anything.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }

// [m x k] . [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// x . w + b for x [batch x in], w [in x out], b [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// relu'(0) is 0.
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
// log/sqrt of a non-positive entry yields NaN and poisons the result.
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
// Gradient is zero where the input lies outside [lo, hi].
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Sum over the columns of a rank-2 tensor: [rows x cols] -> [rows].
Tensor sum_rows(const Tensor& a);

// Columns [begin, end) of a rank-2 tensor.
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
// Concatenates rank-2 tensors with equal row counts along columns.
Tensor concat_cols(const std::vector<Tensor>& parts);
// out[r, :] = a[index[r], :]
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index);
// out[s] = sum of a[r] over rows r with index[r] == s. a is rank 1.
Tensor segment_sum(const Tensor& a, std::span<const std::size_t> index,
                   std::size_t segments);

Tensor ones_like(const Tensor& a);
Tensor zeros_like(const Tensor& a);

}  // namespace ssmtl
