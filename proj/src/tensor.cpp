#include "ssmtl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "ssmtl/kernels.hpp"

namespace ssmtl {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

ShapeError::ShapeError(std::string_view op, const Shape& lhs, const Shape& rhs)
    : std::invalid_argument(std::string(op) + ": incompatible shapes " +
                            shape_to_string(lhs) + " and " + shape_to_string(rhs)),
      lhs_(lhs),
      rhs_(rhs) {}

ShapeError::ShapeError(std::string_view op, const Shape& shape, std::string_view detail)
    : std::invalid_argument(std::string(op) + ": shape " + shape_to_string(shape) +
                            " " + std::string(detail)),
      lhs_(shape) {}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor", shape,
                     "does not match " + std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

// Wraps a freshly computed value as an interior node. Parents and the adjoint
// routine are only retained when some parent participates in differentiation.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<NodePtr> parents, std::function<void(Node&)> backward,
                   bool poisons = false) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->leaf = false;
  node->poisoned = poisons;
  for (const auto& p : parents) {
    node->requires_grad = node->requires_grad || p->requires_grad;
    node->poisoned = node->poisoned || p->poisoned;
  }
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

const NodePtr& need(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
  return t.node();
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(op, t.shape(), "is not rank 2");
}

// Index mapping from an output element to the element of one broadcast operand.
struct OperandMap {
  enum class Kind { Same, Scalar, Periodic, General };
  Kind kind = Kind::Same;
  std::size_t period = 1;
  std::vector<std::size_t> index;

  std::size_t operator()(std::size_t i) const {
    switch (kind) {
      case Kind::Same: return i;
      case Kind::Scalar: return 0;
      case Kind::Periodic: return i % period;
      case Kind::General: return index[i];
    }
    return i;
  }
};

struct BroadcastPlan {
  Shape out;
  OperandMap a;
  OperandMap b;
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

OperandMap general_map(const Shape& operand, const Shape& out) {
  OperandMap map;
  map.kind = OperandMap::Kind::General;
  const std::size_t rank = out.size();
  const std::size_t offset = rank - operand.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t d = rank; d-- > offset;) {
    const std::size_t od = operand[d - offset];
    stride[d] = od == 1 ? 0 : s;
    s *= od;
  }
  const std::size_t n = shape_numel(out);
  map.index.resize(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map.index[i] = pos;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      pos += stride[d];
      if (counter[d] < out[d]) break;
      pos -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return map;
}

BroadcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  const std::size_t na = shape_numel(a);
  const std::size_t nb = shape_numel(b);
  if (a == b) {
    plan.out = a;
    return plan;
  }
  if (na == 1 && nb == 1) {
    plan.out = a.size() >= b.size() ? a : b;
    return plan;
  }
  if (na == 1) {
    plan.out = b;
    plan.a.kind = OperandMap::Kind::Scalar;
    return plan;
  }
  if (nb == 1) {
    plan.out = a;
    plan.b.kind = OperandMap::Kind::Scalar;
    return plan;
  }
  if (is_suffix(b, a)) {
    plan.out = a;
    plan.b.kind = OperandMap::Kind::Periodic;
    plan.b.period = nb;
    return plan;
  }
  if (is_suffix(a, b)) {
    plan.out = b;
    plan.a.kind = OperandMap::Kind::Periodic;
    plan.a.period = na;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  plan.out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) throw ShapeError(op, a, b);
    plan.out[i] = std::max(da, db);
  }
  plan.a = a == plan.out ? OperandMap{} : general_map(a, plan.out);
  plan.b = b == plan.out ? OperandMap{} : general_map(b, plan.out);
  return plan;
}

// f(x, y) -> value; da/db(x, y, out) -> partial derivatives.
template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const auto& na = need(a, op);
  const auto& nb = need(b, op);
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(op, na->shape, nb->shape));
  const std::size_t n = shape_numel(plan->out);
  std::vector<double> out(n);
  const auto& av = na->value;
  const auto& bv = nb->value;
  if (plan->a.kind == OperandMap::Kind::Same && plan->b.kind == OperandMap::Kind::Same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[plan->a(i)], bv[plan->b(i)]);
  }
  return make_result(op, plan->out, std::move(out), {na, nb},
                     [plan, da, db](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       const std::size_t n = self.value.size();
                       if (pa.requires_grad) {
                         pa.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) {
                           const std::size_t ia = plan->a(i);
                           pa.grad[ia] += self.grad[i] *
                                          da(pa.value[ia], pb.value[plan->b(i)], self.value[i]);
                         }
                       }
                       if (pb.requires_grad) {
                         pb.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) {
                           const std::size_t ib = plan->b(i);
                           pb.grad[ib] += self.grad[i] *
                                          db(pa.value[plan->a(i)], pb.value[ib], self.value[i]);
                         }
                       }
                     });
}

// f(x) -> value; df(x, out) -> derivative.
template <class F, class DF>
Tensor unary(const char* op, const Tensor& a, F f, DF df, bool poisons = false) {
  const auto& na = need(a, op);
  std::vector<double> out(na->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(na->value[i]);
  return make_result(op, na->shape, std::move(out), {na},
                     [df](Node& self) {
                       Node& p = *self.parents[0];
                       p.ensure_grad();
                       for (std::size_t i = 0; i < self.value.size(); ++i) {
                         p.grad[i] += self.grad[i] * df(p.value[i], self.value[i]);
                       }
                     },
                     poisons);
}

bool any_non_positive(const std::vector<double>& v) {
  return std::any_of(v.begin(), v.end(), [](double x) { return !(x > 0.0); });
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(make_leaf(std::move(shape), std::move(values), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::ones(Shape shape, bool requires_grad) {
  return full(std::move(shape), 1.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

Tensor Tensor::row(std::span<const double> values, bool requires_grad) {
  return Tensor(Shape{1, values.size()}, std::vector<double>(values.begin(), values.end()),
                requires_grad);
}

Node& Tensor::checked() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return checked().shape; }
std::size_t Tensor::numel() const { return checked().value.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("dim", s, "has no axis " + std::to_string(axis));
  return s[axis];
}

std::size_t Tensor::rows() const { return dim(0); }
std::size_t Tensor::cols() const { return dim(1); }

std::span<const double> Tensor::values() const { return checked().value; }

std::span<double> Tensor::mutable_values() {
  auto& n = checked();
  if (!n.leaf) throw std::logic_error("mutable_values() on a non-leaf tensor");
  return n.value;
}

double Tensor::item() const {
  const auto& n = checked();
  if (n.value.size() != 1) throw ShapeError("item", n.shape, "is not a single element");
  return n.value[0];
}

double Tensor::at(std::size_t flat) const { return checked().value.at(flat); }

double Tensor::at(std::size_t r, std::size_t c) const {
  return checked().value.at(r * cols() + c);
}

std::vector<double> Tensor::to_vector() const { return checked().value; }

bool Tensor::requires_grad() const { return checked().requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  auto& n = checked();
  if (!n.leaf) throw std::logic_error("requires_grad can only be set on leaves");
  n.requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return checked().leaf; }
bool Tensor::poisoned() const { return checked().poisoned; }
const char* Tensor::op_name() const { return checked().op; }

bool Tensor::has_grad() const {
  const auto& n = checked();
  return n.grad.size() == n.value.size();
}

std::span<const double> Tensor::grad() const { return checked().grad; }

void Tensor::zero_grad() {
  auto& n = checked();
  if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

void Tensor::backward() const { Tape::record(*this).backward(); }

Tensor Tensor::detach() const {
  const auto& n = checked();
  return Tensor(n.shape, n.value, false);
}

// ---------------------------------------------------------------------------
// Tape

Tape Tape::record(const Tensor& root) {
  Tape tape;
  tape.root_ = need(root, "backward");
  std::unordered_map<const Node*, std::size_t> position;
  std::unordered_set<const Node*> on_stack;
  // Iterative post-order DFS: a node is emitted once all parents are emitted.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(tape.root_.get(), 0);
  on_stack.insert(tape.root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (!position.contains(parent) && !on_stack.contains(parent)) {
        on_stack.insert(parent);
        stack.emplace_back(parent, 0);
      }
      continue;
    }
    Entry entry;
    entry.op = node->op;
    entry.leaf = node->leaf;
    for (const auto& p : node->parents) entry.inputs.push_back(position.at(p.get()));
    position.emplace(node, tape.nodes_.size());
    tape.nodes_.push_back(node);
    tape.entries_.push_back(std::move(entry));
    on_stack.erase(node);
    stack.pop_back();
  }
  return tape;
}

bool Tape::poisoned() const { return root_ && root_->poisoned; }

void Tape::backward() const {
  if (!root_) throw std::logic_error("backward on an empty tape");
  if (root_->value.size() != 1) {
    throw ShapeError("backward", root_->shape, "is not a scalar");
  }
  if (root_->poisoned) {
    throw PoisonedTapeError("backward: graph contains NaN from log/sqrt of a non-positive value");
  }
  if (!root_->requires_grad) return;
  for (Node* n : nodes_) {
    if (n->leaf) continue;
    n->grad.assign(n->value.size(), 0.0);
  }
  root_->ensure_grad();
  if (!root_->leaf) root_->grad[0] = 1.0;
  else root_->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node* n = *it;
    if (!n->leaf && n->requires_grad && n->backward) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Operations

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Tensor neg(const Tensor& a) {
  return unary(
      "neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(
      "add_scalar", a, [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& na = need(a, "matmul");
  const auto& nb = need(b, "matmul");
  if (na->shape.size() != 2 || nb->shape.size() != 2 || na->shape[1] != nb->shape[0]) {
    throw ShapeError("matmul", na->shape, nb->shape);
  }
  const std::size_t m = na->shape[0], k = na->shape[1], n = nb->shape[1];
  std::vector<double> out(m * n);
  kernels::gemm(kernels::Transpose::No, kernels::Transpose::No, {m, n, k}, na->value.data(),
                nb->value.data(), out.data(), false);
  return make_result("matmul", {m, n}, std::move(out), {na, nb}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    using kernels::Transpose;
    if (pa.requires_grad) {
      pa.ensure_grad();
      kernels::gemm(Transpose::No, Transpose::Yes, {m, k, n}, self.grad.data(), pb.value.data(),
                    pa.grad.data(), true);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      kernels::gemm(Transpose::Yes, Transpose::No, {k, n, m}, pa.value.data(), self.grad.data(),
                    pb.grad.data(), true);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const auto& nx = need(x, "linear");
  const auto& nw = need(weight, "linear");
  const auto& nb = need(bias, "linear");
  if (nx->shape.size() != 2 || nw->shape.size() != 2 || nx->shape[1] != nw->shape[0]) {
    throw ShapeError("linear", nx->shape, nw->shape);
  }
  const std::size_t m = nx->shape[0], k = nx->shape[1], n = nw->shape[1];
  if (nb->value.size() != n) throw ShapeError("linear", nw->shape, nb->shape);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(nb->value.begin(), nb->value.end(), out.begin() + i * n);
  }
  kernels::gemm(kernels::Transpose::No, kernels::Transpose::No, {m, n, k}, nx->value.data(),
                nw->value.data(), out.data(), true);
  return make_result("linear", {m, n}, std::move(out), {nx, nw, nb}, [m, k, n](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    using kernels::Transpose;
    if (px.requires_grad) {
      px.ensure_grad();
      kernels::gemm(Transpose::No, Transpose::Yes, {m, k, n}, self.grad.data(), pw.value.data(),
                    px.grad.data(), true);
    }
    if (pw.requires_grad) {
      pw.ensure_grad();
      kernels::gemm(Transpose::Yes, Transpose::No, {k, n, m}, px.value.data(), self.grad.data(),
                    pw.grad.data(), true);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* g = self.grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) pb.grad[j] += g[j];
      }
    }
  });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  const bool bad = any_non_positive(need(a, "log")->value);
  return unary(
      "log", a, [](double x) { return x > 0.0 ? std::log(x) : kNaN; },
      [](double x, double) { return 1.0 / x; }, bad);
}

Tensor sqrt(const Tensor& a) {
  const bool bad = any_non_positive(need(a, "sqrt")->value);
  return unary(
      "sqrt", a, [](double x) { return x > 0.0 ? std::sqrt(x) : kNaN; },
      [](double, double y) { return 0.5 / y; }, bad);
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(
      "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
  const auto& na = need(a, "sum");
  double s = 0.0;
  for (double v : na->value) s += v;
  return make_result("sum", {}, {s}, {na}, [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (double& g : p.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const auto& na = need(a, "mean");
  if (na->value.empty()) throw ShapeError("mean", na->shape, "is empty");
  return scale(sum(a), 1.0 / static_cast<double>(na->value.size()));
}

Tensor sum_rows(const Tensor& a) {
  require_rank2("sum_rows", a);
  const auto& na = a.node();
  const std::size_t r = na->shape[0], c = na->shape[1];
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += na->value[i * c + j];
    out[i] = s;
  }
  return make_result("sum_rows", {r}, std::move(out), {na}, [r, c](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[i];
    }
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2("slice_cols", a);
  const auto& na = a.node();
  const std::size_t r = na->shape[0], c = na->shape[1];
  if (begin > end || end > c) {
    throw ShapeError("slice_cols", na->shape,
                     "cannot slice columns [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ")");
  }
  const std::size_t w = end - begin;
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(na->value.begin() + static_cast<std::ptrdiff_t>(i * c + begin), w,
                out.begin() + static_cast<std::ptrdiff_t>(i * w));
  }
  return make_result("slice_cols", {r, w}, std::move(out), {na}, [r, c, w, begin](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < w; ++j) p.grad[i * c + begin + j] += self.grad[i * w + j];
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  std::vector<NodePtr> nodes;
  std::vector<std::size_t> widths;
  const std::size_t r = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2("concat_cols", p);
    if (p.rows() != r) throw ShapeError("concat_cols", parts.front().shape(), p.shape());
    nodes.push_back(p.node());
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const std::size_t w = widths[k];
    for (std::size_t i = 0; i < r; ++i) {
      std::copy_n(nodes[k]->value.begin() + static_cast<std::ptrdiff_t>(i * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(i * total + offset));
    }
    offset += w;
  }
  return make_result("concat_cols", {r, total}, std::move(out), std::move(nodes),
                     [r, total, widths](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         Node& p = *self.parents[k];
                         const std::size_t w = widths[k];
                         if (p.requires_grad) {
                           p.ensure_grad();
                           for (std::size_t i = 0; i < r; ++i) {
                             for (std::size_t j = 0; j < w; ++j) {
                               p.grad[i * w + j] += self.grad[i * total + off + j];
                             }
                           }
                         }
                         off += w;
                       }
                     });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  require_rank2("gather_rows", a);
  const auto& na = a.node();
  const std::size_t rows = na->shape[0], c = na->shape[1];
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(idx.size() * c);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= rows) {
      throw ShapeError("gather_rows", na->shape, "has no row " + std::to_string(idx[r]));
    }
    std::copy_n(na->value.begin() + static_cast<std::ptrdiff_t>(idx[r] * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(r * c));
  }
  const std::size_t n_out = idx.size();
  return make_result("gather_rows", {n_out, c}, std::move(out), {na},
                     [idx = std::move(idx), c](Node& self) {
                       Node& p = *self.parents[0];
                       p.ensure_grad();
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         for (std::size_t j = 0; j < c; ++j) {
                           p.grad[idx[r] * c + j] += self.grad[r * c + j];
                         }
                       }
                     });
}

Tensor segment_sum(const Tensor& a, std::span<const std::size_t> index, std::size_t segments) {
  const auto& na = need(a, "segment_sum");
  if (na->shape.size() != 1 || na->value.size() != index.size()) {
    throw ShapeError("segment_sum", na->shape, Shape{index.size()});
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(segments, 0.0);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= segments) {
      throw ShapeError("segment_sum", na->shape,
                       "maps row to segment " + std::to_string(idx[r]) + " of " +
                           std::to_string(segments));
    }
    out[idx[r]] += na->value[r];
  }
  return make_result("segment_sum", {segments}, std::move(out), {na},
                     [idx = std::move(idx)](Node& self) {
                       Node& p = *self.parents[0];
                       p.ensure_grad();
                       for (std::size_t r = 0; r < idx.size(); ++r) p.grad[r] += self.grad[idx[r]];
                     });
}

Tensor ones_like(const Tensor& a) { return Tensor::ones(a.shape()); }
Tensor zeros_like(const Tensor& a) { return Tensor::zeros(a.shape()); }

}  // namespace ssmtl
