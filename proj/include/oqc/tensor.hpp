#pragma once

// Dense rank-2 tensors with define-by-run reverse-mode differentiation.
//
// Every value is an Eigen matrix. Token maps use a channels x tokens layout
// (one column per token), so per-token operations act on contiguous columns.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace oqc {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

inline std::atomic<std::uint64_t>& node_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename Scalar>
struct Node {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool consumed = false;
  std::uint64_t order = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Matrix<Scalar>&)> backward_fn;

  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

inline std::string shape_string(Index rows, Index cols) {
  std::ostringstream os;
  os << "[" << rows << "x" << cols << "]";
  return os.str();
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradScope() { detail::grad_mode() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

/// Shared handle to a node of the computation graph.
///
/// Leaves are either constants or parameters (requires_grad). Results of
/// operations remember their parents and a closure that pushes the incoming
/// gradient to them. Creation order is a topological order of the graph, so
/// backward() simply replays reachable nodes from newest to oldest.
template <typename Scalar>
class Tensor {
 public:
  using Node = detail::Node<Scalar>;
  using MatrixType = Matrix<Scalar>;

  Tensor() = default;

  explicit Tensor(MatrixType value, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->order = detail::node_counter().fetch_add(1);
  }

  static Tensor constant(MatrixType value) { return Tensor(std::move(value), false); }
  static Tensor parameter(MatrixType value) { return Tensor(std::move(value), true); }
  static Tensor scalar(Scalar v, bool requires_grad = false) {
    MatrixType m(1, 1);
    m(0, 0) = v;
    return Tensor(std::move(m), requires_grad);
  }

  /// Result of an operation. `backward` receives d(loss)/d(result).
  static Tensor from_op(MatrixType value, std::vector<Tensor> parents,
                        std::function<void(const MatrixType&)> backward) {
    Tensor out(std::move(value), false);
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward_fn = std::move(backward);
    return out;
  }

  bool defined() const { return node_ != nullptr; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }
  std::string shape_string() const { return detail::shape_string(rows(), cols()); }

  const MatrixType& value() const { return node_->value; }
  /// In-place access for optimizers and checkpoint loading. Only valid on leaves.
  MatrixType& mutable_value() {
    if (node_->backward_fn) throw GraphError("mutable_value() on a non-leaf tensor");
    return node_->value;
  }
  Scalar item() const {
    if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_string());
    return node_->value(0, 0);
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  /// Gradient, or zeros of the value's shape when nothing has accumulated.
  MatrixType grad() const {
    if (has_grad()) return node_->grad;
    return MatrixType::Zero(rows(), cols());
  }
  void zero_grad() { node_->grad.resize(0, 0); }

  /// Internal node, used by operations to wire backward closures.
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared_node() const { return node_; }

  /// Reverse sweep from a scalar loss. Fills grad on every requires_grad
  /// ancestor, then releases the recorded graph. Calling it twice on the same
  /// graph is an error.
  void backward() const {
    if (size() != 1) {
      throw DimensionError("backward() requires a scalar loss, got " + shape_string());
    }
    if (node_->consumed) {
      throw GraphError("backward() already ran on this graph; run a new forward pass");
    }
    if (!node_->requires_grad) {
      throw GraphError("backward() on a tensor that does not depend on any parameter");
    }

    // Owning references keep every node alive while closures are released.
    std::vector<std::shared_ptr<Node>> interior;
    std::unordered_set<Node*> seen;
    std::vector<std::shared_ptr<Node>> stack{node_};
    while (!stack.empty()) {
      std::shared_ptr<Node> n = std::move(stack.back());
      stack.pop_back();
      if (!seen.insert(n.get()).second) continue;
      if (n->consumed) {
        throw GraphError("backward() reached a node whose graph was already released");
      }
      if (!n->backward_fn) continue;
      for (const auto& p : n->parents) stack.push_back(p);
      interior.push_back(std::move(n));
    }
    std::sort(interior.begin(), interior.end(),
              [](const auto& a, const auto& b) { return a->order > b->order; });

    node_->grad = MatrixType::Ones(1, 1);
    for (const auto& n : interior) {
      if (n->grad.size() != 0) n->backward_fn(n->grad);
    }
    for (const auto& n : interior) {
      n->backward_fn = nullptr;
      n->parents.clear();
      n->consumed = true;
      n->grad.resize(0, 0);
    }
  }

  /// Copy of the value with no graph attached.
  Tensor detach() const { return Tensor(node_->value, false); }

 private:
  std::shared_ptr<Node> node_;
};

template <typename Scalar>
inline void require_same_shape(const char* op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

}  // namespace oqc
