// Dense matrix arithmetic with reverse-mode gradient recording.
//
// Every primitive exists twice under the same name: once over plain Eigen
// matrices (eager evaluation, no bookkeeping) and once over Var handles that
// record the operation on a Tape. Model code written against the common names
// runs unchanged in inference and training.
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tpose {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = MatrixX<double>;

/// Bound applied to exp() arguments so that exp never overflows.
inline constexpr double kExpClamp = 40.0;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  std::ostringstream os;
  os << rows << "x" << cols;
  return os.str();
}

template <typename A, typename B>
void require_same_shape(const char* op, const A& a, const B& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) +
                     " vs " + shape_str(b.rows(), b.cols()));
  }
}

template <typename A, typename B>
void require_matmul(const A& a, const B& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shape mismatch " + shape_str(a.rows(), a.cols()) + " vs " +
                     shape_str(b.rows(), b.cols()));
  }
}

template <typename A, typename B>
void require_row_broadcast(const A& a, const B& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_rowwise: shape mismatch " + shape_str(a.rows(), a.cols()) + " vs " +
                     shape_str(row.rows(), row.cols()));
  }
}

template <typename A, typename B>
void require_concat(const A& a, const B& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: shape mismatch " + shape_str(a.rows(), a.cols()) + " vs " +
                     shape_str(b.rows(), b.cols()));
  }
}

template <typename A>
void require_slice(const A& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") outside " + shape_str(a.rows(), a.cols()));
  }
}

template <typename Scalar>
Scalar sigmoid_scalar(Scalar x) {
  // Split on sign so exp never sees a large positive argument.
  if (x >= Scalar(0)) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
  }
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Scalar clamped_exp(Scalar x) {
  return std::exp(std::clamp(x, Scalar(-kExpClamp), Scalar(kExpClamp)));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Eager operations on plain matrices
// ---------------------------------------------------------------------------

template <typename Scalar>
MatrixX<Scalar> matmul(const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) {
  detail::require_matmul(a, b);
  return a * b;
}

template <typename Scalar>
MatrixX<Scalar> add(const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) {
  detail::require_same_shape("add", a, b);
  return a + b;
}

template <typename Scalar>
MatrixX<Scalar> sub(const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) {
  detail::require_same_shape("sub", a, b);
  return a - b;
}

template <typename Scalar>
MatrixX<Scalar> hadamard(const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) {
  detail::require_same_shape("hadamard", a, b);
  return a.cwiseProduct(b);
}

/// a + row, with the 1 x cols row repeated for every row of a.
template <typename Scalar>
MatrixX<Scalar> add_rowwise(const MatrixX<Scalar>& a, const MatrixX<Scalar>& row) {
  detail::require_row_broadcast(a, row);
  MatrixX<Scalar> out = a;
  out.rowwise() += row.row(0);
  return out;
}

template <typename Scalar>
MatrixX<Scalar> scale(const MatrixX<Scalar>& a, Scalar factor) {
  return a * factor;
}

template <typename Scalar>
MatrixX<Scalar> sigmoid(const MatrixX<Scalar>& a) {
  return a.unaryExpr([](Scalar x) { return detail::sigmoid_scalar(x); });
}

template <typename Scalar>
MatrixX<Scalar> tanh(const MatrixX<Scalar>& a) {
  return a.unaryExpr([](Scalar x) { return std::tanh(x); });
}

template <typename Scalar>
MatrixX<Scalar> relu(const MatrixX<Scalar>& a) {
  return a.cwiseMax(Scalar(0));
}

/// Elementwise exp with the argument clamped to [-kExpClamp, kExpClamp].
template <typename Scalar>
MatrixX<Scalar> exp(const MatrixX<Scalar>& a) {
  return a.unaryExpr([](Scalar x) { return detail::clamped_exp(x); });
}

/// 1x1 matrix holding the sum of all entries.
template <typename Scalar>
MatrixX<Scalar> sum(const MatrixX<Scalar>& a) {
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = a.sum();
  return out;
}

template <typename Scalar>
MatrixX<Scalar> concat_cols(const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) {
  detail::require_concat(a, b);
  MatrixX<Scalar> out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

template <typename Scalar>
MatrixX<Scalar> slice_cols(const MatrixX<Scalar>& a, Eigen::Index start, Eigen::Index count) {
  detail::require_slice(a, start, count);
  return a.middleCols(start, count);
}

// ---------------------------------------------------------------------------
// Recording
// ---------------------------------------------------------------------------

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const MatrixX<Scalar>& value() const { return tape_->value(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

  Tape<Scalar>* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of primitive operations for one forward/backward pass.
///
/// Nodes are appended in evaluation order; backward() walks them in exact
/// reverse. A tape is meant to live for a single training step and must stay
/// on the thread that created it.
template <typename Scalar>
class Tape {
 public:
  using Mat = MatrixX<Scalar>;
  /// Propagates the gradient of node `self` into its inputs.
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that receives no gradient.
  Var<Scalar> constant(Mat value) { return push(std::move(value), false, nullptr); }

  /// Leaf whose gradient is collected by backward().
  Var<Scalar> variable(Mat value) { return push(std::move(value), true, nullptr); }

  /// Records a derived node. The node takes part in backward() only if one
  /// of `inputs` does.
  Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> inputs, Backward backward) {
    bool needs = false;
    for (const auto& in : inputs) {
      check_owner(in);
      needs = needs || nodes_[in.id()].needs_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  const Mat& value(std::size_t id) const { return nodes_.at(id).value; }

  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }

  /// Gradient of the last backward() loss with respect to `v`; zeros when
  /// `v` is not connected to the loss.
  Mat gradient(const Var<Scalar>& v) const {
    const Node& node = nodes_.at(v.id());
    if (node.grad.size() == 0) {
      return Mat::Zero(node.value.rows(), node.value.cols());
    }
    return node.grad;
  }

  /// Adds `g` into the gradient buffer of node `id`.
  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& node = nodes_[id];
    if (!node.needs_grad) {
      return;
    }
    if (node.grad.size() == 0) {
      node.grad = g;
    } else {
      node.grad += g;
    }
  }

  /// Gradient buffer of node `id` as seen from inside a Backward callback.
  const Mat& grad(std::size_t id) const { return nodes_[id].grad; }

  void backward(const Var<Scalar>& loss) {
    check_owner(loss);
    const Node& root = nodes_[loss.id()];
    if (root.value.rows() != 1 || root.value.cols() != 1) {
      throw ShapeError("backward: loss must be 1x1, got " +
                       detail::shape_str(root.value.rows(), root.value.cols()));
    }
    for (auto& node : nodes_) {
      node.grad.resize(0, 0);
    }
    accumulate(loss.id(), Mat::Ones(1, 1));
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (node.backward && node.grad.size() != 0) {
        node.backward(*this, id);
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward backward;
    bool needs_grad = false;
  };

  Var<Scalar> push(Mat value, bool needs_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Mat(), std::move(backward), needs_grad});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  void check_owner(const Var<Scalar>& v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) {
      throw std::invalid_argument("Var does not belong to this tape");
    }
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Recorded operations
// ---------------------------------------------------------------------------

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& tape = *a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(matmul(a.value(), b.value()), {a, b}, [ia, ib](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.needs_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(add(a.value(), b.value()), {a, b}, [ia, ib](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(sub(a.value(), b.value()), {a, b}, [ia, ib](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, -t.grad(self));
  });
}

template <typename Scalar>
Var<Scalar> hadamard(const Var<Scalar>& a, const Var<Scalar>& b) {
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(hadamard(a.value(), b.value()), {a, b},
                          [ia, ib](Tape<Scalar>& t, std::size_t self) {
                            const auto& g = t.grad(self);
                            if (t.needs_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                            if (t.needs_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                          });
}

template <typename Scalar>
Var<Scalar> add_rowwise(const Var<Scalar>& a, const Var<Scalar>& row) {
  const std::size_t ia = a.id(), ir = row.id();
  return a.tape()->record(add_rowwise(a.value(), row.value()), {a, row},
                          [ia, ir](Tape<Scalar>& t, std::size_t self) {
                            const auto& g = t.grad(self);
                            t.accumulate(ia, g);
                            if (t.needs_grad(ir)) t.accumulate(ir, g.colwise().sum());
                          });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
  const std::size_t ia = a.id();
  return a.tape()->record(scale(a.value(), factor), {a}, [ia, factor](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self) * factor);
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
  const std::size_t ia = a.id();
  return a.tape()->record(sigmoid(a.value()), {a}, [ia](Tape<Scalar>& t, std::size_t self) {
    const auto& y = t.value(self);
    t.accumulate(ia, t.grad(self).cwiseProduct(y.cwiseProduct((Scalar(1) - y.array()).matrix())));
  });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& a) {
  const std::size_t ia = a.id();
  return a.tape()->record(tanh(a.value()), {a}, [ia](Tape<Scalar>& t, std::size_t self) {
    const auto& y = t.value(self);
    t.accumulate(ia, t.grad(self).cwiseProduct((Scalar(1) - y.array().square()).matrix()));
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  const std::size_t ia = a.id();
  return a.tape()->record(relu(a.value()), {a}, [ia](Tape<Scalar>& t, std::size_t self) {
    const auto& x = t.value(ia);
    t.accumulate(ia, (x.array() > Scalar(0)).select(t.grad(self), Scalar(0)).matrix());
  });
}

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& a) {
  const std::size_t ia = a.id();
  return a.tape()->record(exp(a.value()), {a}, [ia](Tape<Scalar>& t, std::size_t self) {
    const auto& x = t.value(ia);
    const auto& y = t.value(self);
    // Flat outside the clamp window.
    const auto inside = (x.array().abs() <= Scalar(kExpClamp));
    t.accumulate(ia, inside.select(t.grad(self).cwiseProduct(y).array(), Scalar(0)).matrix());
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  const std::size_t ia = a.id();
  return a.tape()->record(sum(a.value()), {a}, [ia](Tape<Scalar>& t, std::size_t self) {
    const auto& x = t.value(ia);
    t.accumulate(ia, MatrixX<Scalar>::Constant(x.rows(), x.cols(), t.grad(self)(0, 0)));
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(const Var<Scalar>& a, const Var<Scalar>& b) {
  const std::size_t ia = a.id(), ib = b.id();
  const Eigen::Index left = a.cols(), right = b.cols();
  return a.tape()->record(concat_cols(a.value(), b.value()), {a, b},
                          [ia, ib, left, right](Tape<Scalar>& t, std::size_t self) {
                            const auto& g = t.grad(self);
                            if (t.needs_grad(ia)) t.accumulate(ia, g.leftCols(left));
                            if (t.needs_grad(ib)) t.accumulate(ib, g.rightCols(right));
                          });
}

template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& a, Eigen::Index start, Eigen::Index count) {
  const std::size_t ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape()->record(slice_cols(a.value(), start, count), {a},
                          [ia, start, count, rows, cols](Tape<Scalar>& t, std::size_t self) {
                            MatrixX<Scalar> g = MatrixX<Scalar>::Zero(rows, cols);
                            g.middleCols(start, count) = t.grad(self);
                            t.accumulate(ia, g);
                          });
}

}  // namespace tpose
