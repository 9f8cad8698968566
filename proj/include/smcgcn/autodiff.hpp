#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape records every value produced during a forward pass together with a
// closure that maps the node's output gradient onto its inputs. Nodes are
// appended in evaluation order, so a single reverse sweep visits each node
// after all of its consumers. Constants and values computed only from
// constants carry no closure and are skipped during the sweep.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "smcgcn/error.hpp"
#include "smcgcn/types.hpp"

namespace smcgcn::ad {

class Tape;

class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }

  // Leaf whose gradient is collected by backward().
  Var variable(Matrix value) { return push(std::move(value), true, nullptr); }

  // Records an op result; differentiable iff any parent is.
  Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool needs = false;
    for (const Var& p : parents) needs = needs || requires_grad(p);
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  Var record(Matrix value, const std::vector<Var>& parents, BackwardFn fn) {
    bool needs = false;
    for (const Var& p : parents) needs = needs || requires_grad(p);
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  const Matrix& value(Var v) const { return nodes_[check(v)].value; }
  bool requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }

  // Gradient of the last backward() root with respect to v (zeros if v did
  // not influence it).
  Matrix grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  template <class Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[check(v)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  void accumulate_at(Var v, Index r, Index c, double g) {
    Node& n = nodes_[check(v)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.grad(r, c) += g;
  }

  void backward(Var root) {
    const int r = check(root);
    if (nodes_[r].value.size() != 1) throw InvariantError("backward root must be a scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[r].requires_grad) return;
    nodes_[r].grad = Matrix::Ones(1, 1);
    for (int i = r; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Matrix value, bool needs_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Matrix(), needs_grad, std::move(fn)});
    return Var(this, static_cast<int>(nodes_.size() - 1));
  }

  int check(Var v) const {
    if (v.tape_ != this || v.id_ < 0 || v.id_ >= static_cast<int>(nodes_.size()))
      throw InvariantError("variable does not belong to this tape");
    return v.id_;
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

namespace detail {
inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InputError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows())
    throw InputError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.rows()) + " differ");
  Tape& t = a.tape();
  return t.record(a.value() * b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g * b.value().transpose());
    if (tp.requires_grad(b)) tp.accumulate(b, a.value().transpose() * g);
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_shape(a, b, "add");
  return a.tape().record(a.value() + b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape(a, b, "sub");
  return a.tape().record(a.value() - b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, -g);
  });
}

// a (n x d) plus row vector b (1 x d) broadcast over rows.
inline Var add_row(Var a, Var b) {
  if (b.rows() != 1 || b.cols() != a.cols())
    throw InputError("add_row: bias must be 1x" + std::to_string(a.cols()));
  Matrix out = a.value().rowwise() + b.value().row(0);
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(b)) tp.accumulate(b, g.colwise().sum());
  });
}

inline Var hadamard(Var a, Var b) {
  detail::require_same_shape(a, b, "hadamard");
  return a.tape().record(a.value().cwiseProduct(b.value()), {a, b},
                         [a, b](Tape& tp, const Matrix& g) {
                           if (tp.requires_grad(a)) tp.accumulate(a, g.cwiseProduct(b.value()));
                           if (tp.requires_grad(b)) tp.accumulate(b, g.cwiseProduct(a.value()));
                         });
}

inline Var relu(Var a) {
  return a.tape().record(a.value().cwiseMax(0.0), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, (a.value().array() > 0.0).select(g.array(), 0.0).matrix());
  });
}

inline Var scale(Var a, double c) {
  return a.tape().record(c * a.value(), {a},
                         [a, c](Tape& tp, const Matrix& g) { tp.accumulate(a, c * g); });
}

inline Var transpose(Var a) {
  return a.tape().record(a.value().transpose(), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g.transpose());
  });
}

// Sum of squared entries, 1x1.
inline Var sum_squares(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return a.tape().record(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, (2.0 * g(0, 0)) * a.value());
  });
}

// Stacks 1x1 scalars into a column vector.
inline Var stack_scalars(const std::vector<Var>& xs) {
  if (xs.empty()) throw InputError("stack_scalars: empty input");
  Matrix out(static_cast<Index>(xs.size()), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].value().size() != 1) throw InputError("stack_scalars: element is not a scalar");
    out(static_cast<Index>(i), 0) = xs[i].scalar();
  }
  return xs.front().tape().record(std::move(out), xs, [xs](Tape& tp, const Matrix& g) {
    for (std::size_t i = 0; i < xs.size(); ++i)
      tp.accumulate(xs[i], g.block(static_cast<Index>(i), 0, 1, 1));
  });
}

// Stacks equally wide row vectors into a matrix.
inline Var stack_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw InputError("stack_rows: empty input");
  const Index width = xs.front().cols();
  Matrix out(static_cast<Index>(xs.size()), width);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].rows() != 1 || xs[i].cols() != width)
      throw InputError("stack_rows: row " + std::to_string(i) + " has wrong shape");
    out.row(static_cast<Index>(i)) = xs[i].value().row(0);
  }
  return xs.front().tape().record(std::move(out), xs, [xs](Tape& tp, const Matrix& g) {
    for (std::size_t i = 0; i < xs.size(); ++i)
      tp.accumulate(xs[i], g.row(static_cast<Index>(i)));
  });
}

// Arithmetic mean of 1x1 scalars.
inline Var mean_scalars(const std::vector<Var>& xs) {
  if (xs.empty()) throw InputError("mean_scalars: empty input");
  const double inv = 1.0 / static_cast<double>(xs.size());
  double s = 0.0;
  for (const Var& x : xs) s += x.scalar();
  Matrix out(1, 1);
  out(0, 0) = s * inv;
  return xs.front().tape().record(std::move(out), xs, [xs, inv](Tape& tp, const Matrix& g) {
    for (const Var& x : xs) tp.accumulate(x, Matrix::Constant(1, 1, g(0, 0) * inv));
  });
}

}  // namespace smcgcn::ad
