#pragma once

// Graph readout (mean || max over nodes), MLP head, particle-weighted
// prediction and the per-timestamp cross-entropy loss.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "smcgcn/autodiff.hpp"
#include "smcgcn/error.hpp"
#include "smcgcn/gcn_backbone.hpp"
#include "smcgcn/types.hpp"

namespace smcgcn {

inline constexpr double kProbabilityFloor = 1e-12;

// 2*d_hidden -> d_mlp -> classes, ReLU in between.
struct MlpHead {
  Tensor w1;  // (2 d_hidden) x d_mlp
  Tensor b1;  // 1 x d_mlp
  Tensor w2;  // d_mlp x classes
  Tensor b2;  // 1 x classes

  Index input_width() const { return w1.value.rows(); }
  Index classes() const { return w2.value.cols(); }

  void validate() const {
    if (w1.value.cols() != b1.value.cols() || w1.value.cols() != w2.value.rows() ||
        w2.value.cols() != b2.value.cols() || b1.value.rows() != 1 || b2.value.rows() != 1)
      throw InputError("MLP head shapes do not chain");
    if (classes() < 2) throw InputError("MLP head needs at least 2 classes");
  }
};

inline MlpHead make_mlp_head(Index d_hidden, Index d_mlp, Index classes, Rng& rng) {
  if (d_hidden < 1 || d_mlp < 1) throw InputError("MLP widths must be positive");
  if (classes < 2) throw InputError("MLP head needs at least 2 classes");
  auto glorot = [&rng](Index in, Index out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> unif(-limit, limit);
    Matrix w(in, out);
    for (Index j = 0; j < out; ++j)
      for (Index i = 0; i < in; ++i) w(i, j) = unif(rng);
    return w;
  };
  MlpHead head;
  head.w1 = Tensor(glorot(2 * d_hidden, d_mlp));
  head.b1 = Tensor(Matrix::Zero(1, d_mlp));
  head.w2 = Tensor(glorot(d_mlp, classes));
  head.b2 = Tensor(Matrix::Zero(1, classes));
  return head;
}

// Column-wise mean concatenated with column-wise max.
inline RowVector readout(const Matrix& hidden) {
  if (hidden.rows() < 1 || hidden.cols() < 1) throw InputError("readout of an empty graph");
  RowVector z(2 * hidden.cols());
  z.head(hidden.cols()) = hidden.colwise().mean();
  z.tail(hidden.cols()) = hidden.colwise().maxCoeff();
  return z;
}

inline RowVector mlp_logits(const RowVector& z, const MlpHead& head) {
  if (z.size() != head.input_width())
    throw InputError("MLP input has width " + std::to_string(z.size()) + ", expected " +
                     std::to_string(head.input_width()));
  RowVector h = (z * head.w1.value + head.b1.value).cwiseMax(0.0);
  return h * head.w2.value + head.b2.value;
}

inline RowVector softmax(const RowVector& logits) {
  const double m = logits.maxCoeff();
  RowVector e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

// y = sum_k w_k softmax(MLP(readout(H_k))).
inline Vector predict(std::span<const double> weights, std::span<const Matrix> embeddings,
                      const MlpHead& head) {
  if (weights.size() != embeddings.size() || weights.empty())
    throw InputError("predict: need one embedding per particle");
  Vector y = Vector::Zero(head.classes());
  for (std::size_t k = 0; k < weights.size(); ++k)
    y += weights[k] * softmax(mlp_logits(readout(embeddings[k]), head)).transpose();
  return y;
}

struct PredictionRecord {
  std::vector<Vector> per_timestamp;  // y_t, each on the simplex
  int label = 0;

  Vector averaged() const {
    Vector m = Vector::Zero(per_timestamp.front().size());
    for (const auto& y : per_timestamp) m += y;
    return m / static_cast<double>(per_timestamp.size());
  }
  const Vector& last() const { return per_timestamp.back(); }
};

// Mean over timestamps of -log max(y_t[label], 1e-12).
inline double sequence_loss(std::span<const Vector> per_timestamp, int label) {
  if (per_timestamp.empty()) throw InputError("sequence_loss needs at least one timestamp");
  double total = 0.0;
  for (const auto& y : per_timestamp) {
    if (label < 0 || label >= y.size())
      throw InputError("label " + std::to_string(label) + " out of range for " +
                       std::to_string(y.size()) + " classes");
    total += -std::log(std::max(y(label), kProbabilityFloor));
  }
  return total / static_cast<double>(per_timestamp.size());
}

namespace ad {

inline Var readout(Var hidden) {
  const Matrix& h = hidden.value();
  const RowVector z = smcgcn::readout(h);
  const Index d = h.cols();
  std::vector<Index> argmax(static_cast<std::size_t>(d));
  for (Index j = 0; j < d; ++j) h.col(j).maxCoeff(&argmax[static_cast<std::size_t>(j)]);
  return hidden.tape().record(Matrix(z), {hidden}, [hidden, argmax, d](Tape& tp, const Matrix& g) {
    const Index rows = hidden.rows();
    Matrix gh(rows, d);
    for (Index j = 0; j < d; ++j) gh.col(j).setConstant(g(0, j) / static_cast<double>(rows));
    for (Index j = 0; j < d; ++j) gh(argmax[static_cast<std::size_t>(j)], j) += g(0, d + j);
    tp.accumulate(hidden, gh);
  });
}

inline Var softmax_row(Var logits) {
  if (logits.rows() != 1) throw InputError("softmax_row expects a row vector");
  const RowVector p = smcgcn::softmax(logits.value().row(0));
  return logits.tape().record(Matrix(p), {logits}, [logits, p](Tape& tp, const Matrix& g) {
    const double dot = g.row(0).dot(p);
    tp.accumulate(logits, (p.array() * (g.row(0).array() - dot)).matrix());
  });
}

struct MlpVars {
  Var w1, b1, w2, b2;
};

inline Var mlp_logits(Var z, const MlpVars& head) {
  return add_row(matmul(relu(add_row(matmul(z, head.w1), head.b1)), head.w2), head.b2);
}

// -log max(y[label], floor), 1x1.
inline Var nll(Var probs, int label) {
  if (probs.rows() != 1 || label < 0 || label >= probs.cols())
    throw InputError("label " + std::to_string(label) + " out of range");
  const double p = probs.value()(0, label);
  Matrix out(1, 1);
  out(0, 0) = -std::log(std::max(p, kProbabilityFloor));
  return probs.tape().record(std::move(out), {probs}, [probs, label, p](Tape& tp, const Matrix& g) {
    if (p > kProbabilityFloor) tp.accumulate_at(probs, 0, label, -g(0, 0) / p);
  });
}

}  // namespace ad

}  // namespace smcgcn
