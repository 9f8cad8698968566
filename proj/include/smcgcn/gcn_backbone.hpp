#pragma once

// Chebyshev spectral graph convolution used as the particle transition.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "smcgcn/autodiff.hpp"
#include "smcgcn/error.hpp"
#include "smcgcn/types.hpp"

namespace smcgcn {

// Trainable array with a same-shape gradient accumulator.
struct Tensor {
  Matrix value;
  Matrix grad;

  Tensor() = default;
  explicit Tensor(Matrix v) : value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct ChebLayer {
  std::vector<Tensor> weights;  // one d_in x d_out matrix per Chebyshev order
  Tensor bias;                  // 1 x d_out

  Index order() const { return static_cast<Index>(weights.size()); }
  Index d_in() const { return weights.empty() ? 0 : weights.front().value.rows(); }
  Index d_out() const { return weights.empty() ? 0 : weights.front().value.cols(); }

  void validate() const {
    if (weights.empty()) throw InputError("Chebyshev layer needs order >= 1");
    for (const auto& w : weights) {
      if (w.value.rows() != d_in() || w.value.cols() != d_out())
        throw InputError("Chebyshev weights disagree on shape");
      if (!w.value.allFinite()) throw NumericalError("non-finite Chebyshev weight");
    }
    if (bias.value.rows() != 1 || bias.value.cols() != d_out())
      throw InputError("Chebyshev bias must be 1x" + std::to_string(d_out()));
  }
};

// Glorot-uniform weights per order, zero bias.
inline ChebLayer make_cheb_layer(Index d_in, Index d_out, Index order, Rng& rng) {
  if (order < 1) throw InputError("Chebyshev order must be >= 1");
  if (d_in < 1 || d_out < 1) throw InputError("Chebyshev layer dimensions must be positive");
  const double limit = std::sqrt(6.0 / static_cast<double>(d_in + d_out));
  std::uniform_real_distribution<double> unif(-limit, limit);
  ChebLayer layer;
  for (Index k = 0; k < order; ++k) {
    Matrix w(d_in, d_out);
    for (Index j = 0; j < d_out; ++j)
      for (Index i = 0; i < d_in; ++i) w(i, j) = unif(rng);
    layer.weights.emplace_back(std::move(w));
  }
  layer.bias = Tensor(Matrix::Zero(1, d_out));
  return layer;
}

// Largest eigenvalue of a symmetric positive semidefinite matrix by power
// iteration. Stops once the Rayleigh residual ||Lv - lambda v|| drops below
// tol * lambda.
inline double power_iteration_lambda_max(const Matrix& l, double tol = 1e-6, int max_iter = 2000) {
  const Index n = l.rows();
  if (n == 0) return 0.0;
  // Fixed, non-symmetric start so it is not orthogonal to common eigenvectors.
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = 1.0 + 0.5 * std::sin(1.7 * static_cast<double>(i) + 0.3);
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Vector w = l * v;
    lambda = v.dot(w);
    const double wn = w.norm();
    if (wn == 0.0) return 0.0;
    if (it > 0 && (w - lambda * v).norm() <= tol * std::abs(lambda)) break;
    v = w / wn;
  }
  return lambda;
}

// Normalized Laplacian on |A| rescaled to spectrum [-1, 1]:
//   L = I - D^{-1/2} |A| D^{-1/2},  L~ = (2 / lambda_max) L - I.
// Nodes with zero degree get a unit self-loop.
inline Matrix scaled_laplacian(const Matrix& a) {
  const Index n = a.rows();
  if (a.cols() != n) throw InputError("scaled_laplacian expects a square matrix");
  Matrix w = a.cwiseAbs();
  Vector deg = w.rowwise().sum();
  for (Index i = 0; i < n; ++i) {
    if (deg(i) <= 0.0) {
      w(i, i) = 1.0;
      deg(i) = 1.0;
    }
  }
  const Vector inv_sqrt = deg.cwiseSqrt().cwiseInverse();
  Matrix lap = -(inv_sqrt.asDiagonal() * w * inv_sqrt.asDiagonal());
  lap.diagonal().array() += 1.0;
  lap = 0.5 * (lap + lap.transpose()).eval();
  double lambda_max = power_iteration_lambda_max(lap);
  if (lambda_max > 2.0) lambda_max = 2.0;
  if (!(lambda_max > 1e-12)) lambda_max = 2.0;  // L == 0: result is -I either way
  Matrix out = (2.0 / lambda_max) * lap;
  out.diagonal().array() -= 1.0;
  return out;
}

// T_0(L)F, ..., T_{order-1}(L)F via T_k = 2 L T_{k-1} - T_{k-2}.
inline std::vector<Matrix> chebyshev_basis(const Matrix& features, const Matrix& lap, Index order) {
  std::vector<Matrix> basis;
  basis.reserve(static_cast<std::size_t>(order));
  basis.push_back(features);
  if (order > 1) basis.push_back(lap * features);
  for (Index k = 2; k < order; ++k) {
    Matrix next = 2.0 * (lap * basis[static_cast<std::size_t>(k - 1)]);
    next -= basis[static_cast<std::size_t>(k - 2)];
    basis.push_back(std::move(next));
  }
  return basis;
}

namespace detail {
inline void check_cheb_shapes(const Matrix& features, const Matrix& lap, const ChebLayer& layer) {
  if (lap.rows() != lap.cols() || lap.rows() != features.rows())
    throw InputError("cheb_forward: Laplacian is " + std::to_string(lap.rows()) + "x" +
                     std::to_string(lap.cols()) + " but features have " +
                     std::to_string(features.rows()) + " rows");
  if (features.cols() != layer.d_in())
    throw InputError("cheb_forward: features have " + std::to_string(features.cols()) +
                     " columns, layer expects d_in=" + std::to_string(layer.d_in()));
}
}  // namespace detail

// H = sum_k T_k(L~) F W_k + bias, optionally followed by ReLU.
inline Matrix cheb_forward(const Matrix& features, const Matrix& lap, const ChebLayer& layer,
                           bool apply_relu) {
  layer.validate();
  detail::check_cheb_shapes(features, lap, layer);
  const auto basis = chebyshev_basis(features, lap, layer.order());
  Matrix out = basis[0] * layer.weights[0].value;
  for (Index k = 1; k < layer.order(); ++k)
    out.noalias() += basis[static_cast<std::size_t>(k)] * layer.weights[static_cast<std::size_t>(k)].value;
  out.rowwise() += layer.bias.value.row(0);
  if (apply_relu) out = out.cwiseMax(0.0);
  return out;
}

namespace ad {

// Differentiable Chebyshev convolution (pre-activation). The Laplacian is a
// constant of the computation; gradients flow to the features, every W_k and
// the bias. The feature adjoint runs the three-term recursion backwards.
inline Var cheb_conv(Var features, std::shared_ptr<const Matrix> lap_ptr,
                     const std::vector<Var>& weights, Var bias) {
  const Matrix& lap = *lap_ptr;
  const Index order = static_cast<Index>(weights.size());
  if (order < 1) throw InputError("cheb_conv: order must be >= 1");
  if (lap.rows() != features.rows() || lap.cols() != features.rows())
    throw InputError("cheb_conv: Laplacian/feature shape mismatch");
  for (const Var& w : weights)
    if (w.rows() != features.cols() || w.cols() != weights.front().cols())
      throw InputError("cheb_conv: weight shape mismatch, features have " +
                       std::to_string(features.cols()) + " columns");
  if (bias.rows() != 1 || bias.cols() != weights.front().cols())
    throw InputError("cheb_conv: bias shape mismatch");

  auto basis = std::make_shared<std::vector<Matrix>>(chebyshev_basis(features.value(), lap, order));
  Matrix out = (*basis)[0] * weights[0].value();
  for (Index k = 1; k < order; ++k)
    out.noalias() += (*basis)[static_cast<std::size_t>(k)] * weights[static_cast<std::size_t>(k)].value();
  out.rowwise() += bias.value().row(0);

  std::vector<Var> parents = weights;
  parents.push_back(bias);
  parents.push_back(features);
  return features.tape().record(
      std::move(out), parents,
      [features, weights, bias, basis, lap_copy = std::move(lap_ptr), order](Tape& tp, const Matrix& g) {
        for (Index k = 0; k < order; ++k) {
          const Var& w = weights[static_cast<std::size_t>(k)];
          if (tp.requires_grad(w)) tp.accumulate(w, (*basis)[static_cast<std::size_t>(k)].transpose() * g);
        }
        if (tp.requires_grad(bias)) tp.accumulate(bias, g.colwise().sum());
        if (!tp.requires_grad(features)) return;
        std::vector<Matrix> adj;
        adj.reserve(static_cast<std::size_t>(order));
        for (Index k = 0; k < order; ++k)
          adj.push_back(g * weights[static_cast<std::size_t>(k)].value().transpose());
        const Matrix& l = *lap_copy;  // symmetric, so L^T == L
        for (Index k = order - 1; k >= 2; --k) {
          adj[static_cast<std::size_t>(k - 1)].noalias() += 2.0 * (l * adj[static_cast<std::size_t>(k)]);
          adj[static_cast<std::size_t>(k - 2)] -= adj[static_cast<std::size_t>(k)];
        }
        if (order > 1) adj[0].noalias() += l * adj[1];
        tp.accumulate(features, adj[0]);
      });
}

inline Var cheb_conv(Var features, const Matrix& lap, const std::vector<Var>& weights, Var bias) {
  return cheb_conv(features, std::make_shared<const Matrix>(lap), weights, bias);
}

}  // namespace ad

}  // namespace smcgcn
