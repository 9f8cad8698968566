#pragma once

// Sliding-window graph construction from ROI time series: Pearson
// correlation profiles as node features and shrinkage partial correlations
// (top-k sparsified) as adjacency.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "smcgcn/error.hpp"
#include "smcgcn/types.hpp"

namespace smcgcn {

// ROI-by-timestamp signal. values is R x N.
struct TimeSeries {
  Matrix values;
  std::vector<std::string> roi_labels;

  Index rois() const { return values.rows(); }
  Index length() const { return values.cols(); }

  void validate() const {
    if (values.rows() < 2 || values.cols() < 2)
      throw InputError("time series needs at least 2 ROIs and 2 timestamps, got " +
                       std::to_string(values.rows()) + "x" + std::to_string(values.cols()));
    if (!values.allFinite()) throw InputError("time series contains non-finite values");
    if (static_cast<Index>(roi_labels.size()) != values.rows())
      throw InputError("roi label count does not match ROI count");
    std::set<std::string> seen(roi_labels.begin(), roi_labels.end());
    if (seen.size() != roi_labels.size()) throw InputError("roi labels are not unique");
  }
};

struct WindowSpec {
  Index window_length = 100;
  Index stride = 1;
};

struct WindowSlice {
  Index start = 0;
  Index length = 0;
};

struct GraphObservation {
  Matrix adjacency;  // symmetric, zero diagonal
  Matrix features;   // row v = correlation profile of ROI v
  Index window_index = 0;
};

inline Index default_k_top(Index rois) { return (rois + 9) / 10; }

// Windows [s, s + window_length) for s = 0, S, 2S, ... while they fit.
inline std::vector<WindowSlice> sliding_windows(Index series_length, const WindowSpec& spec) {
  if (spec.stride <= 0) throw InputError("invalid stride");
  if (spec.window_length < 1) throw InputError("invalid window length");
  if (spec.window_length > series_length) throw InputError("window exceeds series length");
  std::vector<WindowSlice> out;
  out.reserve(static_cast<std::size_t>((series_length - spec.window_length) / spec.stride + 1));
  for (Index s = 0; s + spec.window_length <= series_length; s += spec.stride)
    out.push_back({s, spec.window_length});
  return out;
}

inline std::vector<WindowSlice> sliding_windows(const TimeSeries& series, const WindowSpec& spec) {
  return sliding_windows(series.length(), spec);
}

// Row-wise Pearson correlation of an R x W window.
inline Matrix pearson_features(const Matrix& window) {
  const Index rois = window.rows();
  const Index n = window.cols();
  if (n < 2) throw InputError("window must contain at least 2 timestamps");
  Matrix centered = window.colwise() - window.rowwise().mean();
  Vector norms(rois);
  for (Index i = 0; i < rois; ++i) {
    const double ss = centered.row(i).squaredNorm();
    const double scale = std::max(1.0, window.row(i).cwiseAbs().maxCoeff());
    if (!(ss > 1e-24 * static_cast<double>(n) * scale * scale))
      throw InputError("zero-variance ROI " + std::to_string(i) + " in window");
    norms(i) = std::sqrt(ss);
  }
  for (Index i = 0; i < rois; ++i) centered.row(i) /= norms(i);
  Matrix corr = centered * centered.transpose();
  for (Index i = 0; i < rois; ++i) {
    corr(i, i) = 1.0;
    for (Index j = i + 1; j < rois; ++j) {
      const double v = std::clamp(0.5 * (corr(i, j) + corr(j, i)), -1.0, 1.0);
      corr(i, j) = v;
      corr(j, i) = v;
    }
  }
  return corr;
}

// Partial correlations from the ridge-shrunk correlation matrix
// (1 - shrinkage) * C + shrinkage * I. Diagonal is zero.
inline Matrix partial_correlation_adjacency(const Matrix& window, double shrinkage) {
  if (!(shrinkage > 0.0 && shrinkage <= 1.0))
    throw InputError("shrinkage must lie in (0, 1], got " + std::to_string(shrinkage));
  const Matrix corr = pearson_features(window);
  const Index rois = corr.rows();
  Matrix shrunk = (1.0 - shrinkage) * corr;
  shrunk.diagonal().array() += shrinkage;

  Eigen::SelfAdjointEigenSolver<Matrix> eig(shrunk);
  if (eig.info() != Eigen::Success) throw NumericalError("singular correlation matrix");
  const Vector& ev = eig.eigenvalues();
  const double lo = ev.minCoeff();
  const double hi = ev.maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12) throw NumericalError("singular correlation matrix");
  const Matrix& vecs = eig.eigenvectors();
  const Matrix precision = vecs * ev.cwiseInverse().asDiagonal() * vecs.transpose();

  Matrix rho = Matrix::Zero(rois, rois);
  for (Index i = 0; i < rois; ++i) {
    for (Index j = i + 1; j < rois; ++j) {
      const double pij = 0.5 * (precision(i, j) + precision(j, i));
      const double v = std::clamp(-pij / std::sqrt(precision(i, i) * precision(j, j)), -1.0, 1.0);
      rho(i, j) = v;
      rho(j, i) = v;
    }
  }
  return rho;
}

// Keeps the k largest-magnitude off-diagonal entries of every row, then takes
// the union over both endpoints. Ties are broken towards the lower column.
inline Matrix topk_sparsify(const Matrix& a, Index k) {
  const Index n = a.rows();
  if (a.cols() != n) throw InputError("topk_sparsify expects a square matrix");
  if (k < 0 || k > std::max<Index>(n - 1, 0))
    throw InputError("k_top " + std::to_string(k) + " out of range [0, " +
                     std::to_string(n - 1) + "]");
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> keep =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n, false);
  std::vector<Index> cols;
  cols.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n && k > 0; ++i) {
    cols.clear();
    for (Index j = 0; j < n; ++j)
      if (j != i) cols.push_back(j);
    std::partial_sort(cols.begin(), cols.begin() + k, cols.end(), [&](Index x, Index y) {
      const double ax = std::abs(a(i, x));
      const double ay = std::abs(a(i, y));
      return ax > ay || (ax == ay && x < y);
    });
    for (Index r = 0; r < k; ++r) keep(i, cols[static_cast<std::size_t>(r)]) = true;
  }
  Matrix out = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      if (!keep(i, j) && !keep(j, i)) continue;
      const double v = std::abs(a(i, j)) >= std::abs(a(j, i)) ? a(i, j) : a(j, i);
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return out;
}

struct GraphBuildOptions {
  WindowSpec window;
  double shrinkage = 0.1;
  Index k_top = -1;  // < 0 selects default_k_top(R)
  Index max_windows = -1;  // < 0 keeps every window
};

inline GraphObservation build_observation(const Matrix& window, double shrinkage, Index k_top,
                                          Index window_index) {
  GraphObservation obs;
  obs.features = pearson_features(window);
  obs.adjacency = topk_sparsify(partial_correlation_adjacency(window, shrinkage), k_top);
  obs.window_index = window_index;
  return obs;
}

inline std::vector<GraphObservation> build_observations(const TimeSeries& series,
                                                        const GraphBuildOptions& opt) {
  series.validate();
  const Index k_top = opt.k_top < 0 ? default_k_top(series.rois()) : opt.k_top;
  auto windows = sliding_windows(series, opt.window);
  if (opt.max_windows >= 0 && static_cast<Index>(windows.size()) > opt.max_windows)
    windows.resize(static_cast<std::size_t>(opt.max_windows));
  std::vector<GraphObservation> out;
  out.reserve(windows.size());
  for (std::size_t t = 0; t < windows.size(); ++t) {
    const auto& w = windows[t];
    out.push_back(build_observation(series.values.middleCols(w.start, w.length), opt.shrinkage,
                                    k_top, static_cast<Index>(t)));
  }
  return out;
}

}  // namespace smcgcn
