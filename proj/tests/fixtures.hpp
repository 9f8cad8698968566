#pragma once

#include <random>
#include <string>
#include <vector>

#include "smcgcn/signal_ingest.hpp"

namespace testing_support {

using namespace smcgcn;

// Correlated R x len signal: a shared factor plus per-ROI noise.
inline Matrix correlated_window(Index rois, Index len, std::uint64_t seed, double noise = 0.7) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix w(rois, len);
  for (Index t = 0; t < len; ++t) {
    const double f = g(rng);
    for (Index i = 0; i < rois; ++i) w(i, t) = (i % 2 ? f : -0.5 * f) + noise * g(rng);
  }
  return w;
}

inline GraphObservation observation(Index rois, std::uint64_t seed, Index window_index = 0) {
  return build_observation(correlated_window(rois, 60, seed), 0.1, default_k_top(rois), window_index);
}

inline std::vector<GraphObservation> observations(Index rois, Index count, std::uint64_t seed) {
  std::vector<GraphObservation> out;
  for (Index t = 0; t < count; ++t) out.push_back(observation(rois, seed * 1000 + static_cast<std::uint64_t>(t), t));
  return out;
}

inline TimeSeries series(Matrix values) {
  TimeSeries ts;
  ts.values = std::move(values);
  for (Index i = 0; i < ts.values.rows(); ++i) ts.roi_labels.push_back("roi_" + std::to_string(i));
  return ts;
}

}  // namespace testing_support
