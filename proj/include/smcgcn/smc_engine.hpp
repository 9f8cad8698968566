#pragma once

// Particle filter over graph particles.
//
// The step skeleton (filter_step) is generic over a transition/observation
// model and over how weights are represented: plain doubles for inference
// and for the scalar linear-Gaussian check, tape variables for training.
// One step is
//   transition -> update -> reweight (prior weight x likelihood,
//   normalized) -> soft resample when ESS <= trigger * K.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "smcgcn/autodiff.hpp"
#include "smcgcn/error.hpp"
#include "smcgcn/parameters.hpp"
#include "smcgcn/signal_ingest.hpp"
#include "smcgcn/types.hpp"

namespace smcgcn {

struct SoftResampleConfig {
  double alpha = 0.5;
  double trigger = 1.0;  // resample when ESS <= trigger * K

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("alpha must lie in [0, 1]");
    if (!(trigger > 0.0 && trigger <= 1.0)) throw InputError("resample trigger must lie in (0, 1]");
  }
};

// ---------------------------------------------------------------------------
// Weight arithmetic on plain doubles.

// Neumaier-compensated sum.
inline double compensated_sum(std::span<const double> xs) {
  double sum = 0.0;
  double comp = 0.0;
  for (double x : xs) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x))
      comp += (sum - t) + x;
    else
      comp += (x - t) + sum;
    sum = t;
  }
  return sum + comp;
}

inline std::vector<double> normalize_weights(std::span<const double> raw) {
  if (raw.empty()) throw InputError("normalize_weights: no particles");
  for (double r : raw)
    if (!(r >= 0.0) || !std::isfinite(r)) throw NumericalError("normalize_weights: invalid raw weight");
  const double total = compensated_sum(raw);
  if (!(total > 0.0)) throw NumericalError("particle collapse: all likelihoods vanished");
  std::vector<double> w(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) w[k] = raw[k] / total;
  return w;
}

// Normalizes weights given in log space (log-sum-exp); -inf entries get 0.
inline std::vector<double> normalize_log_weights(std::span<const double> log_raw) {
  if (log_raw.empty()) throw InputError("normalize_log_weights: no particles");
  double m = -std::numeric_limits<double>::infinity();
  for (double a : log_raw) {
    if (std::isnan(a) || a == std::numeric_limits<double>::infinity())
      throw NumericalError("normalize_log_weights: invalid log weight");
    m = std::max(m, a);
  }
  if (!std::isfinite(m)) throw NumericalError("particle collapse: all likelihoods vanished");
  std::vector<double> e(log_raw.size());
  for (std::size_t k = 0; k < log_raw.size(); ++k) e[k] = std::exp(log_raw[k] - m);
  return normalize_weights(e);
}

inline double effective_sample_size(std::span<const double> w) {
  double s = 0.0;
  for (double x : w) s += x * x;
  return 1.0 / s;
}

inline bool should_resample(double ess, std::size_t particles, double trigger) {
  return ess <= trigger * static_cast<double>(particles) * (1.0 + 1e-12);
}

// q_k = alpha w_k + (1 - alpha) / K
inline std::vector<double> mixture_proposal(std::span<const double> w, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("alpha must lie in [0, 1]");
  const double uniform = 1.0 / static_cast<double>(w.size());
  std::vector<double> q(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) q[k] = alpha * w[k] + (1.0 - alpha) * uniform;
  return q;
}

// i.i.d. categorical draws from q by inverse CDF.
inline std::vector<int> draw_indices(std::span<const double> q, std::size_t count, Rng& rng) {
  std::vector<double> cdf(q.size());
  std::partial_sum(q.begin(), q.end(), cdf.begin());
  const double total = cdf.back();
  std::uniform_real_distribution<double> unif(0.0, total);
  std::vector<int> idx(count);
  for (auto& i : idx) {
    const double u = unif(rng);
    auto pos = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    if (pos == cdf.size()) {  // u rounded onto the total: last entry with mass
      pos = cdf.size() - 1;
      while (pos > 0 && !(q[pos] > 0.0)) --pos;
    }
    i = static_cast<int>(pos);
  }
  return idx;
}

// Importance ratios w_i / q_i for the drawn indices, before normalization,
// evaluated as K w_i / (alpha K w_i + 1 - alpha) so that alpha = 0 gives K w_i
// and alpha = 1 gives 1 without rounding.
inline std::vector<double> soft_resample_ratios(std::span<const double> w, std::span<const int> idx,
                                                double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("alpha must lie in [0, 1]");
  const double k_count = static_cast<double>(w.size());
  std::vector<double> r(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const auto i = static_cast<std::size_t>(idx[j]);
    if (idx[j] < 0 || i >= w.size()) throw InputError("soft_resample_ratios: index out of range");
    const double kw = k_count * w[i];
    const double denom = alpha * kw + (1.0 - alpha);
    r[j] = denom > 0.0 ? kw / denom : 0.0;
  }
  return r;
}

// Log prior weight + log likelihood, normalized.
inline std::vector<double> reweight(std::span<const double> prior, std::span<const double> loglik) {
  if (prior.size() != loglik.size()) throw InputError("reweight: size mismatch");
  std::vector<double> a(prior.size());
  for (std::size_t k = 0; k < a.size(); ++k)
    a[k] = (prior[k] > 0.0 ? std::log(prior[k]) : -std::numeric_limits<double>::infinity()) + loglik[k];
  return normalize_log_weights(a);
}

// ---------------------------------------------------------------------------
// Weight arithmetic on the tape. Forward values use the plain routines above.

inline constexpr double kDeadWeight = 1e-200;

namespace ad {

// w_k = p_k exp(l_k) / sum_j p_j exp(l_j); prior (K x 1), loglik (K x 1).
inline Var reweight(Var prior, Var loglik) {
  const Index k_count = prior.rows();
  if (loglik.rows() != k_count || prior.cols() != 1 || loglik.cols() != 1)
    throw InputError("reweight: expects two K x 1 vectors");
  const Matrix& p = prior.value();
  const Matrix& l = loglik.value();
  std::vector<double> pv(p.data(), p.data() + k_count);
  std::vector<double> lv(l.data(), l.data() + k_count);
  const auto w = smcgcn::reweight(pv, lv);
  Matrix out(k_count, 1);
  for (Index k = 0; k < k_count; ++k) out(k, 0) = w[static_cast<std::size_t>(k)];
  // e_k = exp(l_k) / sum_j p_j exp(l_j), evaluated in log space. Particles
  // with prior weight below kDeadWeight are dead: no gradient flows into
  // their prior (e_k ~ 1/p_k would overflow further down the chain).
  const double tiny = kDeadWeight;
  double m = -std::numeric_limits<double>::infinity();
  for (Index k = 0; k < k_count; ++k)
    if (p(k, 0) >= tiny) m = std::max(m, std::log(p(k, 0)) + l(k, 0));
  double s = 0.0;
  for (Index k = 0; k < k_count; ++k)
    if (p(k, 0) >= tiny) s += std::exp(std::log(p(k, 0)) + l(k, 0) - m);
  const double log_norm = m + std::log(s);
  Vector e = Vector::Zero(k_count);
  for (Index k = 0; k < k_count; ++k)
    if (p(k, 0) >= tiny) e(k) = std::exp(l(k, 0) - log_norm);
  return prior.tape().record(out, {prior, loglik}, [prior, loglik, out, e](Tape& tp, const Matrix& g) {
    const double gbar = g.col(0).dot(out.col(0));
    if (tp.requires_grad(loglik))
      tp.accumulate(loglik, (out.col(0).array() * (g.col(0).array() - gbar)).matrix());
    if (tp.requires_grad(prior))
      tp.accumulate(prior, (e.array() * (g.col(0).array() - gbar)).matrix());
  });
}

// Soft-resampled weights: u_j = w_{i_j} / q_{i_j}, normalized.
inline Var soft_resample_weights(Var weights, const std::vector<int>& idx, double alpha) {
  const Index k_count = weights.rows();
  const Matrix& w = weights.value();
  std::vector<double> wv(w.data(), w.data() + k_count);
  const auto ratios = soft_resample_ratios(wv, idx, alpha);
  const auto out_w = normalize_weights(ratios);
  const double total = compensated_sum(ratios);
  Matrix out(static_cast<Index>(idx.size()), 1);
  for (std::size_t j = 0; j < idx.size(); ++j) out(static_cast<Index>(j), 0) = out_w[j];
  const double c = (1.0 - alpha) / static_cast<double>(k_count);
  return weights.tape().record(out, {weights}, [weights, idx, alpha, c, out, total](Tape& tp, const Matrix& g) {
    const double gbar = g.col(0).dot(out.col(0));
    Matrix gw = Matrix::Zero(weights.rows(), 1);
    const Matrix& wv = weights.value();
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const Index i = idx[j];
      const double q = alpha * wv(i, 0) + c;
      if (!(q > 0.0)) continue;
      const double du = (g(static_cast<Index>(j), 0) - gbar) / total;
      gw(i, 0) += du * c / (q * q);
    }
    tp.accumulate(weights, gw);
  });
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Generic step skeleton.

struct StepReport {
  double ess = 0.0;        // after reweighting, before any resampling
  bool resampled = false;
  std::vector<int> ancestors;  // source index per output slot
  std::vector<double> weights;  // after the step
};

template <class Model>
struct FilterState {
  std::vector<typename Model::Particle> particles;
  typename Model::Weights weights;
  std::vector<int> lineage;
  Index timestamp = 0;
};

// Model requirements:
//   void transition(Particle&, Rng&)
//   void update(Particle&, const Observation&)
//   LogLik log_likelihood(const Particle&, const Observation&)
//   Weights reweight(const Weights&, const std::vector<LogLik>&)
//   std::vector<double> weight_values(const Weights&)
//   Weights resample_weights(const Weights&, const std::vector<int>&, double alpha)
// `forced_ancestors` replays a recorded resampling draw.
template <class Model>
StepReport filter_step(Model& model, FilterState<Model>& state,
                       const typename Model::Observation& obs, const SoftResampleConfig& cfg,
                       Rng& rng, const std::vector<int>* forced_ancestors = nullptr) {
  const std::size_t k_count = state.particles.size();
  if (k_count == 0) throw InputError("filter_step: empty ensemble");
  for (auto& p : state.particles) model.transition(p, rng);
  for (auto& p : state.particles) model.update(p, obs);
  std::vector<typename Model::LogLik> loglik;
  loglik.reserve(k_count);
  for (const auto& p : state.particles) loglik.push_back(model.log_likelihood(p, obs));
  state.weights = model.reweight(state.weights, loglik);

  StepReport report;
  auto w = model.weight_values(state.weights);
  report.ess = effective_sample_size(w);
  if (forced_ancestors != nullptr ? !forced_ancestors->empty()
                                  : should_resample(report.ess, k_count, cfg.trigger)) {
    std::vector<int> idx = forced_ancestors != nullptr
                               ? *forced_ancestors
                               : draw_indices(mixture_proposal(w, cfg.alpha), k_count, rng);
    if (idx.size() != k_count) throw InvariantError("ancestor count differs from particle count");
    std::vector<typename Model::Particle> next;
    next.reserve(k_count);
    std::vector<int> lineage(k_count);
    for (std::size_t j = 0; j < k_count; ++j) {
      next.push_back(state.particles[static_cast<std::size_t>(idx[j])]);
      lineage[j] = state.lineage[static_cast<std::size_t>(idx[j])];
    }
    state.particles = std::move(next);
    state.lineage = std::move(lineage);
    state.weights = model.resample_weights(state.weights, idx, cfg.alpha);
    report.resampled = true;
    report.ancestors = std::move(idx);
    w = model.weight_values(state.weights);
  }
  report.weights = std::move(w);
  ++state.timestamp;
  return report;
}

// Weight policy shared by models that keep weights as plain doubles.
struct PlainWeightPolicy {
  using Weights = std::vector<double>;
  using LogLik = double;

  Weights reweight(const Weights& prior, const std::vector<double>& loglik) const {
    return smcgcn::reweight(prior, loglik);
  }
  std::vector<double> weight_values(const Weights& w) const { return w; }
  Weights resample_weights(const Weights& w, const std::vector<int>& idx, double alpha) const {
    return normalize_weights(soft_resample_ratios(w, idx, alpha));
  }
};

// ---------------------------------------------------------------------------
// Graph particles.

struct GraphParticle {
  Matrix adjacency;  // symmetric R x R
  Matrix features;   // R x d
  double weight = 0.0;
  int lineage_id = 0;
};

struct ParticleEnsemble {
  std::vector<GraphParticle> particles;
  Rng rng;
  Index timestamp = 0;

  std::size_t size() const { return particles.size(); }
  std::vector<double> weights() const {
    std::vector<double> w;
    w.reserve(particles.size());
    for (const auto& p : particles) w.push_back(p.weight);
    return w;
  }
};

struct SmcConfig {
  Index particles = 30;
  double init_noise = 0.1;
  Index k_top = -1;  // < 0: default_k_top(R)
  Index knn = 5;
  double sigma = 1.0;
  SoftResampleConfig resample;

  void validate() const {
    if (particles < 1) throw InputError("particle count must be >= 1");
    if (!(init_noise >= 0.0) || init_noise > 1.0) throw InputError("init noise must lie in [0, 1]");
    if (knn < 1) throw InputError("knn must be >= 1");
    if (!(sigma > 0.0)) throw InputError("sigma must be > 0");
    resample.validate();
  }
};

// Initial particle states cloned from the first observation. Particles
// after the first get Gaussian feature noise and edge dropout, both at
// noise_scale. Returns (adjacency, features) pairs; consumes `rng`.
inline std::vector<std::pair<Matrix, Matrix>> initial_particle_states(const GraphObservation& obs0,
                                                                      Index particles,
                                                                      double noise_scale, Rng& rng) {
  if (particles < 1) throw InputError("particle count must be >= 1");
  if (!(noise_scale >= 0.0)) throw InputError("noise scale must be >= 0");
  std::vector<std::pair<Matrix, Matrix>> out;
  out.reserve(static_cast<std::size_t>(particles));
  out.emplace_back(obs0.adjacency, obs0.features);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Index n = obs0.adjacency.rows();
  for (Index k = 1; k < particles; ++k) {
    Matrix adj = obs0.adjacency;
    Matrix feat = obs0.features;
    if (noise_scale > 0.0) {
      for (Index j = 0; j < feat.cols(); ++j)
        for (Index i = 0; i < feat.rows(); ++i) feat(i, j) += noise_scale * gauss(rng);
      for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j)
          if (adj(i, j) != 0.0 && unif(rng) < noise_scale) {
            adj(i, j) = 0.0;
            adj(j, i) = 0.0;
          }
    }
    out.emplace_back(std::move(adj), std::move(feat));
  }
  return out;
}

inline ParticleEnsemble init_ensemble(const GraphObservation& obs0, Index particles,
                                      double noise_scale, std::uint64_t seed) {
  ParticleEnsemble e;
  e.rng.seed(seed);
  auto states = initial_particle_states(obs0, particles, noise_scale, e.rng);
  const double w = 1.0 / static_cast<double>(particles);
  for (std::size_t k = 0; k < states.size(); ++k)
    e.particles.push_back({std::move(states[k].first), std::move(states[k].second), w, static_cast<int>(k)});
  return e;
}

// Features <- GCN(features, scaled Laplacian of adjacency). Returns the hidden
// embeddings per particle; weights and adjacency are untouched.
inline std::vector<Matrix> transition(ParticleEnsemble& ensemble, const ModelParameters& params) {
  std::vector<Matrix> hidden;
  hidden.reserve(ensemble.size());
  for (auto& p : ensemble.particles) {
    auto out = gcn_forward(p.features, scaled_laplacian(p.adjacency), params.layers);
    p.features = std::move(out.features);
    hidden.push_back(std::move(out.hidden));
  }
  return hidden;
}

// Adjacency + TopK(observed adjacency); features Hadamard observed features.
inline GraphParticle aggregate_update(const GraphParticle& particle, const GraphObservation& obs,
                                      Index k_top) {
  if (particle.adjacency.rows() != obs.adjacency.rows() ||
      particle.adjacency.cols() != obs.adjacency.cols())
    throw InputError("aggregate_update: adjacency shape mismatch");
  if (particle.features.rows() != obs.features.rows() ||
      particle.features.cols() != obs.features.cols())
    throw InputError("aggregate_update: feature shape mismatch (" +
                     std::to_string(particle.features.rows()) + "x" +
                     std::to_string(particle.features.cols()) + " vs " +
                     std::to_string(obs.features.rows()) + "x" + std::to_string(obs.features.cols()) + ")");
  GraphParticle out = particle;
  Matrix adj = particle.adjacency + topk_sparsify(obs.adjacency, k_top);
  out.adjacency = 0.5 * (adj + adj.transpose());
  out.features = particle.features.cwiseProduct(obs.features);
  return out;
}

// Scales a symmetric matrix to unit spectral radius (no-op on the zero matrix).
inline Matrix normalize_spectral_radius(const Matrix& a) {
  if (a.size() == 0) return a;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a, Eigen::EigenvaluesOnly);
  const double radius = eig.eigenvalues().cwiseAbs().maxCoeff();
  if (!(radius > 0.0)) return a;
  return a / radius;
}

// Mean observed feature row over each node's knn strongest neighbours
// (by |adjacency|, ties by |feature correlation|, then index).
inline Matrix knn_aggregate(const GraphObservation& obs, Index knn) {
  if (knn < 1) throw InputError("knn must be >= 1");
  const Index n = obs.adjacency.rows();
  const Index k = std::min(knn, n - 1);
  Matrix agg = Matrix::Zero(n, obs.features.cols());
  if (k < 1) return obs.features;
  std::vector<Index> cand;
  for (Index v = 0; v < n; ++v) {
    cand.clear();
    for (Index u = 0; u < n; ++u)
      if (u != v) cand.push_back(u);
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end(), [&](Index a, Index b) {
      const double wa = std::abs(obs.adjacency(v, a));
      const double wb = std::abs(obs.adjacency(v, b));
      if (wa != wb) return wa > wb;
      const double fa = std::abs(obs.features(v, a));
      const double fb = std::abs(obs.features(v, b));
      if (fa != fb) return fa > fb;
      return a < b;
    });
    for (Index r = 0; r < k; ++r) agg.row(v) += obs.features.row(cand[static_cast<std::size_t>(r)]);
    agg.row(v) /= static_cast<double>(k);
  }
  return agg;
}

// sum_v -||agg_v - X_v||^2 / (2 sigma^2), with agg precomputed by knn_aggregate.
inline double discriminative_log_weight(const Matrix& aggregated_obs, const Matrix& particle_features,
                                        double sigma) {
  if (aggregated_obs.rows() != particle_features.rows() ||
      aggregated_obs.cols() != particle_features.cols())
    throw InputError("discriminative_weight: shape mismatch");
  if (!(sigma > 0.0)) throw InputError("sigma must be > 0");
  return -(aggregated_obs - particle_features).squaredNorm() / (2.0 * sigma * sigma);
}

inline double discriminative_log_weight(const GraphObservation& obs, const GraphParticle& particle,
                                        Index knn, double sigma) {
  return discriminative_log_weight(knn_aggregate(obs, knn), particle.features, sigma);
}

inline double discriminative_weight(const GraphObservation& obs, const GraphParticle& particle,
                                    Index knn, double sigma) {
  return std::exp(discriminative_log_weight(obs, particle, knn, sigma));
}

// Draws K particles from alpha w + (1 - alpha)/K, reweights by w/q and
// renormalizes. lineage_id records the source slot's lineage.
inline ParticleEnsemble soft_resample(const ParticleEnsemble& ensemble, const SoftResampleConfig& cfg,
                                      std::vector<int>* ancestors = nullptr) {
  cfg.validate();
  ParticleEnsemble out;
  out.rng = ensemble.rng;
  out.timestamp = ensemble.timestamp;
  const auto w = ensemble.weights();
  const auto idx = draw_indices(mixture_proposal(w, cfg.alpha), w.size(), out.rng);
  const auto new_w = normalize_weights(soft_resample_ratios(w, idx, cfg.alpha));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    GraphParticle p = ensemble.particles[static_cast<std::size_t>(idx[j])];
    p.weight = new_w[j];
    out.particles.push_back(std::move(p));
  }
  if (ancestors != nullptr) *ancestors = idx;
  return out;
}

// Plain graph model for filter_step (no gradients).
class GraphFilterModel : public PlainWeightPolicy {
 public:
  struct Particle {
    Matrix adjacency;
    Matrix features;
    Matrix hidden;
  };
  using Observation = GraphObservation;

  GraphFilterModel(const ModelParameters& params, const SmcConfig& cfg) : params_(params), cfg_(cfg) {}

  void transition(Particle& p, Rng&) {
    auto out = gcn_forward(p.features, scaled_laplacian(p.adjacency), params_.layers);
    p.features = std::move(out.features);
    p.hidden = std::move(out.hidden);
  }

  void update(Particle& p, const Observation& obs) {
    GraphParticle gp{std::move(p.adjacency), std::move(p.features), 0.0, 0};
    GraphParticle up = aggregate_update(gp, obs, k_top(obs));
    p.adjacency = normalize_spectral_radius(up.adjacency);
    p.features = std::move(up.features);
    aggregated_ = nullptr;
  }

  double log_likelihood(const Particle& p, const Observation& obs) {
    if (aggregated_ != &obs) {
      aggregated_features_ = knn_aggregate(obs, cfg_.knn);
      aggregated_ = &obs;
    }
    return discriminative_log_weight(aggregated_features_, p.features, cfg_.sigma);
  }

 private:
  Index k_top(const Observation& obs) const {
    return cfg_.k_top < 0 ? default_k_top(obs.adjacency.rows()) : cfg_.k_top;
  }

  const ModelParameters& params_;
  const SmcConfig& cfg_;
  const Observation* aggregated_ = nullptr;
  Matrix aggregated_features_;
};

struct StepResult {
  std::vector<Matrix> embeddings;  // aligned with the returned ensemble
  StepReport report;
};

// transition -> aggregate_update -> weighting -> optional soft resampling.
inline StepResult step(ParticleEnsemble& ensemble, const GraphObservation& obs,
                       const ModelParameters& params, const SmcConfig& cfg) {
  GraphFilterModel model(params, cfg);
  FilterState<GraphFilterModel> state;
  for (const auto& p : ensemble.particles) {
    state.particles.push_back({p.adjacency, p.features, Matrix()});
    state.weights.push_back(p.weight);
    state.lineage.push_back(p.lineage_id);
  }
  state.timestamp = ensemble.timestamp;
  StepResult result;
  result.report = filter_step(model, state, obs, cfg.resample, ensemble.rng);
  for (std::size_t k = 0; k < state.particles.size(); ++k) {
    auto& p = ensemble.particles[k];
    p.adjacency = std::move(state.particles[k].adjacency);
    p.features = std::move(state.particles[k].features);
    p.weight = state.weights[k];
    p.lineage_id = state.lineage[k];
    result.embeddings.push_back(std::move(state.particles[k].hidden));
  }
  ensemble.timestamp = state.timestamp;
  return result;
}

}  // namespace smcgcn
