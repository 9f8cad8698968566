#pragma once

// Differentiable end-to-end forward pass for one sample: particle filter over
// the window sequence with the GCN transition, readout + MLP per particle,
// particle-weighted prediction per window and the averaged cross-entropy.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "smcgcn/autodiff.hpp"
#include "smcgcn/classifier_head.hpp"
#include "smcgcn/gcn_backbone.hpp"
#include "smcgcn/parameters.hpp"
#include "smcgcn/smc_engine.hpp"

namespace smcgcn {

// Tape handles for every tensor of ModelParameters, in for_each_tensor order.
struct ParameterVars {
  std::vector<std::vector<ad::Var>> cheb_weights;
  std::vector<ad::Var> cheb_bias;
  ad::MlpVars head;
  std::vector<ad::Var> all;  // flat, for_each_tensor order

  static ParameterVars bind(ad::Tape& tape, const ModelParameters& params, bool trainable) {
    ParameterVars pv;
    auto make = [&](const Matrix& m) {
      ad::Var v = trainable ? tape.variable(m) : tape.constant(m);
      pv.all.push_back(v);
      return v;
    };
    for (const auto& layer : params.layers) {
      std::vector<ad::Var> ws;
      for (const auto& w : layer.weights) ws.push_back(make(w.value));
      pv.cheb_weights.push_back(std::move(ws));
      pv.cheb_bias.push_back(make(layer.bias.value));
    }
    pv.head.w1 = make(params.head.w1.value);
    pv.head.b1 = make(params.head.b1.value);
    pv.head.w2 = make(params.head.w2.value);
    pv.head.b2 = make(params.head.b2.value);
    return pv;
  }
};

// Graph model for filter_step with weights and features on the tape.
class TapeGraphModel {
 public:
  struct Particle {
    Matrix adjacency;
    ad::Var features;
    ad::Var hidden;
  };
  using Observation = GraphObservation;
  using Weights = ad::Var;
  using LogLik = ad::Var;

  TapeGraphModel(ad::Tape& tape, const ParameterVars& params, const SmcConfig& cfg)
      : tape_(tape), params_(params), cfg_(cfg) {}

  void transition(Particle& p, Rng&) {
    auto lap = std::make_shared<const Matrix>(scaled_laplacian(p.adjacency));
    ad::Var h = p.features;
    const std::size_t layers = params_.cheb_weights.size();
    for (std::size_t l = 0; l < layers; ++l) {
      h = ad::cheb_conv(h, lap, params_.cheb_weights[l], params_.cheb_bias[l]);
      if (l + 1 < layers) h = ad::relu(h);
      if (l + 2 == layers) p.hidden = h;
    }
    p.features = h;
  }

  void update(Particle& p, const Observation& obs) {
    bind_observation(obs);
    GraphParticle gp;
    gp.adjacency = std::move(p.adjacency);
    gp.features = Matrix::Zero(obs.features.rows(), obs.features.cols());
    if (p.features.rows() != obs.features.rows() || p.features.cols() != obs.features.cols())
      throw InputError("aggregate_update: feature shape mismatch");
    // Adjacency update has no parameter dependence; reuse the plain op.
    Matrix adj = aggregate_update(gp, obs, k_top(obs)).adjacency;
    p.adjacency = normalize_spectral_radius(adj);
    p.features = ad::hadamard(p.features, obs_features_);
  }

  ad::Var log_likelihood(const Particle& p, const Observation& obs) {
    bind_observation(obs);
    const double c = -1.0 / (2.0 * cfg_.sigma * cfg_.sigma);
    return ad::scale(ad::sum_squares(ad::sub(p.features, aggregated_)), c);
  }

  Weights reweight(const Weights& prior, const std::vector<ad::Var>& loglik) const {
    return ad::reweight(prior, ad::stack_scalars(loglik));
  }

  std::vector<double> weight_values(const Weights& w) const {
    const Matrix& m = w.value();
    return std::vector<double>(m.data(), m.data() + m.rows());
  }

  Weights resample_weights(const Weights& w, const std::vector<int>& idx, double alpha) const {
    return ad::soft_resample_weights(w, idx, alpha);
  }

 private:
  Index k_top(const Observation& obs) const {
    return cfg_.k_top < 0 ? default_k_top(obs.adjacency.rows()) : cfg_.k_top;
  }

  void bind_observation(const Observation& obs) {
    if (bound_ == &obs) return;
    obs_features_ = tape_.constant(obs.features);
    aggregated_ = tape_.constant(knn_aggregate(obs, cfg_.knn));
    bound_ = &obs;
  }

  ad::Tape& tape_;
  const ParameterVars& params_;
  const SmcConfig& cfg_;
  const Observation* bound_ = nullptr;
  ad::Var obs_features_;
  ad::Var aggregated_;
};

struct TimestepDiagnostics {
  std::vector<double> weights;
  std::vector<int> lineage;
  double ess = 0.0;  // before resampling
  bool resampled = false;
};

struct SampleOutput {
  PredictionRecord record;
  std::optional<double> loss;  // present when a label was given
  std::vector<TimestepDiagnostics> diagnostics;
  std::vector<std::vector<int>> ancestry;  // per timestamp; empty = no resampling
};

// Runs the filter over the windows of one sample on `tape`. If label >= 0
// also records the loss and returns its tape handle through `loss_var`.
inline SampleOutput run_sample(ad::Tape& tape, const ParameterVars& pv,
                               const std::vector<GraphObservation>& observations, int label,
                               const SmcConfig& cfg, std::uint64_t seed,
                               const std::vector<std::vector<int>>* replay = nullptr,
                               ad::Var* loss_var = nullptr) {
  if (observations.empty()) throw InputError("sample has no windows");
  cfg.validate();
  if (replay != nullptr && replay->size() != observations.size())
    throw InputError("replayed ancestry length differs from window count");
  Rng rng(seed);
  const auto k_count = cfg.particles;
  auto init = initial_particle_states(observations.front(), k_count, cfg.init_noise, rng);

  TapeGraphModel model(tape, pv, cfg);
  FilterState<TapeGraphModel> state;
  for (Index k = 0; k < k_count; ++k) {
    auto& s = init[static_cast<std::size_t>(k)];
    state.particles.push_back({std::move(s.first), tape.constant(std::move(s.second)), ad::Var()});
    state.lineage.push_back(static_cast<int>(k));
  }
  state.weights = tape.constant(Matrix::Constant(k_count, 1, 1.0 / static_cast<double>(k_count)));

  SampleOutput out;
  out.record.label = label;
  std::vector<ad::Var> losses;
  for (std::size_t t = 0; t < observations.size(); ++t) {
    const std::vector<int>* forced = replay != nullptr ? &(*replay)[t] : nullptr;
    StepReport rep = filter_step(model, state, observations[t], cfg.resample, rng, forced);

    std::vector<ad::Var> probs;
    probs.reserve(state.particles.size());
    for (const auto& p : state.particles)
      probs.push_back(ad::softmax_row(ad::mlp_logits(ad::readout(p.hidden), pv.head)));
    ad::Var y = ad::matmul(ad::transpose(state.weights), ad::stack_rows(probs));
    out.record.per_timestamp.push_back(y.value().row(0).transpose());
    if (label >= 0) losses.push_back(ad::nll(y, label));

    TimestepDiagnostics diag;
    diag.weights = rep.weights;
    diag.lineage = state.lineage;
    diag.ess = rep.ess;
    diag.resampled = rep.resampled;
    out.diagnostics.push_back(std::move(diag));
    out.ancestry.push_back(rep.resampled ? rep.ancestors : std::vector<int>{});
  }
  if (label >= 0) {
    ad::Var loss = ad::mean_scalars(losses);
    out.loss = loss.scalar();
    if (!std::isfinite(*out.loss)) throw NumericalError("non-finite loss");
    if (loss_var != nullptr) *loss_var = loss;
  }
  return out;
}

// Inference only: parameters bound as constants, nothing differentiable.
inline SampleOutput infer_sample(const ModelParameters& params,
                                 const std::vector<GraphObservation>& observations, int label,
                                 const SmcConfig& cfg, std::uint64_t seed) {
  ad::Tape tape;
  const auto pv = ParameterVars::bind(tape, params, false);
  return run_sample(tape, pv, observations, label, cfg, seed);
}

struct SampleGradient {
  SampleOutput output;
  std::vector<Matrix> grads;  // for_each_tensor order
};

// Loss and parameter gradient for one labelled sample.
inline SampleGradient sample_gradient(const ModelParameters& params,
                                      const std::vector<GraphObservation>& observations, int label,
                                      const SmcConfig& cfg, std::uint64_t seed,
                                      const std::vector<std::vector<int>>* replay = nullptr) {
  if (label < 0) throw InputError("gradient needs a label");
  ad::Tape tape;
  const auto pv = ParameterVars::bind(tape, params, true);
  ad::Var loss;
  SampleGradient g;
  g.output = run_sample(tape, pv, observations, label, cfg, seed, replay, &loss);
  tape.backward(loss);
  g.grads.reserve(pv.all.size());
  for (const auto& v : pv.all) g.grads.push_back(tape.grad(v));
  return g;
}

// Stateful wrapper: forward() records, backward() accumulates into the
// parameters' gradient slots.
class SmcGcnNetwork {
 public:
  SmcGcnNetwork(ModelParameters& params, SmcConfig cfg) : params_(params), cfg_(std::move(cfg)) {}

  SampleOutput forward(const std::vector<GraphObservation>& observations, int label,
                       std::uint64_t seed, const std::vector<std::vector<int>>* replay = nullptr) {
    tape_ = std::make_unique<ad::Tape>();
    vars_ = ParameterVars::bind(*tape_, params_, true);
    loss_ = ad::Var();
    return run_sample(*tape_, vars_, observations, label, cfg_, seed, replay, &loss_);
  }

  void backward() {
    if (!tape_ || !loss_.valid()) throw InvariantError("no recorded computation");
    tape_->backward(loss_);
    std::size_t i = 0;
    params_.for_each_tensor([&](const std::string& name, Tensor& t) {
      Matrix g = tape_->grad(vars_.all[i++]);
      if (!g.allFinite()) throw NumericalError("non-finite gradient in " + name);
      t.grad += g;
    });
    tape_.reset();
    loss_ = ad::Var();
  }

 private:
  ModelParameters& params_;
  SmcConfig cfg_;
  std::unique_ptr<ad::Tape> tape_;
  ParameterVars vars_;
  ad::Var loss_;
};

}  // namespace smcgcn
