#pragma once

// Synthetic regime-switching data, stratified cross-validation, metrics,
// training loop, particle-count ablation and the linear-Gaussian check of
// the filter skeleton against a Kalman filter.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "smcgcn/error.hpp"
#include "smcgcn/parameters.hpp"
#include "smcgcn/pipeline.hpp"
#include "smcgcn/signal_ingest.hpp"
#include "smcgcn/smc_engine.hpp"
#include "smcgcn/types.hpp"

namespace smcgcn {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index is handled
// exactly once; callers write results into per-index slots.
template <class F>
void parallel_for(std::size_t n, int jobs, F&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
  Index rois = 20;
  Index length = 200;
  Index samples_per_class = 200;
  Index regime_switch_time = 100;
  // communities[class][regime][node] = community id; regime 0 before the
  // switch, regime 1 from the switch on.
  std::vector<std::vector<std::vector<int>>> communities;
  double noise = 0.1;
  std::uint64_t seed = 7;

  void validate() const {
    if (rois < 2 || length < 2) throw InputError("synthetic series needs R >= 2 and N >= 2");
    if (samples_per_class < 1) throw InputError("samples_per_class must be >= 1");
    if (regime_switch_time < 0 || regime_switch_time >= length)
      throw InputError("regime_switch_time must lie in [0, N)");
    if (!(noise >= 0.0)) throw InputError("noise must be >= 0");
    if (communities.size() != 2) throw InputError("need community structure for exactly 2 classes");
    for (const auto& cls : communities) {
      if (cls.size() != 2) throw InputError("need community structure for 2 regimes per class");
      for (const auto& assign : cls) {
        if (static_cast<Index>(assign.size()) != rois)
          throw InputError("community assignment must list every node exactly once");
        for (int c : assign)
          if (c < 0 || c >= rois) throw InputError("invalid community id " + std::to_string(c));
      }
    }
  }
};

// Contiguous blocks before/after for class 0; class 1 switches to an
// interleaved partition at the switch time.
inline SyntheticSpec default_synthetic_spec(Index rois = 20, Index communities = 4) {
  SyntheticSpec s;
  s.rois = rois;
  const Index block = (rois + communities - 1) / communities;
  std::vector<int> contiguous(static_cast<std::size_t>(rois));
  std::vector<int> interleaved(static_cast<std::size_t>(rois));
  for (Index i = 0; i < rois; ++i) {
    contiguous[static_cast<std::size_t>(i)] = static_cast<int>(i / block);
    interleaved[static_cast<std::size_t>(i)] = static_cast<int>(i % communities);
  }
  s.communities = {{contiguous, contiguous}, {contiguous, interleaved}};
  return s;
}

struct LabeledSeries {
  std::string id;
  int label = 0;
  TimeSeries series;
};

inline std::vector<std::string> default_roi_labels(Index rois) {
  std::vector<std::string> labels;
  for (Index i = 0; i < rois; ++i) {
    std::string s = std::to_string(i);
    labels.push_back("roi_" + std::string(s.size() < 2 ? 2 - s.size() : 0, '0') + s);
  }
  return labels;
}

// x_i(t) = f_{c(i,t)}(t) + noise * e_i(t), one standard normal latent factor
// per community per timestamp.
inline TimeSeries generate_series(const SyntheticSpec& spec, int label, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  TimeSeries ts;
  ts.roi_labels = default_roi_labels(spec.rois);
  ts.values.resize(spec.rois, spec.length);
  Vector factors(spec.rois);
  for (Index t = 0; t < spec.length; ++t) {
    const auto& assign = spec.communities[static_cast<std::size_t>(label)][t < spec.regime_switch_time ? 0 : 1];
    for (Index c = 0; c < spec.rois; ++c) factors(c) = gauss(rng);
    for (Index i = 0; i < spec.rois; ++i)
      ts.values(i, t) = factors(assign[static_cast<std::size_t>(i)]) + spec.noise * gauss(rng);
  }
  return ts;
}

// Interleaved classes: sample 2j is class 0, 2j+1 is class 1.
inline std::vector<LabeledSeries> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<LabeledSeries> out;
  for (Index j = 0; j < spec.samples_per_class; ++j) {
    for (int label = 0; label < 2; ++label) {
      const auto idx = static_cast<std::uint64_t>(2 * j + label);
      std::string id = std::to_string(idx);
      id = "s" + std::string(id.size() < 4 ? 4 - id.size() : 0, '0') + id;
      out.push_back({id, label, generate_series(spec, label, derive_seed(spec.seed, {idx}))});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

struct Confusion {
  std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::int64_t total() const { return tp + tn + fp + fn; }
};

struct FoldMetrics {
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double auc = 0.0;
  Confusion confusion;
};

inline FoldMetrics metrics_from_confusion(const Confusion& c) {
  FoldMetrics m;
  m.confusion = c;
  const auto safe = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
  m.accuracy = safe(static_cast<double>(c.tp + c.tn), static_cast<double>(c.total()));
  m.sensitivity = safe(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
  m.specificity = safe(static_cast<double>(c.tn), static_cast<double>(c.tn + c.fp));
  return m;
}

// Mann-Whitney U / (n1 n0) with mid-ranks for ties; class 1 is positive.
inline double auc_rank(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw InputError("auc: size mismatch");
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double n1 = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] == 1) {
      n1 += 1.0;
      rank_sum += rank[i];
    }
  const double n0 = static_cast<double>(n) - n1;
  if (n1 == 0.0 || n0 == 0.0) throw InputError("auc needs both classes");
  return (rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0);
}

// Binary metrics; predicted class 1 iff score > 0.5.
inline FoldMetrics compute_metrics(std::span<const int> labels, std::span<const double> prob_positive) {
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred = prob_positive[i] > 0.5;
    if (labels[i] == 1) (pred ? c.tp : c.fn)++;
    else (pred ? c.fp : c.tn)++;
  }
  FoldMetrics m = metrics_from_confusion(c);
  m.auc = auc_rank(labels, prob_positive);
  return m;
}

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
};

inline MetricSummary summarize(const std::vector<double>& xs) {
  MetricSummary s;
  if (xs.empty()) return s;
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

struct MetricsReport {
  std::vector<FoldMetrics> folds;
  MetricSummary accuracy, sensitivity, specificity, auc;

  void finalize() {
    auto collect = [this](auto field) {
      std::vector<double> v;
      for (const auto& f : folds) v.push_back(field(f));
      return summarize(v);
    };
    accuracy = collect([](const FoldMetrics& f) { return f.accuracy; });
    sensitivity = collect([](const FoldMetrics& f) { return f.sensitivity; });
    specificity = collect([](const FoldMetrics& f) { return f.specificity; });
    auc = collect([](const FoldMetrics& f) { return f.auc; });
  }
};

// ---------------------------------------------------------------------------
// Stratified folds

// Fold id per sample. Samples are grouped by (label, group) and each group is
// shuffled and dealt round-robin, continuing the rotation across groups.
inline std::vector<int> stratified_folds(std::span<const int> labels, int folds, std::uint64_t seed,
                                         std::span<const int> groups = {}) {
  if (folds < 2) throw InputError("need at least 2 folds");
  if (!groups.empty() && groups.size() != labels.size()) throw InputError("group key size mismatch");
  std::vector<std::pair<int, int>> keys;
  for (std::size_t i = 0; i < labels.size(); ++i) keys.emplace_back(labels[i], groups.empty() ? 0 : groups[i]);
  std::vector<std::pair<int, int>> uniq = keys;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::vector<int> fold(labels.size(), -1);
  Rng rng(seed);
  int next = 0;
  for (const auto& key : uniq) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < keys.size(); ++i)
      if (keys[i] == key) members.push_back(i);
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i : members) {
      fold[i] = next;
      next = (next + 1) % folds;
    }
  }
  std::set<int> classes(labels.begin(), labels.end());
  for (int f = 0; f < folds; ++f)
    for (int c : classes) {
      bool present = false;
      for (std::size_t i = 0; i < labels.size() && !present; ++i) present = fold[i] == f && labels[i] == c;
      if (!present)
        throw InputError("class " + std::to_string(c) + " absent from fold " + std::to_string(f));
    }
  return fold;
}

// ---------------------------------------------------------------------------
// Training

struct PreparedSample {
  std::string id;
  int label = 0;
  std::vector<GraphObservation> observations;
};

inline std::vector<PreparedSample> prepare_samples(const std::vector<LabeledSeries>& data,
                                                   const GraphBuildOptions& opt, int jobs = 1) {
  std::vector<PreparedSample> out(data.size());
  parallel_for(data.size(), jobs, [&](std::size_t i) {
    try {
      out[i] = {data[i].id, data[i].label, build_observations(data[i].series, opt)};
    } catch (const InputError& e) {
      throw InputError("sample " + data[i].id + ": " + e.what());
    }
  });
  return out;
}

struct TrainConfig {
  AdamConfig adam;
  Index batch = 12;
  Index max_epochs = 50;
  Index patience = 10;  // epochs without validation improvement before stopping
  int jobs = 1;
};

struct ExperimentConfig {
  ModelShape shape;  // rois filled from the data
  SmcConfig smc;
  TrainConfig train;
  int folds = 5;
  std::uint64_t seed = 1;
};

// Stream ids for derive_seed.
enum : std::uint64_t { kStreamInit = 1, kStreamShuffle = 2, kStreamTrainSample = 3, kStreamEvalSample = 4, kStreamFolds = 5 };

inline std::uint64_t eval_seed(std::uint64_t master, std::size_t sample_index) {
  return derive_seed(master, {kStreamEvalSample, static_cast<std::uint64_t>(sample_index)});
}

inline double mean_loss(const ModelParameters& params, const std::vector<PreparedSample>& data,
                        const std::vector<std::size_t>& idx, const ExperimentConfig& cfg) {
  std::vector<double> losses(idx.size());
  parallel_for(idx.size(), cfg.train.jobs, [&](std::size_t j) {
    const auto& s = data[idx[j]];
    losses[j] = *infer_sample(params, s.observations, s.label, cfg.smc, eval_seed(cfg.seed, idx[j])).loss;
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(std::max<std::size_t>(idx.size(), 1));
}

struct FoldTraining {
  ModelParameters params;  // best on validation
  AdamState adam;
  Index best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
};

inline FoldTraining train_fold(const std::vector<PreparedSample>& data,
                               const std::vector<std::size_t>& train_idx,
                               const std::vector<std::size_t>& val_idx, const ExperimentConfig& cfg,
                               int fold) {
  if (train_idx.empty()) throw InputError("empty training split");
  ModelShape shape = cfg.shape;
  shape.rois = data.front().observations.front().features.rows();
  ModelParameters params =
      make_model_parameters(shape, derive_seed(cfg.seed, {kStreamInit, static_cast<std::uint64_t>(fold)}));
  AdamState adam;
  FoldTraining best;
  best.params = params;
  best.best_val_loss = mean_loss(params, data, val_idx, cfg);
  Index since_best = 0;
  const auto batch = static_cast<std::size_t>(std::max<Index>(cfg.train.batch, 1));

  for (Index epoch = 1; epoch <= cfg.train.max_epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    Rng shuffle_rng(derive_seed(cfg.seed, {kStreamShuffle, static_cast<std::uint64_t>(fold),
                                           static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += batch) {
      const std::size_t nb = std::min(batch, order.size() - b0);
      std::vector<SampleGradient> grads(nb);
      parallel_for(nb, cfg.train.jobs, [&](std::size_t j) {
        const std::size_t i = order[b0 + j];
        grads[j] = sample_gradient(params, data[i].observations, data[i].label, cfg.smc,
                                   derive_seed(cfg.seed, {kStreamTrainSample, static_cast<std::uint64_t>(i),
                                                          static_cast<std::uint64_t>(epoch)}));
      });
      // Fixed summation order keeps results independent of the thread count.
      for (const auto& g : grads) {
        epoch_loss += *g.output.loss;
        std::size_t t = 0;
        params.for_each_tensor([&](const std::string&, Tensor& tensor) {
          tensor.grad += g.grads[t++] / static_cast<double>(nb);
        });
      }
      adam_step(params, adam, cfg.train.adam);
    }
    best.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    const double vl = val_idx.empty() ? best.train_loss.back() : mean_loss(params, data, val_idx, cfg);
    if (!std::isfinite(vl)) throw NumericalError("non-finite validation loss");
    best.val_loss.push_back(vl);
    if (vl < best.best_val_loss) {
      best.best_val_loss = vl;
      best.best_epoch = epoch;
      best.params = params;
      best.adam = adam;
      since_best = 0;
    } else if (++since_best >= cfg.train.patience) {
      break;
    }
  }
  return best;
}

struct SamplePrediction {
  std::size_t index = 0;
  int fold = 0;
  SampleOutput output;
};

struct CrossValidationResult {
  MetricsReport report;
  std::vector<FoldTraining> training;      // per fold (empty for custom runners)
  std::vector<SamplePrediction> predictions;  // test-set predictions, sample order
  std::vector<int> fold_of;
};

// Returns the test-sample probability of class 1 for each test index.
using FoldRunner = std::function<std::vector<double>(int fold, const std::vector<std::size_t>& train,
                                                     const std::vector<std::size_t>& val,
                                                     const std::vector<std::size_t>& test)>;

struct FoldSplit {
  std::vector<std::size_t> train, val, test;
};

// Test = fold f, validation = fold f+1 (mod folds), training = the rest.
inline FoldSplit split_for_fold(const std::vector<int>& fold_of, int fold, int folds) {
  FoldSplit s;
  const int val_fold = (fold + 1) % folds;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] == fold) s.test.push_back(i);
    else if (fold_of[i] == val_fold) s.val.push_back(i);
    else s.train.push_back(i);
  }
  return s;
}

inline MetricsReport cross_validate_with(std::span<const int> labels, int folds, std::uint64_t seed,
                                         const FoldRunner& runner, std::vector<int>* fold_out = nullptr) {
  const auto fold_of = stratified_folds(labels, folds, derive_seed(seed, {kStreamFolds}));
  MetricsReport report;
  for (int f = 0; f < folds; ++f) {
    const auto split = split_for_fold(fold_of, f, folds);
    const auto probs = runner(f, split.train, split.val, split.test);
    if (probs.size() != split.test.size()) throw InvariantError("runner returned wrong number of scores");
    std::vector<int> y;
    for (std::size_t i : split.test) y.push_back(labels[i]);
    report.folds.push_back(compute_metrics(y, probs));
  }
  report.finalize();
  if (fold_out != nullptr) *fold_out = fold_of;
  return report;
}

// Test-set predictions for one fold with trained parameters.
inline std::vector<SamplePrediction> predict_fold(const ModelParameters& params,
                                                  const std::vector<PreparedSample>& data,
                                                  const std::vector<std::size_t>& test_idx,
                                                  const ExperimentConfig& cfg, int fold) {
  std::vector<SamplePrediction> out(test_idx.size());
  parallel_for(test_idx.size(), cfg.train.jobs, [&](std::size_t j) {
    const std::size_t i = test_idx[j];
    out[j] = {i, fold, infer_sample(params, data[i].observations, data[i].label, cfg.smc, eval_seed(cfg.seed, i))};
  });
  return out;
}

inline double positive_score(const SampleOutput& o) { return o.record.averaged()(1); }

inline CrossValidationResult cross_validate(const std::vector<PreparedSample>& data, const ExperimentConfig& cfg) {
  if (data.empty()) throw InputError("empty dataset");
  cfg.smc.validate();
  std::vector<int> labels;
  for (const auto& s : data) labels.push_back(s.label);
  CrossValidationResult res;
  res.predictions.resize(data.size());
  FoldRunner runner = [&](int f, const std::vector<std::size_t>& train, const std::vector<std::size_t>& val,
                          const std::vector<std::size_t>& test) {
    res.training.push_back(train_fold(data, train, val, cfg, f));
    auto preds = predict_fold(res.training.back().params, data, test, cfg, f);
    std::vector<double> scores;
    for (auto& p : preds) {
      scores.push_back(positive_score(p.output));
      res.predictions[p.index] = std::move(p);
    }
    return scores;
  };
  res.report = cross_validate_with(labels, cfg.folds, cfg.seed, runner, &res.fold_of);
  return res;
}

// Re-evaluates stored per-fold parameters on the same folds.
inline CrossValidationResult evaluate_folds(const std::vector<PreparedSample>& data,
                                            const std::vector<ModelParameters>& fold_params,
                                            const ExperimentConfig& cfg) {
  std::vector<int> labels;
  for (const auto& s : data) labels.push_back(s.label);
  if (static_cast<int>(fold_params.size()) != cfg.folds) throw InputError("need one checkpoint per fold");
  CrossValidationResult res;
  res.predictions.resize(data.size());
  FoldRunner runner = [&](int f, const std::vector<std::size_t>&, const std::vector<std::size_t>&,
                          const std::vector<std::size_t>& test) {
    auto preds = predict_fold(fold_params[static_cast<std::size_t>(f)], data, test, cfg, f);
    std::vector<double> scores;
    for (auto& p : preds) {
      scores.push_back(positive_score(p.output));
      res.predictions[p.index] = std::move(p);
    }
    return scores;
  };
  res.report = cross_validate_with(labels, cfg.folds, cfg.seed, runner, &res.fold_of);
  return res;
}

struct AblationRow {
  Index particles = 0;
  MetricsReport report;
  double runtime_seconds = 0.0;
};

inline std::vector<AblationRow> ablate_particles(const std::vector<PreparedSample>& data,
                                                 const ExperimentConfig& base,
                                                 const std::vector<Index>& particle_counts) {
  std::vector<AblationRow> rows;
  for (Index k : particle_counts) {
    if (k < 1) throw InputError("particle counts must be >= 1");
    ExperimentConfig cfg = base;
    cfg.smc.particles = k;
    const auto t0 = std::chrono::steady_clock::now();
    auto res = cross_validate(data, cfg);
    const auto t1 = std::chrono::steady_clock::now();
    rows.push_back({k, std::move(res.report), std::chrono::duration<double>(t1 - t0).count()});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Scalar linear-Gaussian model

struct LinearGaussianSpec {
  double a = 0.9;   // x_t = a x_{t-1} + v_t, v ~ N(0, q)
  double q = 1.0;
  double h = 1.0;   // o_t = h x_t + w_t, w ~ N(0, r)
  double r = 1.0;
  double m0 = 0.0;  // x_0 ~ N(m0, p0)
  double p0 = 1.0;
  Index horizon = 100;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(q > 0.0) || !(r > 0.0) || !(p0 > 0.0)) throw InputError("variances must be positive");
    if (horizon < 1) throw InputError("horizon must be >= 1");
  }
};

struct LinearGaussianTrajectory {
  std::vector<double> states;        // x_1..x_T
  std::vector<double> observations;  // o_1..o_T
};

inline LinearGaussianTrajectory simulate_linear_gaussian(const LinearGaussianSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  LinearGaussianTrajectory traj;
  double x = spec.m0 + std::sqrt(spec.p0) * gauss(rng);
  for (Index t = 0; t < spec.horizon; ++t) {
    x = spec.a * x + std::sqrt(spec.q) * gauss(rng);
    traj.states.push_back(x);
    traj.observations.push_back(spec.h * x + std::sqrt(spec.r) * gauss(rng));
  }
  return traj;
}

struct KalmanOutput {
  std::vector<double> means;
  std::vector<double> variances;
};

inline KalmanOutput kalman_oracle(const LinearGaussianSpec& spec, std::span<const double> observations) {
  spec.validate();
  KalmanOutput out;
  double m = spec.m0;
  double p = spec.p0;
  for (double o : observations) {
    const double mp = spec.a * m;
    const double pp = spec.a * spec.a * p + spec.q;
    const double s = spec.h * spec.h * pp + spec.r;
    const double gain = pp * spec.h / s;
    m = mp + gain * (o - spec.h * mp);
    p = (1.0 - gain * spec.h) * pp;
    out.means.push_back(m);
    out.variances.push_back(p);
  }
  return out;
}

// Bootstrap proposal, exact Gaussian likelihood.
class LinearGaussianModel : public PlainWeightPolicy {
 public:
  using Particle = double;
  using Observation = double;

  explicit LinearGaussianModel(const LinearGaussianSpec& spec) : spec_(spec) {}

  void transition(double& x, Rng& rng) { x = spec_.a * x + std::sqrt(spec_.q) * gauss_(rng); }
  void update(double&, const double&) {}
  double log_likelihood(const double& x, const double& o) const {
    const double d = o - spec_.h * x;
    return -0.5 * d * d / spec_.r;
  }

 private:
  LinearGaussianSpec spec_;
  std::normal_distribution<double> gauss_{0.0, 1.0};
};

struct FilterValidation {
  double rmse = 0.0;
  std::vector<double> particle_means;
  KalmanOutput kalman;
};

// Runs filter_step with the scalar model and compares weighted posterior
// means with the Kalman filter. filter_seed defaults to the spec seed.
inline FilterValidation validate_filter(const LinearGaussianSpec& spec, Index particles, double alpha,
                                        std::optional<std::uint64_t> filter_seed = std::nullopt) {
  if (particles < 1) throw InputError("particle count must be >= 1");
  const auto traj = simulate_linear_gaussian(spec);
  FilterValidation v;
  v.kalman = kalman_oracle(spec, traj.observations);

  Rng rng(derive_seed(filter_seed.value_or(spec.seed), {0x5eedULL}));
  std::normal_distribution<double> gauss(0.0, 1.0);
  LinearGaussianModel model(spec);
  FilterState<LinearGaussianModel> state;
  for (Index k = 0; k < particles; ++k) {
    state.particles.push_back(spec.m0 + std::sqrt(spec.p0) * gauss(rng));
    state.lineage.push_back(static_cast<int>(k));
  }
  state.weights.assign(static_cast<std::size_t>(particles), 1.0 / static_cast<double>(particles));
  SoftResampleConfig cfg;
  cfg.alpha = alpha;
  cfg.trigger = 1.0;
  cfg.validate();
  double se = 0.0;
  for (std::size_t t = 0; t < traj.observations.size(); ++t) {
    filter_step(model, state, traj.observations[t], cfg, rng);
    double mean = 0.0;
    for (std::size_t k = 0; k < state.particles.size(); ++k) mean += state.weights[k] * state.particles[k];
    v.particle_means.push_back(mean);
    se += (mean - v.kalman.means[t]) * (mean - v.kalman.means[t]);
  }
  v.rmse = std::sqrt(se / static_cast<double>(traj.observations.size()));
  return v;
}

}  // namespace smcgcn
