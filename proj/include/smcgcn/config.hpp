#pragma once

// Run configuration: a flat JSON object of key/value pairs. Every key can
// also be given as a command-line flag (--key-with-dashes), which overrides
// the file value.

#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "smcgcn/error.hpp"
#include "smcgcn/experiment.hpp"
#include "smcgcn/signal_ingest.hpp"

namespace smcgcn {

struct RunConfig {
  // graph construction
  Index window_length = 100;
  Index stride = 0;  // required: 0 means unset
  Index max_windows = 20;  // -1 keeps every window
  double shrinkage = 0.1;
  Index k_top = -1;  // -1: ceil(R / 10)
  // model
  Index layers = 2;
  Index cheb_order = 3;
  Index d_hidden = 64;
  Index d_mlp = 32;
  // filter
  Index particles = 30;
  double alpha = 0.5;
  double resample_trigger = 1.0;
  Index knn = 5;
  double sigma = 1.0;
  double init_noise = 0.1;
  // training
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index batch = 12;
  Index max_epochs = 50;
  Index patience = 10;
  int folds = 5;
  std::uint64_t seed = 1;
  int jobs = 1;

  void validate() const {
    if (stride <= 0) throw InputError("stride is required and must be >= 1 (--stride)");
    if (window_length < 2) throw InputError("window_length must be >= 2");
    if (max_windows == 0 || max_windows < -1) throw InputError("max_windows must be >= 1 or -1 (all)");
    if (!(shrinkage > 0.0 && shrinkage <= 1.0)) throw InputError("shrinkage must lie in (0, 1]");
    if (k_top < -1) throw InputError("k_top must be >= 0 or -1 (auto)");
    if (layers < 2) throw InputError("layers must be >= 2");
    if (cheb_order < 1) throw InputError("cheb_order must be >= 1");
    if (d_hidden < 1 || d_mlp < 1) throw InputError("hidden widths must be >= 1");
    if (!(lr > 0.0)) throw InputError("lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw InputError("Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw InputError("adam_eps must be > 0");
    if (batch < 1) throw InputError("batch must be >= 1");
    if (max_epochs < 0) throw InputError("max_epochs must be >= 0");
    if (patience < 1) throw InputError("patience must be >= 1");
    if (folds < 3) throw InputError("folds must be >= 3 (train/validation/test)");
    if (jobs < 1) throw InputError("jobs must be >= 1");
    smc().validate();
  }

  GraphBuildOptions graph() const {
    GraphBuildOptions g;
    g.window.window_length = window_length;
    g.window.stride = stride;
    g.shrinkage = shrinkage;
    g.k_top = k_top;
    g.max_windows = max_windows;
    return g;
  }

  SmcConfig smc() const {
    SmcConfig s;
    s.particles = particles;
    s.init_noise = init_noise;
    s.k_top = k_top;
    s.knn = knn;
    s.sigma = sigma;
    s.resample.alpha = alpha;
    s.resample.trigger = resample_trigger;
    return s;
  }

  ExperimentConfig experiment() const {
    ExperimentConfig e;
    e.shape.layers = layers;
    e.shape.cheb_order = cheb_order;
    e.shape.d_hidden = d_hidden;
    e.shape.d_mlp = d_mlp;
    e.shape.classes = 2;
    e.smc = smc();
    e.train.adam = {lr, beta1, beta2, adam_eps};
    e.train.batch = batch;
    e.train.max_epochs = max_epochs;
    e.train.patience = patience;
    e.train.jobs = jobs;
    e.folds = folds;
    e.seed = seed;
    return e;
  }
};

struct ConfigField {
  std::string key;
  std::string help;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
  std::function<nlohmann::json(const RunConfig&)> get;
};

namespace detail {
template <class T>
ConfigField field(std::string key, std::string help, T RunConfig::*member) {
  return ConfigField{
      key, std::move(help),
      [member, key](RunConfig& c, const nlohmann::json& j) {
        try {
          if constexpr (std::is_floating_point_v<T>) {
            if (!j.is_number()) throw InputError("");
          } else {
            if (!j.is_number_integer() && !j.is_number_unsigned()) throw InputError("");
          }
          c.*member = j.get<T>();
        } catch (const std::exception&) {
          throw InputError("config key '" + key + "': expected a " +
                           (std::is_floating_point_v<T> ? "number" : "integer") + ", got " + j.dump());
        }
      },
      [member](const RunConfig& c) { return nlohmann::json(c.*member); }};
}
}  // namespace detail

inline const std::vector<ConfigField>& config_fields() {
  using detail::field;
  static const std::vector<ConfigField> fields = {
      field("window_length", "sliding window length in timestamps", &RunConfig::window_length),
      field("stride", "sliding window stride in timestamps (required)", &RunConfig::stride),
      field("max_windows", "keep at most this many windows per series (-1 = all)", &RunConfig::max_windows),
      field("shrinkage", "ridge shrinkage toward identity for partial correlations", &RunConfig::shrinkage),
      field("k_top", "edges kept per node in observed adjacency (-1 = ceil(R/10))", &RunConfig::k_top),
      field("layers", "number of Chebyshev layers", &RunConfig::layers),
      field("cheb_order", "Chebyshev polynomials per layer", &RunConfig::cheb_order),
      field("d_hidden", "hidden width of the Chebyshev layers", &RunConfig::d_hidden),
      field("d_mlp", "hidden width of the MLP head", &RunConfig::d_mlp),
      field("particles", "number of graph particles", &RunConfig::particles),
      field("alpha", "soft-resampling mixture weight in [0, 1]", &RunConfig::alpha),
      field("resample_trigger", "resample when ESS <= trigger * particles", &RunConfig::resample_trigger),
      field("knn", "neighbours aggregated by the particle likelihood", &RunConfig::knn),
      field("sigma", "bandwidth of the particle likelihood", &RunConfig::sigma),
      field("init_noise", "feature noise / edge dropout of initial particles", &RunConfig::init_noise),
      field("lr", "Adam learning rate", &RunConfig::lr),
      field("beta1", "Adam first-moment decay", &RunConfig::beta1),
      field("beta2", "Adam second-moment decay", &RunConfig::beta2),
      field("adam_eps", "Adam epsilon", &RunConfig::adam_eps),
      field("batch", "mini-batch size", &RunConfig::batch),
      field("max_epochs", "epoch budget per fold", &RunConfig::max_epochs),
      field("patience", "stop after this many epochs without validation improvement", &RunConfig::patience),
      field("folds", "cross-validation folds", &RunConfig::folds),
      field("seed", "master random seed", &RunConfig::seed),
      field("jobs", "worker threads (results do not depend on it)", &RunConfig::jobs),
  };
  return fields;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : config_fields()) j[f.key] = f.get(c);
  return j;
}

// Applies every key of a flat JSON object; unknown keys are errors.
inline void apply_config_json(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("config must be a flat JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& fields = config_fields();
    auto f = std::find_if(fields.begin(), fields.end(), [&](const ConfigField& cf) { return cf.key == it.key(); });
    if (f == fields.end()) throw InputError("unknown config key '" + it.key() + "'");
    f->set(c, it.value());
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed config " + path + ": " + e.what());
  }
  RunConfig c;
  apply_config_json(c, j);
  return c;
}

inline void save_config(const std::string& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  out << config_to_json(c).dump(2) << '\n';
}

}  // namespace smcgcn
