// smcgcn command-line tool.
//
//   smcgcn ingest FILE --out DIR [--dump]
//   smcgcn synth --out DIR
//   smcgcn train --data DIR/manifest.csv --out RUN
//   smcgcn eval --run RUN
//   smcgcn ablate --data DIR/manifest.csv --out DIR
//   smcgcn validate-smc
//
// Every run-configuration key is accepted as a flag on every command.
// Precedence: built-in defaults < --config file < flags.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "smcgcn/smcgcn.hpp"

namespace fs = std::filesystem;
using namespace smcgcn;
using namespace smcgcn::csv;

namespace {

std::string dashed(std::string key) {
  for (auto& c : key)
    if (c == '_') c = '-';
  return key;
}

struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config_path, "JSON run configuration (flags override its values)");
    const RunConfig defaults;
    for (const auto& f : config_fields()) {
      auto* opt = cmd.add_option("--" + dashed(f.key), values[f.key], f.help);
      const auto def = f.get(defaults);
      opt->default_str(def.dump());
      opt->type_name(def.is_number_float() ? "FLOAT" : "INT");
      opt->group("Run configuration");
      opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
      options[f.key] = opt;
    }
  }

  // base: values already in effect (e.g. a stored run configuration).
  RunConfig resolve(RunConfig base = RunConfig{}) const {
    if (!config_path.empty()) {
      RunConfig from_file = load_config(config_path);
      base = from_file;
    }
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [key, opt] : options) {
      if (opt->count() == 0) continue;
      const std::string& text = values.at(key);
      nlohmann::json v;
      try {
        v = nlohmann::json::parse(text);
      } catch (const nlohmann::json::exception&) {
        throw InputError("--" + dashed(key) + ": expected a number, got '" + text + "'");
      }
      j[key] = v;
    }
    apply_config_json(base, j);
    return base;
  }
};

std::uint64_t fnv1a(std::uint64_t h, const std::string& bytes) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create directory " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

// Dataset manifest: CSV with header id,label,path; paths are relative to the
// manifest's directory unless absolute.
std::vector<LabeledSeries> read_dataset(const std::string& manifest) {
  std::ifstream in(manifest, std::ios::binary);
  if (!in) throw InputError("cannot open dataset manifest " + manifest);
  const fs::path base = fs::path(manifest).parent_path();
  std::string line;
  if (!std::getline(in, line)) throw InputError(manifest + ": empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "id,label,path") throw InputError(manifest + ": header must be 'id,label,path'");
  std::vector<LabeledSeries> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() != 3)
      throw InputError(manifest + ": row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                       " fields, expected 3");
    LabeledSeries s;
    s.id = fields[0];
    if (fields[1] != "0" && fields[1] != "1")
      throw InputError(manifest + ": row " + std::to_string(row) + ": label must be 0 or 1");
    s.label = fields[1] == "1" ? 1 : 0;
    fs::path p(fields[2]);
    if (p.is_relative()) p = base / p;
    s.series = read_time_series(p.string());
    out.push_back(std::move(s));
  }
  if (out.empty()) throw InputError(manifest + ": no samples");
  const Index rois = out.front().series.rois();
  for (const auto& s : out)
    if (s.series.rois() != rois)
      throw InputError("sample " + s.id + " has " + std::to_string(s.series.rois()) + " ROIs, expected " +
                       std::to_string(rois));
  return out;
}

void print_report(const std::string& title, const MetricsReport& r) {
  std::cout << title << ": accuracy " << r.accuracy.mean << " +- " << r.accuracy.std << ", sensitivity "
            << r.sensitivity.mean << " +- " << r.sensitivity.std << ", specificity " << r.specificity.mean
            << " +- " << r.specificity.std << ", AUC " << r.auc.mean << " +- " << r.auc.std << '\n';
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string input;
  std::string out;
  bool dump = false;
};

int cmd_ingest(const IngestArgs& a, const RunConfig& rc) {
  if (rc.stride <= 0) throw InputError("stride is required and must be >= 1 (--stride)");
  const TimeSeries ts = read_time_series(a.input);
  const auto opt = rc.graph();
  const auto windows = sliding_windows(ts, opt.window);
  std::size_t used = windows.size();
  if (opt.max_windows >= 0) used = std::min(used, static_cast<std::size_t>(opt.max_windows));
  ensure_dir(a.out);

  nlohmann::json m;
  m["input"] = a.input;
  m["rois"] = ts.rois();
  m["length"] = ts.length();
  m["window_length"] = opt.window.window_length;
  m["stride"] = opt.window.stride;
  m["max_windows"] = opt.max_windows;
  m["window_count"] = windows.size();
  m["windows_used"] = used;
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t t = 0; t < windows.size(); ++t)
    list.push_back({{"index", t}, {"start", windows[t].start}, {"length", windows[t].length}});
  m["windows"] = std::move(list);
  {
    std::ofstream out(join(a.out, "manifest.json"), std::ios::binary);
    if (!out) throw InputError("cannot write " + join(a.out, "manifest.json"));
    out << m.dump(2) << '\n';
  }

  if (a.dump) {
    const Index k_top = opt.k_top < 0 ? default_k_top(ts.rois()) : opt.k_top;
    for (std::size_t t = 0; t < used; ++t) {
      char name[32];
      std::snprintf(name, sizeof(name), "%04zu", t);
      TimeSeries w;
      w.roi_labels = ts.roi_labels;
      w.values = ts.values.middleCols(windows[t].start, windows[t].length);
      write_time_series(join(a.out, std::string("window_") + name + ".csv"), w);
      const auto obs = build_observation(w.values, opt.shrinkage, k_top, static_cast<Index>(t));
      write_matrix(join(a.out, std::string("adjacency_") + name + ".csv"), obs.adjacency, ts.roi_labels);
      write_matrix(join(a.out, std::string("features_") + name + ".csv"), obs.features, ts.roi_labels);
    }
  }
  std::cout << "windows " << windows.size() << " (using " << used << ") -> " << join(a.out, "manifest.json")
            << '\n';
  return 0;
}

struct SynthArgs {
  std::string out;
  Index rois = 20;
  Index length = 200;
  Index samples_per_class = 200;
  Index switch_time = 100;
  Index communities = 4;
  double noise = 0.1;
};

int cmd_synth(const SynthArgs& a, const RunConfig& rc) {
  if (a.communities < 1 || a.communities > a.rois) throw InputError("communities must lie in [1, rois]");
  SyntheticSpec spec = default_synthetic_spec(a.rois, a.communities);
  spec.length = a.length;
  spec.samples_per_class = a.samples_per_class;
  spec.regime_switch_time = a.switch_time;
  spec.noise = a.noise;
  spec.seed = rc.seed;
  const auto data = generate_synthetic(spec);
  ensure_dir(a.out);
  ensure_dir(join(a.out, "series"));
  std::ostringstream manifest;
  manifest << "id,label,path\n";
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& s : data) {
    std::ostringstream body;
    write_time_series(body, s.series);
    const std::string rel = "series/" + s.id + ".csv";
    std::ofstream out(join(a.out, rel), std::ios::binary);
    if (!out) throw InputError("cannot write " + join(a.out, rel));
    out << body.str();
    manifest << s.id << ',' << s.label << ',' << rel << '\n';
    h = fnv1a(h, body.str());
  }
  h = fnv1a(h, manifest.str());
  std::ofstream out(join(a.out, "manifest.csv"), std::ios::binary);
  if (!out) throw InputError("cannot write " + join(a.out, "manifest.csv"));
  out << manifest.str();
  std::cout << data.size() << " samples -> " << join(a.out, "manifest.csv") << "\nchecksum " << hex64(h) << '\n';
  return 0;
}

void write_fold_outputs(const std::string& dir, const std::string& prefix, const std::vector<PreparedSample>& data,
                        const CrossValidationResult& res) {
  write_file(join(dir, prefix + "results.csv"), write_results_csv, res.report);
  write_file(join(dir, prefix + "predictions.csv"), write_predictions_csv, data, res.predictions);
  write_file(join(dir, prefix + "diagnostics.csv"), write_diagnostics_csv, data, res.predictions);
}

struct TrainArgs {
  std::string data;
  std::string out;
};

int cmd_train(const TrainArgs& a, const RunConfig& rc) {
  rc.validate();
  const auto series = read_dataset(a.data);
  const auto data = prepare_samples(series, rc.graph(), rc.jobs);
  ensure_dir(a.out);
  save_config(join(a.out, "config.json"), rc);
  {
    std::ofstream out(join(a.out, "run.json"), std::ios::binary);
    out << nlohmann::json{{"data", fs::absolute(a.data).string()}, {"samples", data.size()},
                          {"windows", data.front().observations.size()}}
               .dump(2)
        << '\n';
  }
  std::cout << data.size() << " samples, " << data.front().observations.size() << " windows each\n";
  const auto res = cross_validate(data, rc.experiment());
  for (std::size_t f = 0; f < res.training.size(); ++f)
    save_checkpoint(join(a.out, "checkpoint_fold" + std::to_string(f) + ".json"), res.training[f].params,
                    res.training[f].adam);
  write_fold_outputs(a.out, "", data, res);
  write_file(join(a.out, "history.csv"), write_history_csv, res.training);
  print_report("test", res.report);
  return 0;
}

struct EvalArgs {
  std::string run;
  std::string data;
};

int cmd_eval(const EvalArgs& a, const ConfigFlags& flags) {
  const RunConfig rc = flags.resolve(load_config(join(a.run, "config.json")));
  rc.validate();
  std::string data_path = a.data;
  if (data_path.empty()) {
    std::ifstream in(join(a.run, "run.json"));
    if (!in) throw InputError("no --data given and " + join(a.run, "run.json") + " is missing");
    nlohmann::json j;
    try {
      in >> j;
      data_path = j.at("data").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw InputError("malformed " + join(a.run, "run.json") + ": " + e.what());
    }
  }
  const auto data = prepare_samples(read_dataset(data_path), rc.graph(), rc.jobs);
  std::vector<ModelParameters> params(static_cast<std::size_t>(rc.folds));
  for (int f = 0; f < rc.folds; ++f) {
    AdamState adam;
    load_checkpoint(join(a.run, "checkpoint_fold" + std::to_string(f) + ".json"), params[static_cast<std::size_t>(f)],
                    adam);
  }
  const auto res = evaluate_folds(data, params, rc.experiment());
  write_fold_outputs(a.run, "eval_", data, res);
  print_report("eval", res.report);

  std::ifstream recorded(join(a.run, "results.csv"), std::ios::binary);
  if (recorded) {
    std::stringstream ss;
    ss << recorded.rdbuf();
    const bool same = ss.str() == write_string(write_results_csv, res.report);
    std::cout << "matches recorded test metrics: " << (same ? "yes" : "no") << '\n';
  }
  return 0;
}

struct AblateArgs {
  std::string data;
  std::string out;
  std::vector<Index> particles = {10, 30, 50};
};

int cmd_ablate(const AblateArgs& a, const RunConfig& rc) {
  rc.validate();
  const auto data = prepare_samples(read_dataset(a.data), rc.graph(), rc.jobs);
  ensure_dir(a.out);
  save_config(join(a.out, "config.json"), rc);
  const auto rows = ablate_particles(data, rc.experiment(), a.particles);
  write_file(join(a.out, "ablation.csv"), write_ablation_csv, rows);
  for (const auto& r : rows)
    std::cout << "K=" << r.particles << " accuracy " << r.report.accuracy.mean << " AUC " << r.report.auc.mean
              << " runtime " << r.runtime_seconds << " s\n";
  return 0;
}

struct ValidateArgs {
  LinearGaussianSpec spec;
};

int cmd_validate_smc(const ValidateArgs& a, const RunConfig& rc) {
  if (rc.particles < 1) throw InputError("particle count must be >= 1");
  LinearGaussianSpec spec = a.spec;
  spec.seed = rc.seed;
  const auto v = validate_filter(spec, rc.particles, rc.alpha);
  const double bound = 0.15 * std::sqrt(spec.r);
  const bool pass = v.rmse <= bound;
  std::cout << "particles " << rc.particles << " alpha " << rc.alpha << " horizon " << spec.horizon << "\nrmse "
            << format_exact(v.rmse) << " bound " << format_exact(bound) << '\n'
            << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential Monte Carlo graph filtering with a Chebyshev GCN transition"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  auto* ingest = app.add_subcommand("ingest", "Slice a time-series CSV into windows and write a manifest");
  auto* synth = app.add_subcommand("synth", "Generate the synthetic regime-switching dataset");
  auto* train = app.add_subcommand("train", "Cross-validated training; writes a run directory");
  auto* eval = app.add_subcommand("eval", "Re-evaluate a run directory's checkpoints on their test folds");
  auto* ablate = app.add_subcommand("ablate", "Cross-validation for several particle counts");
  auto* validate = app.add_subcommand("validate-smc", "Check the filter against a Kalman filter");

  std::map<CLI::App*, ConfigFlags> flags;
  for (auto* cmd : {ingest, synth, train, eval, ablate, validate}) flags[cmd].attach(*cmd);

  IngestArgs ia;
  ingest->add_option("input", ia.input, "time-series CSV (rows = timestamps, columns = ROIs)")->required();
  ingest->add_option("--out", ia.out, "output directory")->required();
  ingest->add_flag("--dump", ia.dump, "also write each kept window and its graph matrices");

  SynthArgs sa;
  synth->add_option("--out", sa.out, "output directory")->required();
  synth->add_option("--rois", sa.rois, "nodes per graph")->capture_default_str();
  synth->add_option("--length", sa.length, "timestamps per series")->capture_default_str();
  synth->add_option("--samples-per-class", sa.samples_per_class, "samples per class")->capture_default_str();
  synth->add_option("--switch-time", sa.switch_time, "regime switch timestamp")->capture_default_str();
  synth->add_option("--communities", sa.communities, "communities per regime")->capture_default_str();
  synth->add_option("--noise", sa.noise, "white-noise level")->capture_default_str();

  TrainArgs ta;
  train->add_option("--data", ta.data, "dataset manifest CSV (id,label,path)")->required();
  train->add_option("--out", ta.out, "run directory")->required();

  EvalArgs ea;
  eval->add_option("--run", ea.run, "run directory written by train")->required();
  eval->add_option("--data", ea.data, "dataset manifest (default: the one used for training)");

  AblateArgs aa;
  ablate->add_option("--data", aa.data, "dataset manifest CSV (id,label,path)")->required();
  ablate->add_option("--out", aa.out, "output directory")->required();
  ablate->add_option("--particle-counts", aa.particles, "particle counts to compare")
      ->delimiter(',')
      ->capture_default_str();

  ValidateArgs va;
  validate->add_option("--horizon", va.spec.horizon, "number of timestamps")->capture_default_str();
  validate->add_option("--state-coef", va.spec.a, "state transition coefficient")->capture_default_str();
  validate->add_option("--process-var", va.spec.q, "process noise variance")->capture_default_str();
  validate->add_option("--obs-coef", va.spec.h, "observation coefficient")->capture_default_str();
  validate->add_option("--obs-var", va.spec.r, "observation noise variance")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kInputError);
  }

  try {
    if (*ingest) return cmd_ingest(ia, flags[ingest].resolve());
    if (*synth) return cmd_synth(sa, flags[synth].resolve());
    if (*train) return cmd_train(ta, flags[train].resolve());
    if (*eval) return cmd_eval(ea, flags[eval]);
    if (*ablate) return cmd_ablate(aa, flags[ablate].resolve());
    if (*validate) return cmd_validate_smc(va, flags[validate].resolve());
  } catch (const Error& e) {
    std::cerr << exit_code_name(e.code()) << ": " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << exit_code_name(ExitCode::kInvariantViolation) << ": " << e.what() << '\n';
    return static_cast<int>(ExitCode::kInvariantViolation);
  }
  return 0;
}
