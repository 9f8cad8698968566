#pragma once

// CSV artifacts of a run. Numbers are written with round-trip precision so
// that identical runs produce identical files.

#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "smcgcn/csv.hpp"
#include "smcgcn/experiment.hpp"

namespace smcgcn {

// results.csv
//   fold,accuracy,sensitivity,specificity,auc,tp,tn,fp,fn
// one row per fold, then rows "mean" and "std" with empty counts.
inline void write_results_csv(std::ostream& out, const MetricsReport& r) {
  out << "fold,accuracy,sensitivity,specificity,auc,tp,tn,fp,fn\n";
  for (std::size_t f = 0; f < r.folds.size(); ++f) {
    const auto& m = r.folds[f];
    out << f << ',' << csv::format_exact(m.accuracy) << ',' << csv::format_exact(m.sensitivity) << ','
        << csv::format_exact(m.specificity) << ',' << csv::format_exact(m.auc) << ',' << m.confusion.tp << ','
        << m.confusion.tn << ',' << m.confusion.fp << ',' << m.confusion.fn << '\n';
  }
  out << "mean," << csv::format_exact(r.accuracy.mean) << ',' << csv::format_exact(r.sensitivity.mean) << ','
      << csv::format_exact(r.specificity.mean) << ',' << csv::format_exact(r.auc.mean) << ",,,,\n";
  out << "std," << csv::format_exact(r.accuracy.std) << ',' << csv::format_exact(r.sensitivity.std) << ','
      << csv::format_exact(r.specificity.std) << ',' << csv::format_exact(r.auc.std) << ",,,,\n";
}

// predictions.csv
//   sample_id,fold,timestamp,class_0_prob,class_1_prob,label
// one row per window plus a row with timestamp "mean" holding the averaged
// prediction used for the metrics.
inline void write_predictions_csv(std::ostream& out, const std::vector<PreparedSample>& data,
                                  const std::vector<SamplePrediction>& preds) {
  out << "sample_id,fold,timestamp,class_0_prob,class_1_prob,label\n";
  for (const auto& p : preds) {
    const auto& rec = p.output.record;
    const std::string& id = data[p.index].id;
    auto row = [&](const std::string& ts, const Vector& y) {
      out << id << ',' << p.fold << ',' << ts << ',' << csv::format_exact(y(0)) << ',' << csv::format_exact(y(1)) << ','
          << data[p.index].label << '\n';
    };
    for (std::size_t t = 0; t < rec.per_timestamp.size(); ++t) row(std::to_string(t), rec.per_timestamp[t]);
    row("mean", rec.averaged());
  }
}

// history.csv
//   fold,epoch,train_loss,val_loss,best
inline void write_history_csv(std::ostream& out, const std::vector<FoldTraining>& training) {
  out << "fold,epoch,train_loss,val_loss,best\n";
  for (std::size_t f = 0; f < training.size(); ++f) {
    const auto& t = training[f];
    for (std::size_t e = 0; e < t.train_loss.size(); ++e)
      out << f << ',' << e + 1 << ',' << csv::format_exact(t.train_loss[e]) << ',' << csv::format_exact(t.val_loss[e])
          << ',' << (static_cast<Index>(e + 1) == t.best_epoch ? 1 : 0) << '\n';
  }
}

// diagnostics.csv
//   sample_id,timestamp,particle,weight,lineage,ess,resampled
// ess is measured before resampling; weight and lineage after.
inline void write_diagnostics_csv(std::ostream& out, const std::vector<PreparedSample>& data,
                                  const std::vector<SamplePrediction>& preds) {
  out << "sample_id,timestamp,particle,weight,lineage,ess,resampled\n";
  for (const auto& p : preds) {
    const auto& diag = p.output.diagnostics;
    for (std::size_t t = 0; t < diag.size(); ++t)
      for (std::size_t k = 0; k < diag[t].weights.size(); ++k)
        out << data[p.index].id << ',' << t << ',' << k << ',' << csv::format_exact(diag[t].weights[k]) << ','
            << diag[t].lineage[k] << ',' << csv::format_exact(diag[t].ess) << ',' << (diag[t].resampled ? 1 : 0)
            << '\n';
  }
}

// ablation.csv
//   particles,accuracy_mean,accuracy_std,auc_mean,auc_std,runtime_seconds
inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "particles,accuracy_mean,accuracy_std,auc_mean,auc_std,runtime_seconds\n";
  for (const auto& r : rows)
    out << r.particles << ',' << csv::format_exact(r.report.accuracy.mean) << ','
        << csv::format_exact(r.report.accuracy.std) << ',' << csv::format_exact(r.report.auc.mean) << ','
        << csv::format_exact(r.report.auc.std) << ',' << csv::format_exact(r.runtime_seconds) << '\n';
}

template <class Writer, class... Args>
void write_file(const std::string& path, Writer&& writer, const Args&... args) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  writer(out, args...);
  if (!out) throw InputError("write failed: " + path);
}

template <class Writer, class... Args>
std::string write_string(Writer&& writer, const Args&... args) {
  std::ostringstream out;
  writer(out, args...);
  return out.str();
}

}  // namespace smcgcn
