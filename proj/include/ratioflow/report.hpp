#pragma once

// Output writers. Every file carries the library version and the hash of the
// configuration that produced it: JSON as top-level fields, CSV as a leading
// '#' comment line.

#include <charconv>
#include <ostream>
#include <string>
#include <vector>

#include "ratioflow/backtest.hpp"
#include "ratioflow/config.hpp"
#include "ratioflow/selection.hpp"
#include "ratioflow/simulator.hpp"

namespace ratioflow {

struct OutputMeta {
  std::string version{kVersion};
  std::string config_hash;
};

/// Shortest round-trip form of a double.
inline std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

inline void write_csv_meta(std::ostream& os, const OutputMeta& meta) {
  os << "# ratioflow " << meta.version << " config " << meta.config_hash << '\n';
}

inline Json fit_to_json(const FitResult& fit, const ModelSpec& model, const OutputMeta& meta) {
  Json j;
  j["version"] = meta.version;
  j["config_hash"] = meta.config_hash;
  j["model"] = model.name;
  j["theta"] = config_detail::vec_json(fit.theta_hat.values);
  j["std_errors"] = fit.std_errors ? config_detail::vec_json(*fit.std_errors) : Json(nullptr);
  j["objective"] = fit.objective;
  j["T"] = fit.sessions;
  j["n"] = fit.samples;
  j["d"] = fit.dimension();
  j["iterations"] = fit.iterations;
  j["gradient_norm"] = fit.gradient_norm;
  j["converged"] = fit.converged;
  j["boundary_hit"] = fit.boundary_hit;
  j["warnings"] = fit.warnings;
  return j;
}

inline void write_criteria_csv(std::ostream& os, const std::string& instrument,
                               const std::vector<CriterionReport>& reports, const OutputMeta& meta,
                               bool header = true) {
  if (header) {
    write_csv_meta(os, meta);
    os << "instrument,model,d,T,H,qaic,qcaic,qbic\n";
  }
  for (const auto& r : reports)
    os << instrument << ',' << r.model << ',' << r.d << ',' << r.T << ',' << fmt(r.objective) << ',' << fmt(r.qaic)
       << ',' << fmt(r.qcaic) << ',' << fmt(r.qbic) << '\n';
}

inline Json selection_to_json(const SelectionCounts& counts, const OutputMeta& meta) {
  Json j;
  j["version"] = meta.version;
  j["config_hash"] = meta.config_hash;
  Json c;
  for (const auto& [criterion, models] : counts) {
    Json m;
    for (const auto& [name, n] : models) m[name] = n;
    c[criterion] = std::move(m);
  }
  j["counts"] = std::move(c);
  return j;
}

inline void write_accuracy_csv(std::ostream& os, const std::vector<AccuracyReport>& reports, const OutputMeta& meta) {
  write_csv_meta(os, meta);
  os << "instrument,model,l,n_pred,accuracy,alternation_accuracy,day_weighted_accuracy,failed_windows\n";
  for (const auto& r : reports)
    os << r.instrument << ',' << r.model << ',' << r.lookback_days << ',' << r.n_predictions << ','
       << fmt(r.accuracy) << ',' << fmt(r.alternation_accuracy) << ',' << fmt(r.day_weighted_accuracy) << ','
       << r.failed_windows << '\n';
}

inline void write_predictions_ndjson(std::ostream& os, const AccuracyReport& r) {
  for (const auto& p : r.records) {
    Json j;
    j["session_id"] = p.session_id;
    j["timestamp_ns"] = p.timestamp;
    j["order_index"] = p.order_index;
    j["predicted"] = to_string(p.predicted);
    j["actual"] = to_string(p.actual);
    j["r_ma"] = p.r_ma;
    os << j.dump() << '\n';
  }
}

inline void write_dataset_csv(std::ostream& os, const Dataset& data, const OutputMeta& meta) {
  write_csv_meta(os, meta);
  os << "side,session_id,timestamp_ns";
  for (std::size_t j = 0; j < data.d; ++j) os << ",x_" << j;
  os << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    os << to_string(data.side[i]) << ',' << data.session[i] << ',' << data.timestamp[i];
    for (double v : data.row(i)) os << ',' << fmt(v);
    os << '\n';
  }
}

inline void write_truth_ndjson(std::ostream& os, const std::vector<SimulatedSession>& sessions) {
  for (const auto& s : sessions)
    for (const auto& g : s.truth) {
      Json j;
      j["session_id"] = s.id;
      j["ts"] = g.timestamp;
      j["side"] = to_string(g.side);
      j["x"] = g.x;
      j["r_ma"] = g.r_ma;
      j["complete_history"] = g.complete_history;
      os << j.dump() << '\n';
    }
}

}  // namespace ratioflow
