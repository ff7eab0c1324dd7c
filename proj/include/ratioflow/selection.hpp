#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ratioflow/core.hpp"
#include "ratioflow/estimator.hpp"

namespace ratioflow {

enum class Criterion { QAIC, QCAIC, QBIC };

inline constexpr Criterion kAllCriteria[] = {Criterion::QAIC, Criterion::QCAIC, Criterion::QBIC};

constexpr const char* to_string(Criterion c) noexcept {
  switch (c) {
    case Criterion::QAIC: return "QAIC";
    case Criterion::QCAIC: return "QCAIC";
    case Criterion::QBIC: return "QBIC";
  }
  return "?";
}

struct CriterionReport {
  std::string model;
  std::size_t d = 0;
  std::size_t T = 0;
  double objective = 0.0;
  double qaic = 0.0;
  double qcaic = 0.0;
  double qbic = 0.0;
  bool boundary_hit = false;

  double value(Criterion c) const noexcept {
    switch (c) {
      case Criterion::QAIC: return qaic;
      case Criterion::QCAIC: return qcaic;
      case Criterion::QBIC: return qbic;
    }
    return qaic;
  }
};

/// -2 H_T penalized by 2d, (log T + 1) d and (log T) d.
inline CriterionReport criteria(double objective, std::size_t T, std::size_t d, std::string model = {}) {
  if (T < 1) throw Error(ErrorCode::InsufficientSessions, "criteria need T >= 1");
  CriterionReport r;
  r.model = std::move(model);
  r.d = d;
  r.T = T;
  r.objective = objective;
  const double dd = static_cast<double>(d);
  const double lt = std::log(static_cast<double>(T));
  r.qaic = -2.0 * objective + 2.0 * dd;
  r.qcaic = -2.0 * objective + (lt + 1.0) * dd;
  r.qbic = -2.0 * objective + lt * dd;
  return r;
}

inline CriterionReport criteria(const FitResult& fit, std::string model = {}) {
  auto r = criteria(fit.objective, fit.sessions, fit.dimension(), std::move(model));
  r.boundary_hit = fit.boundary_hit;
  return r;
}

/// Ascending by criterion value; ties go to smaller d, then name.
/// Throws MixedT when the reports were calibrated on different spans.
inline std::vector<CriterionReport> rank_models(std::vector<CriterionReport> reports, Criterion c) {
  for (const auto& r : reports)
    if (r.T != reports.front().T)
      throw Error(ErrorCode::MixedT, "cannot rank '" + reports.front().model + "' (T=" +
                                         std::to_string(reports.front().T) + ") against '" + r.model +
                                         "' (T=" + std::to_string(r.T) + ")");
  std::stable_sort(reports.begin(), reports.end(), [c](const CriterionReport& a, const CriterionReport& b) {
    const double va = a.value(c), vb = b.value(c);
    if (va != vb) return va < vb;
    if (a.d != b.d) return a.d < b.d;
    return a.model < b.model;
  });
  return reports;
}

/// criterion -> model -> number of instruments where that model ranked first.
using SelectionCounts = std::map<std::string, std::map<std::string, std::size_t>>;

/// `per_instrument` holds each instrument's unranked reports.
inline SelectionCounts selection_counts(const std::vector<std::vector<CriterionReport>>& per_instrument) {
  SelectionCounts out;
  for (auto c : kAllCriteria) out[to_string(c)];
  for (const auto& reports : per_instrument) {
    if (reports.empty()) continue;
    for (auto c : kAllCriteria) ++out[to_string(c)][rank_models(reports, c).front().model];
  }
  return out;
}

}  // namespace ratioflow
