#pragma once

// The model catalog: imbalance-only models, their cumulative-depth variants,
// lagged imbalances, sign/spread covariates and the multi-day recalibration
// family. Also ModelSpec JSON serialization.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ratioflow/covariates.hpp"

namespace ratioflow {

inline constexpr std::array<int, 8> kRecalibrationDays{2, 3, 5, 7, 10, 14, 30, 60};

/// Builds "imb<n>[_e_es][_la<m>][_sum][_<l>day]".
inline ModelSpec make_model(int n, bool cumulative, int lags, bool sign_spread, int days = 1) {
  ModelSpec spec;
  spec.name = "imb" + std::to_string(n);
  if (sign_spread) spec.name += "_e_es";
  if (lags > 0) spec.name += "_la" + std::to_string(lags);
  if (cumulative) spec.name += "_sum";
  if (days > 1) spec.name += "_" + std::to_string(days) + "day";
  spec.recalibration_days = days;

  spec.covariates.push_back(CovariateDescriptor::constant());
  for (int k = 1; k <= n; ++k)
    spec.covariates.push_back(cumulative ? CovariateDescriptor::imb_cum(k) : CovariateDescriptor::imb(k));
  for (int m = 1; m <= lags; ++m)
    for (int k = 1; k <= n; ++k)
      spec.covariates.push_back(cumulative ? CovariateDescriptor::lag_imb_cum(k, m) : CovariateDescriptor::lag_imb(k, m));
  if (sign_spread) {
    spec.covariates.push_back(CovariateDescriptor::last_sign());
    spec.covariates.push_back(CovariateDescriptor::sign_spread());
  }
  return spec;
}

/// Every catalog entry, in catalog order. Level-1 "_sum" variants coincide with
/// their plain counterparts and "_e_es_la1" appears once.
inline std::vector<ModelSpec> model_catalog() {
  std::vector<ModelSpec> out;
  auto add = [&](ModelSpec s) {
    for (const auto& e : out)
      if (e.recalibration_days == s.recalibration_days && (e.name == s.name || e.same_covariates(s))) return;
    out.push_back(std::move(s));
  };
  for (int n = 1; n <= 10; ++n) add(make_model(n, false, 0, false));
  for (int n = 1; n <= 10; ++n) add(make_model(n, true, 0, false));
  for (int n = 1; n <= 5; ++n) add(make_model(n, false, 1, false));
  for (int n = 1; n <= 5; ++n) add(make_model(n, true, 1, false));
  for (int n = 1; n <= 5; ++n) add(make_model(n, false, 0, true));
  for (int n = 1; n <= 5; ++n) add(make_model(n, true, 0, true));
  for (int n = 1; n <= 5; ++n) add(make_model(n, false, 1, true));
  for (int n = 1; n <= 5; ++n) add(make_model(n, true, 1, true));
  for (int n = 1; n <= 2; ++n)
    for (int m = 1; m <= 5; ++m) add(make_model(n, false, m, true));
  for (int n = 1; n <= 2; ++n)
    for (int l : kRecalibrationDays) add(make_model(n, false, 1, true, l));
  return out;
}

/// Catalog lookup by name. Level-1 "_sum" names resolve to the plain model.
inline std::optional<ModelSpec> find_model(const std::string& name) {
  const auto catalog = model_catalog();
  for (const auto& s : catalog)
    if (s.name == name) return s;
  if (name.starts_with("imb1_") && name.ends_with("_sum")) return find_model(name.substr(0, name.size() - 4));
  return std::nullopt;
}

inline const char* kind_name(CovariateKind k) {
  switch (k) {
    case CovariateKind::Constant: return "Constant";
    case CovariateKind::Imb: return "Imb";
    case CovariateKind::ImbCum: return "ImbCum";
    case CovariateKind::LastSign: return "LastSign";
    case CovariateKind::SignSpreadProduct: return "SignSpreadProduct";
    case CovariateKind::LagImb: return "LagImb";
    case CovariateKind::LagImbCum: return "LagImbCum";
  }
  return "?";
}

inline CovariateKind kind_from_name(const std::string& s) {
  for (auto k : {CovariateKind::Constant, CovariateKind::Imb, CovariateKind::ImbCum, CovariateKind::LastSign,
                 CovariateKind::SignSpreadProduct, CovariateKind::LagImb, CovariateKind::LagImbCum})
    if (s == kind_name(k)) return k;
  throw Error(ErrorCode::ConfigInvalid, "unknown covariate kind '" + s + "'");
}

inline nlohmann::ordered_json to_json(const ModelSpec& spec) {
  nlohmann::ordered_json j;
  j["name"] = spec.name;
  auto covs = nlohmann::ordered_json::array();
  for (const auto& c : spec.covariates) {
    nlohmann::ordered_json cj;
    cj["kind"] = kind_name(c.kind);
    cj["n"] = c.n;
    cj["m"] = c.m;
    covs.push_back(std::move(cj));
  }
  j["covariates"] = std::move(covs);
  j["recalibration_days"] = spec.recalibration_days;
  return j;
}

template <class Json>
ModelSpec model_from_json(const Json& j) {
  try {
    ModelSpec spec;
    spec.name = j.at("name").template get<std::string>();
    for (const auto& cj : j.at("covariates")) {
      CovariateDescriptor c;
      c.kind = kind_from_name(cj.at("kind").template get<std::string>());
      c.n = cj.value("n", 0);
      c.m = cj.value("m", 0);
      spec.covariates.push_back(c);
    }
    spec.recalibration_days = j.value("recalibration_days", 1);
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("model spec: ") + e.what());
  }
}

}  // namespace ratioflow
