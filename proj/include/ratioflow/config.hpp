#pragma once

// JSON forms of simulator and fitting configuration.

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "ratioflow/catalog.hpp"
#include "ratioflow/estimator.hpp"
#include "ratioflow/simulator.hpp"

namespace ratioflow {

using Json = nlohmann::ordered_json;

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string config_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = hex[h & 0xf];
  return out;
}

inline Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigInvalid, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return Json::parse(ss.str(), nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, path + ": " + e.what());
  }
}

namespace config_detail {

inline Eigen::VectorXd vec(const Json& j) {
  if (!j.is_array()) throw Error(ErrorCode::ConfigInvalid, "expected an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

inline Json vec_json(const Eigen::VectorXd& v) {
  auto a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline ModelSpec model(const Json& j) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (auto m = find_model(name)) return *m;
    throw Error(ErrorCode::UnknownModel, "no catalog model named '" + name + "'");
  }
  return model_from_json(j);
}

}  // namespace config_detail

inline FitOptions fit_options_from_json(const Json& j, FitOptions o = {}) {
  o.tolerance = j.value("tolerance", o.tolerance);
  o.max_iter = j.value("max_iterations", o.max_iter);
  o.max_halvings = j.value("max_halvings", o.max_halvings);
  o.box_radius = j.value("box_radius", o.box_radius);
  o.ridge = j.value("ridge", o.ridge);
  return o;
}

inline Json to_json(const FitOptions& o) {
  Json j;
  j["tolerance"] = o.tolerance;
  j["max_iterations"] = o.max_iter;
  j["max_halvings"] = o.max_halvings;
  j["box_radius"] = o.box_radius;
  j["ridge"] = o.ridge;
  return j;
}

/// Either vartheta_ma and vartheta_mb, or theta_star alone (split evenly:
/// vartheta_ma = theta/2, vartheta_mb = -theta/2).
inline SimConfig sim_config_from_json(const Json& j) {
  using namespace config_detail;
  try {
    SimConfig c;
    c.model = model(j.at("model"));
    if (j.contains("theta_star")) {
      const auto t = vec(j.at("theta_star"));
      c.vartheta_ma = 0.5 * t;
      c.vartheta_mb = -0.5 * t;
    } else {
      c.vartheta_ma = vec(j.at("vartheta_ma"));
      c.vartheta_mb = vec(j.at("vartheta_mb"));
    }
    c.sessions = j.value("sessions", c.sessions);
    c.session_length = j.value("session_length", c.session_length);
    c.seed = j.value("seed", c.seed);

    if (j.contains("baseline")) {
      const auto& b = j.at("baseline");
      const auto type = b.value("type", std::string("ushape"));
      if (type == "constant") {
        ConstantRate r;
        r.rate = b.value("rate", r.rate);
        c.baseline = r;
      } else if (type == "ushape") {
        UShape u;
        u.base_rate = b.value("base_rate", u.base_rate);
        u.morning = b.value("morning", u.morning);
        u.noon = b.value("noon", u.noon);
        u.close = b.value("close", u.close);
        u.daily_vol = b.value("daily_vol", u.daily_vol);
        c.baseline = u;
      } else if (type == "log_ou") {
        LogOU o;
        o.mean = b.value("mean", o.mean);
        o.reversion = b.value("reversion", o.reversion);
        o.vol = b.value("vol", o.vol);
        c.baseline = o;
      } else {
        throw Error(ErrorCode::ConfigInvalid, "unknown baseline type '" + type + "'");
      }
    }

    if (j.contains("dynamics")) {
      const auto& d = j.at("dynamics");
      const auto type = d.value("type", std::string("ou"));
      if (type == "ou") {
        OUPaths p;
        auto ou = [](const Json& o, OUParams q) {
          q.mean = o.value("mean", q.mean);
          q.reversion = o.value("reversion", q.reversion);
          q.vol = o.value("vol", q.vol);
          return q;
        };
        if (d.contains("level")) p.level = ou(d.at("level"), p.level);
        if (d.contains("cumulative")) p.cumulative = ou(d.at("cumulative"), p.cumulative);
        if (d.contains("spread_probs")) p.spread_probs = d.at("spread_probs").get<std::vector<double>>();
        p.grid_step = d.value("grid_step", p.grid_step);
        c.dynamics = p;
      } else if (type == "book") {
        BookDriven b;
        b.flow_rate = d.value("flow_rate", b.flow_rate);
        b.cancel_fraction = d.value("cancel_fraction", b.cancel_fraction);
        b.max_offset = d.value("max_offset", b.max_offset);
        b.lot_min = d.value("lot_min", b.lot_min);
        b.lot_max = d.value("lot_max", b.lot_max);
        b.market_max = d.value("market_max", b.market_max);
        b.start_price = d.value("start_price", b.start_price);
        b.spread_threshold = d.value("spread_threshold", b.spread_threshold);
        b.grid_step = d.value("grid_step", b.grid_step);
        c.dynamics = b;
      } else {
        throw Error(ErrorCode::ConfigInvalid, "unknown dynamics type '" + type + "'");
      }
    }

    if (j.contains("shifts")) {
      for (const auto& s : j.at("shifts")) {
        RegimeShift r;
        r.from_session = s.at("from_session").get<int>();
        if (s.contains("theta_star")) {
          const auto t = vec(s.at("theta_star"));
          r.vartheta_ma = 0.5 * t;
          r.vartheta_mb = -0.5 * t;
        } else {
          r.vartheta_ma = vec(s.at("vartheta_ma"));
          r.vartheta_mb = vec(s.at("vartheta_mb"));
        }
        c.shifts.push_back(std::move(r));
      }
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("simulation config: ") + e.what());
  }
}

inline Json to_json(const SimConfig& c) {
  using config_detail::vec_json;
  Json j;
  j["model"] = to_json(c.model);
  j["vartheta_ma"] = vec_json(c.vartheta_ma);
  j["vartheta_mb"] = vec_json(c.vartheta_mb);
  j["sessions"] = c.sessions;
  j["session_length"] = c.session_length;
  j["seed"] = c.seed;
  Json b;
  std::visit(
      [&](const auto& v) {
        using B = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<B, ConstantRate>) {
          b["type"] = "constant";
          b["rate"] = v.rate;
        } else if constexpr (std::is_same_v<B, UShape>) {
          b["type"] = "ushape";
          b["base_rate"] = v.base_rate;
          b["morning"] = v.morning;
          b["noon"] = v.noon;
          b["close"] = v.close;
          b["daily_vol"] = v.daily_vol;
        } else {
          b["type"] = "log_ou";
          b["mean"] = v.mean;
          b["reversion"] = v.reversion;
          b["vol"] = v.vol;
        }
      },
      c.baseline);
  j["baseline"] = std::move(b);
  Json d;
  if (const auto* p = std::get_if<OUPaths>(&c.dynamics)) {
    auto ou = [](const OUParams& q) { return Json{{"mean", q.mean}, {"reversion", q.reversion}, {"vol", q.vol}}; };
    d["type"] = "ou";
    d["level"] = ou(p->level);
    d["cumulative"] = ou(p->cumulative);
    d["spread_probs"] = p->spread_probs;
    d["grid_step"] = p->grid_step;
  } else {
    const auto& bd = std::get<BookDriven>(c.dynamics);
    d["type"] = "book";
    d["flow_rate"] = bd.flow_rate;
    d["cancel_fraction"] = bd.cancel_fraction;
    d["max_offset"] = bd.max_offset;
    d["lot_min"] = bd.lot_min;
    d["lot_max"] = bd.lot_max;
    d["market_max"] = bd.market_max;
    d["start_price"] = bd.start_price;
    d["spread_threshold"] = bd.spread_threshold;
    d["grid_step"] = bd.grid_step;
  }
  j["dynamics"] = std::move(d);
  auto shifts = Json::array();
  for (const auto& s : c.shifts)
    shifts.push_back(
        Json{{"from_session", s.from_session}, {"vartheta_ma", vec_json(s.vartheta_ma)}, {"vartheta_mb", vec_json(s.vartheta_mb)}});
  j["shifts"] = std::move(shifts);
  return j;
}

}  // namespace ratioflow
