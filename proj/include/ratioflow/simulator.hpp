#pragma once

// Synthetic order flow with known ground truth.
//
// Market orders arrive with Cox intensities
//     lambda^i(t) = lambda0(t) * exp(vartheta^i . X(t)),   i in {MA, MB},
// simulated by thinning against a piecewise-constant envelope. An arrival is
// MA with probability r_MA(t, theta*), theta* = vartheta^MA - vartheta^MB.
//
// Covariates either follow clamped Ornstein-Uhlenbeck paths (OUPaths) or are
// read off a simulated limit order book (BookDriven), in which case the
// emitted event stream reproduces them through the replay pipeline.
// The label-only mode skips the time law altogether and draws sides given
// covariate paths sampled at event times, which is all the estimator sees.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ratioflow/backtest.hpp"
#include "ratioflow/book.hpp"
#include "ratioflow/covariates.hpp"
#include "ratioflow/estimator.hpp"
#include "ratioflow/parallel.hpp"
#include "ratioflow/rng.hpp"

namespace ratioflow {

struct ConstantRate {
  double rate = 1.0;  // per second
};

/// Intraday U-shape: a quadratic through (open, morning), (mid, noon),
/// (close, close) scaled by base_rate and an i.i.d. lognormal daily factor.
struct UShape {
  double base_rate = 1.0;
  double morning = 2.0;
  double noon = 0.6;
  double close = 1.6;
  double daily_vol = 0.3;
};

/// log lambda0 follows an OU process, held constant on each grid cell.
struct LogOU {
  double mean = 0.0;
  double reversion = 0.01;  // per second
  double vol = 0.02;        // per sqrt(second)
};

using Baseline = std::variant<ConstantRate, UShape, LogOU>;

struct OUParams {
  double mean = 0.0;
  double reversion = 0.05;  // per second
  double vol = 0.15;        // per sqrt(second)
};

struct OUPaths {
  OUParams level;       // i_n, every n
  OUParams cumulative;  // cumulative imbalance up to n, n >= 2
  // P(spread = k ticks) for k = 1, 2, ...
  std::vector<double> spread_probs{0.6, 0.3, 0.1};
  double grid_step = 1.0;  // seconds between covariate updates (thinning mode)

  double spread_mean() const {
    double m = 0.0;
    for (std::size_t k = 0; k < spread_probs.size(); ++k) m += static_cast<double>(k + 1) * spread_probs[k];
    return m;
  }
};

struct BookDriven {
  double flow_rate = 20.0;  // limit inserts + cancels per second
  double cancel_fraction = 0.45;
  int max_offset = 12;  // inserts land up to this many ticks behind the opposite best
  Quantity lot_min = 1;
  Quantity lot_max = 10;
  Quantity market_max = 12;
  Price start_price = 10000;
  double spread_threshold = 1.5;  // threshold for the spread-regime sign
  double grid_step = 1.0;         // envelope cell length, seconds
};

using CovariateDynamics = std::variant<OUPaths, BookDriven>;

/// Replaces vartheta from `from_session` onward.
struct RegimeShift {
  int from_session = 0;
  Eigen::VectorXd vartheta_ma;
  Eigen::VectorXd vartheta_mb;
};

struct SimConfig {
  ModelSpec model;
  Eigen::VectorXd vartheta_ma;
  Eigen::VectorXd vartheta_mb;
  Baseline baseline = UShape{};
  CovariateDynamics dynamics = OUPaths{};
  std::vector<RegimeShift> shifts;
  int sessions = 1;
  double session_length = 3600.0;  // seconds
  std::uint64_t seed = 1;

  std::pair<const Eigen::VectorXd&, const Eigen::VectorXd&> vartheta(int session) const {
    const RegimeShift* active = nullptr;
    for (const auto& s : shifts)
      if (s.from_session <= session && (!active || s.from_session >= active->from_session)) active = &s;
    if (active) return {active->vartheta_ma, active->vartheta_mb};
    return {vartheta_ma, vartheta_mb};
  }

  Eigen::VectorXd theta_star(int session = 0) const {
    const auto [ma, mb] = vartheta(session);
    return ma - mb;
  }

  double spread_threshold() const {
    if (const auto* ou = std::get_if<OUPaths>(&dynamics)) return ou->spread_mean();
    return std::get<BookDriven>(dynamics).spread_threshold;
  }

  void validate() const {
    model.validate();
    const auto d = static_cast<Eigen::Index>(model.dimension());
    auto check_dim = [&](const Eigen::VectorXd& v, const char* what) {
      if (v.size() != d)
        throw Error(ErrorCode::ConfigInvalid, std::string(what) + " has length " + std::to_string(v.size()) +
                                                  ", model dimension is " + std::to_string(d));
      if (!v.allFinite()) throw Error(ErrorCode::ConfigInvalid, std::string(what) + " is not finite");
    };
    check_dim(vartheta_ma, "vartheta_ma");
    check_dim(vartheta_mb, "vartheta_mb");
    for (const auto& s : shifts) {
      check_dim(s.vartheta_ma, "shift vartheta_ma");
      check_dim(s.vartheta_mb, "shift vartheta_mb");
    }
    if (sessions < 1) throw Error(ErrorCode::ConfigInvalid, "sessions must be >= 1");
    if (!(session_length > 0)) throw Error(ErrorCode::ConfigInvalid, "session_length must be positive");
    std::visit(
        [](const auto& b) {
          using B = std::decay_t<decltype(b)>;
          if constexpr (std::is_same_v<B, ConstantRate>) {
            if (!(b.rate > 0)) throw Error(ErrorCode::ConfigInvalid, "baseline rate must be positive");
          } else if constexpr (std::is_same_v<B, UShape>) {
            if (!(b.base_rate > 0 && b.morning > 0 && b.noon > 0 && b.close > 0 && b.daily_vol >= 0))
              throw Error(ErrorCode::ConfigInvalid, "U-shape baseline needs positive multipliers");
            const double a = 2.0 * (b.morning + b.close) - 4.0 * b.noon;
            const double bb = b.close - b.morning - a;
            if (a > 0) {
              const double v = -bb / (2.0 * a);
              if (v > 0 && v < 1 && a * v * v + bb * v + b.morning <= 0)
                throw Error(ErrorCode::ConfigInvalid, "U-shape baseline dips below zero");
            }
          } else {
            if (!(b.reversion > 0 && b.vol >= 0)) throw Error(ErrorCode::ConfigInvalid, "bad log-OU baseline");
          }
        },
        baseline);
    if (const auto* ou = std::get_if<OUPaths>(&dynamics)) {
      double sum = 0.0;
      for (double p : ou->spread_probs) {
        if (p < 0) throw Error(ErrorCode::ConfigInvalid, "negative spread probability");
        sum += p;
      }
      if (ou->spread_probs.empty() || std::abs(sum - 1.0) > 1e-9)
        throw Error(ErrorCode::ConfigInvalid, "spread probabilities must sum to 1");
      if (!(ou->level.reversion > 0 && ou->cumulative.reversion > 0 && ou->grid_step > 0))
        throw Error(ErrorCode::ConfigInvalid, "OU reversion and grid step must be positive");
    } else {
      const auto& bd = std::get<BookDriven>(dynamics);
      if (!(bd.flow_rate > 0 && bd.cancel_fraction >= 0 && bd.cancel_fraction < 1 && bd.max_offset >= 1 &&
            bd.lot_min >= 1 && bd.lot_max >= bd.lot_min && bd.market_max >= 1 && bd.grid_step > 0 &&
            bd.start_price > 100))
        throw Error(ErrorCode::ConfigInvalid, "bad book-driven parameters");
    }
  }
};

/// Ground truth for one market order.
struct GroundTruth {
  Timestamp timestamp = 0;
  OrderSide side = OrderSide::MA;
  std::uint32_t order_index = 0;
  std::vector<double> x;  // X(t-) of the configured model
  double r_ma = 0.5;      // r_MA(t, theta*)
  bool complete_history = true;
};

struct SimulatedSession {
  SessionId id = 0;
  std::vector<OrderEvent> events;  // BookDriven only
  std::vector<GroundTruth> truth;
  std::vector<ArrivalFeatures> arrivals;  // every covariate the catalog can ask for
  // Integral over the session of r_MA r_MB X X^T times the total intensity.
  Eigen::MatrixXd gamma_integral;
  // Integral of the total market-order intensity (expected count).
  double intensity_integral = 0.0;
  std::size_t candidates = 0;
};

namespace sim_detail {

inline double ushape_profile(const UShape& u, double w) {
  const double a = 2.0 * (u.morning + u.close) - 4.0 * u.noon;
  const double b = u.close - u.morning - a;
  return a * w * w + b * w + u.morning;
}

inline double ushape_integral(const UShape& u, double w0, double w1) {
  const double a = 2.0 * (u.morning + u.close) - 4.0 * u.noon;
  const double b = u.close - u.morning - a;
  auto prim = [&](double w) { return a * w * w * w / 3.0 + b * w * w / 2.0 + u.morning * w; };
  return prim(w1) - prim(w0);
}

inline double ushape_max(const UShape& u, double w0, double w1) {
  double m = std::max(ushape_profile(u, w0), ushape_profile(u, w1));
  const double a = 2.0 * (u.morning + u.close) - 4.0 * u.noon;
  const double b = u.close - u.morning - a;
  if (a < 0) {
    const double v = -b / (2.0 * a);
    if (v > w0 && v < w1) m = std::max(m, ushape_profile(u, v));
  }
  return m;
}

/// Baseline intensity of one session. Piecewise constant per cell for LogOU.
class BaselineState {
 public:
  BaselineState(const Baseline& b, double length, Philox& rng) : b_(b), length_(length) {
    if (const auto* u = std::get_if<UShape>(&b_)) {
      factor_ = u->base_rate * std::exp(u->daily_vol * rng.normal() - 0.5 * u->daily_vol * u->daily_vol);
    } else if (const auto* o = std::get_if<LogOU>(&b_)) {
      log_rate_ = o->mean + o->vol / std::sqrt(2.0 * o->reversion) * rng.normal();
    }
  }

  double at(double t) const {
    if (const auto* c = std::get_if<ConstantRate>(&b_)) return c->rate;
    if (const auto* u = std::get_if<UShape>(&b_)) return factor_ * ushape_profile(*u, t / length_);
    return std::exp(log_rate_);
  }

  double max_on(double t0, double t1) const {
    if (const auto* c = std::get_if<ConstantRate>(&b_)) return c->rate;
    if (const auto* u = std::get_if<UShape>(&b_)) return factor_ * ushape_max(*u, t0 / length_, t1 / length_);
    return std::exp(log_rate_);
  }

  double integral(double t0, double t1) const {
    if (const auto* c = std::get_if<ConstantRate>(&b_)) return c->rate * (t1 - t0);
    if (const auto* u = std::get_if<UShape>(&b_))
      return factor_ * length_ * ushape_integral(*u, t0 / length_, t1 / length_);
    return std::exp(log_rate_) * (t1 - t0);
  }

  /// Advances the LogOU state across one cell of length dt.
  void step(double dt, Philox& rng) {
    if (const auto* o = std::get_if<LogOU>(&b_)) {
      const double decay = std::exp(-o->reversion * dt);
      const double sd = o->vol * std::sqrt((1.0 - decay * decay) / (2.0 * o->reversion));
      log_rate_ = o->mean + (log_rate_ - o->mean) * decay + sd * rng.normal();
    }
  }

 private:
  const Baseline& b_;
  double length_;
  double factor_ = 1.0;
  double log_rate_ = 0.0;
};

inline double ou_stationary(const OUParams& p, Philox& rng) {
  return std::clamp(p.mean + p.vol / std::sqrt(2.0 * p.reversion) * rng.normal(), -1.0, 1.0);
}

/// Clamped OU paths for the level and cumulative imbalances up to `levels`.
class ImbalancePaths {
 public:
  ImbalancePaths(const OUPaths& cfg, int levels, Philox& rng) : cfg_(cfg), levels_(levels) {
    for (int k = 0; k < levels_; ++k) {
      value_.level[static_cast<std::size_t>(k)] = ou_stationary(cfg_.level, rng);
      if (k > 0) value_.cumulative[static_cast<std::size_t>(k)] = ou_stationary(cfg_.cumulative, rng);
    }
    value_.cumulative[0] = value_.level[0];
  }

  void step(double dt, Philox& rng) {
    if (dt <= 0) return;
    const auto [dl, sl] = factors(cfg_.level, dt);
    const auto [dc, sc] = factors(cfg_.cumulative, dt);
    for (int k = 0; k < levels_; ++k) {
      auto& v = value_.level[static_cast<std::size_t>(k)];
      v = std::clamp(cfg_.level.mean + (v - cfg_.level.mean) * dl + sl * rng.normal(), -1.0, 1.0);
      if (k > 0) {
        auto& c = value_.cumulative[static_cast<std::size_t>(k)];
        c = std::clamp(cfg_.cumulative.mean + (c - cfg_.cumulative.mean) * dc + sc * rng.normal(), -1.0, 1.0);
      }
    }
    value_.cumulative[0] = value_.level[0];
  }

  const ImbalanceVector& value() const noexcept { return value_; }

 private:
  const OUPaths& cfg_;
  int levels_;
  ImbalanceVector value_;

  static std::pair<double, double> factors(const OUParams& p, double dt) {
    const double decay = std::exp(-p.reversion * dt);
    return {decay, p.vol * std::sqrt((1.0 - decay * decay) / (2.0 * p.reversion))};
  }
};

inline double draw_spread(const OUPaths& cfg, Philox& rng) {
  double u = rng.uniform();
  for (std::size_t k = 0; k < cfg.spread_probs.size(); ++k) {
    if (u < cfg.spread_probs[k]) return static_cast<double>(k + 1);
    u -= cfg.spread_probs[k];
  }
  return static_cast<double>(cfg.spread_probs.size());
}

/// Market-order history of a session as the simulator keeps it.
struct History {
  std::vector<ImbalanceVector> pre_event;  // one per market order
  int last_sign = 0;

  void clear() {
    pre_event.clear();
    last_sign = 0;
  }
  void record(const ImbalanceVector& v, OrderSide s) {
    pre_event.push_back(v);
    last_sign = s == OrderSide::MA ? -1 : 1;
  }
};

/// X(t) of `model` from the simulator's own state. Missing lags and a missing
/// last sign read as 0 inside the intensity; the return value says whether
/// every component was backed by real history.
inline bool true_features(const ModelSpec& model, const ImbalanceVector& now, const History& h, double spread,
                          double threshold, std::span<double> out) {
  bool complete = true;
  const std::size_t past = h.pre_event.size();
  for (std::size_t j = 0; j < model.covariates.size(); ++j) {
    const auto& c = model.covariates[j];
    const auto k = static_cast<std::size_t>(std::max(c.n, 1) - 1);
    switch (c.kind) {
      case CovariateKind::Constant: out[j] = 1.0; break;
      case CovariateKind::Imb: out[j] = now.level[k]; break;
      case CovariateKind::ImbCum: out[j] = now.cumulative[k]; break;
      case CovariateKind::LastSign:
        out[j] = h.last_sign;
        if (past == 0) complete = false;
        break;
      case CovariateKind::SignSpreadProduct: out[j] = h.last_sign * (spread > threshold ? 1 : -1); break;
      case CovariateKind::LagImb:
      case CovariateKind::LagImbCum:
        if (past >= static_cast<std::size_t>(c.m)) {
          const auto& v = h.pre_event[past - static_cast<std::size_t>(c.m)];
          out[j] = c.kind == CovariateKind::LagImb ? v.level[k] : v.cumulative[k];
        } else {
          out[j] = 0.0;
          complete = false;
        }
        break;
    }
  }
  return complete;
}

inline bool is_dynamic(const CovariateDescriptor& c) {
  return c.kind == CovariateKind::LastSign || c.kind == CovariateKind::SignSpreadProduct || c.is_lag();
}

inline int levels_needed(const ModelSpec& m) {
  int n = 1;
  for (const auto& c : m.covariates) n = std::max(n, c.n);
  return n;
}

/// Accumulates the Gamma integrand over stretches where X is constant.
class GammaIntegrator {
 public:
  explicit GammaIntegrator(std::size_t d) : gamma_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))) {}

  void add(std::span<const double> x, const Eigen::VectorXd& v_ma, const Eigen::VectorXd& v_mb, double baseline_mass) {
    if (baseline_mass <= 0) return;
    Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
    const double e_ma = std::exp(v_ma.dot(xv)), e_mb = std::exp(v_mb.dot(xv));
    const double total = baseline_mass * (e_ma + e_mb);
    const double w = e_ma * e_mb / ((e_ma + e_mb) * (e_ma + e_mb));
    gamma_.noalias() += (w * total) * xv * xv.transpose();
    mass_ += total;
  }

  const Eigen::MatrixXd& gamma() const noexcept { return gamma_; }
  double mass() const noexcept { return mass_; }

 private:
  Eigen::MatrixXd gamma_;
  double mass_ = 0.0;
};

inline Timestamp to_ns(double seconds) { return static_cast<Timestamp>(std::floor(seconds * 1e9)); }

/// The simulator's own price-level book (independent of BookState).
class SimBook {
 public:
  std::map<Price, Quantity> asks;                     // ascending
  std::map<Price, Quantity, std::greater<>> bids;     // descending

  Price best_ask() const { return asks.begin()->first; }
  Price best_bid() const { return bids.begin()->first; }

  ImbalanceVector imbalances() const {
    std::array<Quantity, kMaxLevel> qa{}, qb{};
    std::size_t k = 0;
    for (auto it = asks.begin(); it != asks.end() && k < kMaxLevel; ++it) qa[k++] = it->second;
    k = 0;
    for (auto it = bids.begin(); it != bids.end() && k < kMaxLevel; ++it) qb[k++] = it->second;
    ImbalanceVector v;
    Quantity cb = 0, ca = 0;
    for (std::size_t i = 0; i < kMaxLevel; ++i) {
      v.level[i] = imbalance(qb[i], qa[i]);
      cb += qb[i];
      ca += qa[i];
      v.cumulative[i] = imbalance(cb, ca);
    }
    return v;
  }

  template <class Map>
  static Quantity total(const Map& m) {
    Quantity q = 0;
    for (const auto& [p, v] : m) q += v;
    return q;
  }
};

}  // namespace sim_detail

/// Simulates session `k` of replication `replication` by thinning.
inline SimulatedSession simulate_session(const SimConfig& cfg, int k, std::uint64_t replication = 0) {
  using namespace sim_detail;
  Philox rng(cfg.seed, stream_id({replication, static_cast<std::uint64_t>(k), 0x5e55}));
  const auto [v_ma, v_mb] = cfg.vartheta(k);
  const Eigen::VectorXd theta = v_ma - v_mb;
  const std::size_t d = cfg.model.dimension();
  const double L = cfg.session_length;
  const double threshold = cfg.spread_threshold();

  SimulatedSession out;
  out.id = k;
  BaselineState base(cfg.baseline, L, rng);
  GammaIntegrator gamma(d);
  History hist;
  std::vector<double> x(d);
  Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(d));

  auto intensity_parts = [&](double t) {
    const double b = base.at(t);
    return std::pair{b * std::exp(v_ma.dot(xv)), b * std::exp(v_mb.dot(xv))};
  };

  // Envelope exponent: static covariates at their current value, dynamic
  // ones (bounded by 1 in absolute value) at their worst case.
  auto envelope_factor = [&](const std::vector<bool>& dynamic) {
    double s_ma = 0.0, s_mb = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      if (dynamic[j]) {
        s_ma += std::abs(v_ma[jj]);
        s_mb += std::abs(v_mb[jj]);
      } else {
        s_ma += v_ma[jj] * x[j];
        s_mb += v_mb[jj] * x[j];
      }
    }
    return std::exp(s_ma) + std::exp(s_mb);
  };

  auto record_order = [&](double t, OrderSide side, const ImbalanceVector& imb, double spread, bool complete,
                          double r_ma) {
    GroundTruth g;
    g.timestamp = to_ns(t);
    g.side = side;
    g.order_index = static_cast<std::uint32_t>(out.truth.size());
    g.x = x;
    g.r_ma = r_ma;
    g.complete_history = complete;
    out.truth.push_back(std::move(g));
    ArrivalFeatures a;
    a.session_id = k;
    a.timestamp = to_ns(t);
    a.side = side;
    a.order_index = out.truth.back().order_index;
    a.imb = imb;
    a.spread = spread;
    out.arrivals.push_back(a);
    hist.record(imb, side);
  };

  if (const auto* ou = std::get_if<OUPaths>(&cfg.dynamics)) {
    ImbalancePaths paths(*ou, levels_needed(cfg.model), rng);
    double spread = draw_spread(*ou, rng);
    std::vector<bool> dynamic(d);
    for (std::size_t j = 0; j < d; ++j) dynamic[j] = is_dynamic(cfg.model.covariates[j]);

    for (double a = 0.0; a < L; a += ou->grid_step) {
      const double b = std::min(a + ou->grid_step, L);
      bool complete = true_features(cfg.model, paths.value(), hist, spread, threshold, x);
      const double envelope = base.max_on(a, b) * envelope_factor(dynamic);
      double last = a;
      for (double t = a;;) {
        t += rng.exponential(envelope);
        if (t >= b) break;
        ++out.candidates;
        const auto [l_ma, l_mb] = intensity_parts(t);
        if (l_ma + l_mb > envelope * (1.0 + 1e-12))
          throw Error(ErrorCode::EnvelopeViolation, "intensity " + std::to_string(l_ma + l_mb) + " above envelope " +
                                                        std::to_string(envelope));
        if (rng.uniform() * envelope >= l_ma + l_mb) continue;
        gamma.add(x, v_ma, v_mb, base.integral(last, t));
        last = t;
        const double r_ma = ratio_pair(theta.dot(xv)).ma;
        const OrderSide side = rng.uniform() < r_ma ? OrderSide::MA : OrderSide::MB;
        record_order(t, side, paths.value(), spread, complete, r_ma);
        complete = true_features(cfg.model, paths.value(), hist, spread, threshold, x);
      }
      gamma.add(x, v_ma, v_mb, base.integral(last, b));
      paths.step(b - a, rng);
      spread = draw_spread(*ou, rng);
      base.step(b - a, rng);
    }
  } else {
    const auto& bd = std::get<BookDriven>(cfg.dynamics);
    SimBook book;
    auto lot = [&] { return rng.uniform_int(bd.lot_min, bd.lot_max); };
    auto emit = [&](double t, EventKind kind, Side side, Price price, Quantity qty) {
      out.events.push_back({static_cast<SessionId>(k), to_ns(t), kind, side, price, qty});
    };
    for (int i = 1; i <= kMaxLevel; ++i) {
      const Quantity qb = lot() * 3, qa = lot() * 3;
      book.bids[bd.start_price - i] = qb;
      emit(0.0, EventKind::LimitInsert, Side::Bid, bd.start_price - i, qb);
      book.asks[bd.start_price + i] = qa;
      emit(0.0, EventKind::LimitInsert, Side::Ask, bd.start_price + i, qa);
    }
    ImbalanceVector imb = book.imbalances();
    auto spread_now = [&] { return static_cast<double>(book.best_ask() - book.best_bid()); };
    bool complete = true_features(cfg.model, imb, hist, spread_now(), threshold, x);
    const std::vector<bool> all_dynamic = [&] {
      std::vector<bool> v(d, true);
      for (std::size_t j = 0; j < d; ++j) v[j] = cfg.model.covariates[j].kind != CovariateKind::Constant;
      return v;
    }();
    auto refresh = [&] {
      imb = book.imbalances();
      complete = true_features(cfg.model, imb, hist, spread_now(), threshold, x);
    };

    auto flow_event = [&](double t) {
      const Side side = rng.bernoulli(0.5) ? Side::Ask : Side::Bid;
      const bool cancel = rng.uniform() < bd.cancel_fraction;
      if (cancel) {
        auto do_cancel = [&](auto& ladder) {
          const auto levels = static_cast<std::int64_t>(std::min<std::size_t>(ladder.size(), kMaxLevel));
          auto it = std::next(ladder.begin(), rng.uniform_int(0, levels - 1));
          // Never remove one of the last two levels of a side.
          const Quantity cap = ladder.size() <= 2 ? it->second - 1 : it->second;
          if (cap < 1) return false;
          const Quantity q = rng.uniform_int(1, cap);
          emit(t, EventKind::Cancel, side, it->first, q);
          it->second -= q;
          if (it->second == 0) ladder.erase(it);
          return true;
        };
        if (side == Side::Ask ? do_cancel(book.asks) : do_cancel(book.bids)) return;
      }
      const Price offset = rng.uniform_int(0, bd.max_offset - 1);
      const Quantity q = lot();
      if (side == Side::Ask) {
        const Price p = book.best_bid() + 1 + offset;
        book.asks[p] += q;
        emit(t, EventKind::LimitInsert, Side::Ask, p, q);
      } else {
        const Price p = book.best_ask() - 1 - offset;
        book.bids[p] += q;
        emit(t, EventKind::LimitInsert, Side::Bid, p, q);
      }
    };

    auto market_order = [&](double t, OrderSide side) {
      auto take = [&](auto& ladder, Side bs) {
        const Quantity avail = SimBook::total(ladder);
        const Quantity q = std::min<Quantity>(rng.uniform_int(1, bd.market_max), avail - 1);
        emit(t, EventKind::MarketOrder, bs, ladder.begin()->first, q);
        Quantity left = q;
        while (left > 0) {
          auto it = ladder.begin();
          const Quantity f = std::min(left, it->second);
          it->second -= f;
          left -= f;
          if (it->second == 0) ladder.erase(it);
        }
        // Keep at least two levels resting behind the best.
        while (ladder.size() < 2) {
          const Price worst = std::prev(ladder.end())->first;
          const Price p = bs == Side::Ask ? worst + 1 : worst - 1;
          const Quantity r = lot();
          ladder[p] += r;
          emit(t, EventKind::LimitInsert, bs, p, r);
        }
      };
      if (side == OrderSide::MA)
        take(book.asks, Side::Ask);
      else
        take(book.bids, Side::Bid);
    };

    for (double a = 0.0; a < L; a += bd.grid_step) {
      const double b = std::min(a + bd.grid_step, L);
      const double mo_envelope = base.max_on(a, b) * envelope_factor(all_dynamic);
      const double total_rate = bd.flow_rate + mo_envelope;
      double last = a;
      for (double t = a;;) {
        t += rng.exponential(total_rate);
        if (t >= b) break;
        if (rng.uniform() * total_rate < bd.flow_rate) {
          gamma.add(x, v_ma, v_mb, base.integral(last, t));
          last = t;
          flow_event(t);
          refresh();
          continue;
        }
        ++out.candidates;
        const auto [l_ma, l_mb] = intensity_parts(t);
        if (l_ma + l_mb > mo_envelope * (1.0 + 1e-12))
          throw Error(ErrorCode::EnvelopeViolation, "intensity " + std::to_string(l_ma + l_mb) + " above envelope " +
                                                        std::to_string(mo_envelope));
        if (rng.uniform() * mo_envelope >= l_ma + l_mb) continue;
        gamma.add(x, v_ma, v_mb, base.integral(last, t));
        last = t;
        const double r_ma = ratio_pair(theta.dot(xv)).ma;
        const OrderSide side = rng.uniform() < r_ma ? OrderSide::MA : OrderSide::MB;
        record_order(t, side, imb, spread_now(), complete, r_ma);
        market_order(t, side);
        refresh();
      }
      gamma.add(x, v_ma, v_mb, base.integral(last, b));
      base.step(b - a, rng);
    }
  }
  out.gamma_integral = gamma.gamma();
  out.intensity_integral = gamma.mass();
  return out;
}

inline std::vector<SimulatedSession> simulate(const SimConfig& cfg, std::uint64_t replication = 0, std::size_t jobs = 1) {
  cfg.validate();
  std::vector<SimulatedSession> out(static_cast<std::size_t>(cfg.sessions));
  parallel_for(out.size(), jobs, [&](std::size_t k) { out[k] = simulate_session(cfg, static_cast<int>(k), replication); });
  return out;
}

inline std::vector<OrderEvent> concat_events(std::span<const SimulatedSession> sessions) {
  std::vector<OrderEvent> out;
  for (const auto& s : sessions) out.insert(out.end(), s.events.begin(), s.events.end());
  return out;
}

// ---------------------------------------------------------------------------
// Label-only mode

/// Covariate paths sampled at the market-order times of one session.
struct SessionPaths {
  SessionId id = 0;
  std::vector<Timestamp> times;
  std::vector<ImbalanceVector> imb;
  std::vector<double> spread;
};

struct LabelOnlyOptions {
  double events_per_session = 400.0;
  // Levels of the imbalance universe to simulate; 0 means what the model needs.
  int levels = 0;
  // Keep per-session ArrivalFeatures so other models can be fitted on the
  // same draw.
  bool keep_arrivals = false;
};

struct LabelOnlyResult {
  Dataset data;                        // configured model, complete-history samples only
  std::vector<double> r_ma;            // true r_MA for each row of `data`
  std::vector<SessionArrivals> sessions;  // filled when keep_arrivals
  std::size_t skipped = 0;
};

/// Event times from a homogeneous Poisson process with the requested mean
/// count, and OU imbalance/spread values at those times.
inline std::vector<SessionPaths> generate_paths(const SimConfig& cfg, const LabelOnlyOptions& opts,
                                                std::uint64_t replication = 0) {
  using namespace sim_detail;
  const auto* ou = std::get_if<OUPaths>(&cfg.dynamics);
  if (!ou) throw Error(ErrorCode::ConfigInvalid, "label-only simulation needs OU covariate paths");
  const int levels = opts.levels > 0 ? std::min(opts.levels, kMaxLevel) : levels_needed(cfg.model);
  const double rate = opts.events_per_session / cfg.session_length;
  std::vector<SessionPaths> out(static_cast<std::size_t>(cfg.sessions));
  for (int k = 0; k < cfg.sessions; ++k) {
    Philox rng(cfg.seed, stream_id({replication, static_cast<std::uint64_t>(k), 0x9a75}));
    auto& s = out[static_cast<std::size_t>(k)];
    s.id = k;
    s.times.reserve(static_cast<std::size_t>(opts.events_per_session * 1.2));
    ImbalancePaths paths(*ou, levels, rng);
    double t = 0.0, prev = 0.0;
    for (;;) {
      t += rng.exponential(rate);
      if (t >= cfg.session_length) break;
      paths.step(t - prev, rng);
      prev = t;
      s.times.push_back(to_ns(t));
      s.imb.push_back(paths.value());
      s.spread.push_back(draw_spread(*ou, rng));
    }
  }
  return out;
}

/// Draws sides given covariate paths: each market order is MA with
/// probability r_MA(t, theta*), with lags and the last sign following the
/// drawn sides.
inline LabelOnlyResult simulate_labels_only(const SimConfig& cfg, std::span<const SessionPaths> paths,
                                            std::uint64_t replication = 0, bool keep_arrivals = false) {
  using namespace sim_detail;
  cfg.model.validate();
  const std::size_t d = cfg.model.dimension();
  const double threshold = cfg.spread_threshold();
  LabelOnlyResult out;
  out.data = Dataset(d, paths.size());
  std::size_t total = 0;
  for (const auto& p : paths) total += p.times.size();
  out.data.reserve(total);
  out.r_ma.reserve(total);
  std::vector<double> x(d);
  History hist;
  for (const auto& p : paths) {
    Philox rng(cfg.seed, stream_id({replication, static_cast<std::uint64_t>(p.id), 0x1abe1}));
    const Eigen::VectorXd theta = cfg.theta_star(p.id);
    hist.clear();
    SessionArrivals sa;
    sa.id = p.id;
    for (std::size_t i = 0; i < p.times.size(); ++i) {
      const bool complete = true_features(cfg.model, p.imb[i], hist, p.spread[i], threshold, x);
      double z = 0.0;
      for (std::size_t j = 0; j < d; ++j) z += theta[static_cast<Eigen::Index>(j)] * x[j];
      const double r = ratio_pair(z).ma;
      const OrderSide side = rng.uniform() < r ? OrderSide::MA : OrderSide::MB;
      if (complete) {
        out.data.push(side, x, p.id, p.times[i], static_cast<std::uint32_t>(i));
        out.r_ma.push_back(r);
      } else {
        ++out.skipped;
      }
      if (keep_arrivals) {
        ArrivalFeatures a;
        a.session_id = p.id;
        a.timestamp = p.times[i];
        a.side = side;
        a.order_index = static_cast<std::uint32_t>(i);
        a.imb = p.imb[i];
        a.spread = p.spread[i];
        sa.arrivals.push_back(a);
      }
      hist.record(p.imb[i], side);
    }
    if (keep_arrivals) out.sessions.push_back(std::move(sa));
  }
  return out;
}

inline LabelOnlyResult simulate_labels_only(const SimConfig& cfg, const LabelOnlyOptions& opts = {},
                                            std::uint64_t replication = 0) {
  cfg.validate();
  const auto paths = generate_paths(cfg, opts, replication);
  return simulate_labels_only(cfg, paths, replication, opts.keep_arrivals);
}

// ---------------------------------------------------------------------------
// Monte-Carlo check of asymptotic normality

struct CoordinateStats {
  double mean = 0.0;
  double variance = 0.0;
  double skewness = 0.0;
  double ks_statistic = 0.0;  // sup |F_n - Phi| of the standardized draws
  double coverage95 = 0.0;    // share of theta*_j inside theta_hat_j +- 1.96 se_j
};

struct NormalityReport {
  std::size_t replications = 0;  // requested
  std::size_t used = 0;
  std::size_t excluded = 0;      // failed or unusable fits
  std::size_t within_3se = 0;    // replications with every |theta_hat_j - theta*_j| < 3 se_j
  std::vector<CoordinateStats> coords;
  std::vector<Eigen::VectorXd> standardized;  // Gamma_hat^{1/2} sqrt(T) (theta_hat - theta*)
  std::vector<Eigen::VectorXd> estimates;
  std::vector<Eigen::VectorXd> std_errors;
};

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

inline NormalityReport monte_carlo_normality(const SimConfig& cfg, std::size_t replications,
                                             const LabelOnlyOptions& opts = {}, const FitOptions& fit_opts = {},
                                             std::size_t jobs = 1) {
  if (replications < 100) throw Error(ErrorCode::ConfigInvalid, "normality study needs at least 100 replications");
  cfg.validate();
  const Eigen::VectorXd theta_star = cfg.theta_star();
  const auto d = theta_star.size();
  const double sqrt_t = std::sqrt(static_cast<double>(cfg.sessions));

  struct Rep {
    bool ok = false;
    Eigen::VectorXd est, z, se;
  };
  std::vector<Rep> reps(replications);
  parallel_for(replications, jobs, [&](std::size_t r) {
    const auto sim = simulate_labels_only(cfg, opts, r);
    try {
      const auto fit = fit_qmle(sim.data, fit_opts);
      if (!fit.converged || fit.boundary_hit || !fit.std_errors) return;
      reps[r].est = fit.theta_hat.values;
      reps[r].z = symmetric_sqrt(fit.gamma_hat) * (sqrt_t * (fit.theta_hat.values - theta_star));
      reps[r].se = *fit.std_errors;
      reps[r].ok = true;
    } catch (const Error&) {
    }
  });

  NormalityReport rep;
  rep.replications = replications;
  std::vector<std::size_t> covered(static_cast<std::size_t>(d), 0);
  for (const auto& r : reps) {
    if (!r.ok) {
      ++rep.excluded;
      continue;
    }
    ++rep.used;
    rep.standardized.push_back(r.z);
    rep.estimates.push_back(r.est);
    rep.std_errors.push_back(r.se);
    bool all_in = true;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double err = std::abs(r.est[j] - theta_star[j]);
      if (!(err < 3.0 * r.se[j])) all_in = false;
      if (err <= 1.959963984540054 * r.se[j]) ++covered[static_cast<std::size_t>(j)];
    }
    rep.within_3se += all_in;
  }
  const double m = static_cast<double>(rep.used);
  for (Eigen::Index j = 0; j < d && rep.used > 1; ++j) {
    std::vector<double> v;
    v.reserve(rep.used);
    for (const auto& z : rep.standardized) v.push_back(z[j]);
    CoordinateStats s;
    for (double a : v) s.mean += a;
    s.mean /= m;
    double m2 = 0.0, m3 = 0.0;
    for (double a : v) {
      const double c = a - s.mean;
      m2 += c * c;
      m3 += c * c * c;
    }
    s.variance = m2 / (m - 1.0);
    const double pop_var = m2 / m;
    s.skewness = pop_var > 0 ? (m3 / m) / std::pow(pop_var, 1.5) : 0.0;
    std::sort(v.begin(), v.end());
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double f = normal_cdf(v[i]);
      s.ks_statistic = std::max({s.ks_statistic, static_cast<double>(i + 1) / m - f, f - static_cast<double>(i) / m});
    }
    s.coverage95 = static_cast<double>(covered[static_cast<std::size_t>(j)]) / m;
    rep.coords.push_back(s);
  }
  return rep;
}

}  // namespace ratioflow
