#pragma once

// Covariates evaluated at the instant before each market order: level and
// cumulative imbalances, their values at earlier market orders, the last
// trade sign and its product with the spread regime.

#include <algorithm>
#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "ratioflow/book.hpp"
#include "ratioflow/core.hpp"
#include "ratioflow/dataset.hpp"

namespace ratioflow {

inline constexpr int kMaxLevel = BookState::kTrackedLevels;
inline constexpr int kMaxLag = 5;

enum class CovariateKind : std::uint8_t { Constant, Imb, ImbCum, LastSign, SignSpreadProduct, LagImb, LagImbCum };

struct CovariateDescriptor {
  CovariateKind kind = CovariateKind::Constant;
  int n = 0;  // level, 1..10, for imbalance kinds
  int m = 0;  // lag, 1..5, for lag kinds

  static constexpr CovariateDescriptor constant() { return {CovariateKind::Constant, 0, 0}; }
  static constexpr CovariateDescriptor imb(int n) { return {CovariateKind::Imb, n, 0}; }
  static constexpr CovariateDescriptor imb_cum(int n) { return {CovariateKind::ImbCum, n, 0}; }
  static constexpr CovariateDescriptor last_sign() { return {CovariateKind::LastSign, 0, 0}; }
  static constexpr CovariateDescriptor sign_spread() { return {CovariateKind::SignSpreadProduct, 0, 0}; }
  static constexpr CovariateDescriptor lag_imb(int n, int m) { return {CovariateKind::LagImb, n, m}; }
  static constexpr CovariateDescriptor lag_imb_cum(int n, int m) { return {CovariateKind::LagImbCum, n, m}; }

  /// i_1 and the cumulative imbalance up to level 1 are the same quantity.
  constexpr CovariateDescriptor canonical() const {
    if (kind == CovariateKind::ImbCum && n == 1) return imb(1);
    if (kind == CovariateKind::LagImbCum && n == 1) return lag_imb(1, m);
    return *this;
  }

  constexpr bool is_lag() const { return kind == CovariateKind::LagImb || kind == CovariateKind::LagImbCum; }

  void validate() const {
    const bool level_kind = kind == CovariateKind::Imb || kind == CovariateKind::ImbCum || is_lag();
    if (level_kind && (n < 1 || n > kMaxLevel))
      throw Error(ErrorCode::ConfigInvalid, "covariate level out of range: " + std::to_string(n));
    if (is_lag() && (m < 1 || m > kMaxLag))
      throw Error(ErrorCode::ConfigInvalid, "covariate lag out of range: " + std::to_string(m));
  }

  std::string label() const {
    switch (kind) {
      case CovariateKind::Constant: return "1";
      case CovariateKind::Imb: return "i" + std::to_string(n);
      case CovariateKind::ImbCum: return "ibar" + std::to_string(n);
      case CovariateKind::LastSign: return "eps";
      case CovariateKind::SignSpreadProduct: return "eps_s";
      case CovariateKind::LagImb: return "i" + std::to_string(n) + "_lag" + std::to_string(m);
      case CovariateKind::LagImbCum: return "ibar" + std::to_string(n) + "_lag" + std::to_string(m);
    }
    return "?";
  }

  constexpr bool operator==(const CovariateDescriptor& o) const {
    const auto a = canonical();
    const auto b = o.canonical();
    return a.kind == b.kind && a.n == b.n && a.m == b.m;
  }
};

struct ModelSpec {
  std::string name;
  std::vector<CovariateDescriptor> covariates;
  int recalibration_days = 1;

  std::size_t dimension() const noexcept { return covariates.size(); }

  int max_lag() const noexcept {
    int m = 0;
    for (const auto& c : covariates)
      if (c.is_lag()) m = std::max(m, c.m);
    return m;
  }

  bool has(CovariateKind k) const noexcept {
    return std::any_of(covariates.begin(), covariates.end(), [k](const auto& c) { return c.kind == k; });
  }

  /// True when `other`'s covariates are a strict subset of this model's.
  bool strictly_contains(const ModelSpec& other) const {
    if (other.covariates.size() >= covariates.size()) return false;
    return std::all_of(other.covariates.begin(), other.covariates.end(), [&](const auto& c) {
      return std::find(covariates.begin(), covariates.end(), c) != covariates.end();
    });
  }

  bool same_covariates(const ModelSpec& other) const {
    if (other.covariates.size() != covariates.size()) return false;
    return std::all_of(other.covariates.begin(), other.covariates.end(), [&](const auto& c) {
      return std::find(covariates.begin(), covariates.end(), c) != covariates.end();
    });
  }

  void validate() const {
    if (covariates.empty() || covariates.front().kind != CovariateKind::Constant)
      throw Error(ErrorCode::ConfigInvalid, "model '" + name + "': first covariate must be the constant");
    if (recalibration_days < 1) throw Error(ErrorCode::ConfigInvalid, "model '" + name + "': recalibration_days < 1");
    for (std::size_t i = 0; i < covariates.size(); ++i) {
      covariates[i].validate();
      for (std::size_t j = 0; j < i; ++j)
        if (covariates[i] == covariates[j])
          throw Error(ErrorCode::ConfigInvalid, "model '" + name + "': duplicate covariate " + covariates[i].label());
    }
  }
};

/// (q_bid - q_ask) / (q_bid + q_ask), or 0 when both are empty.
constexpr double imbalance(Quantity q_bid, Quantity q_ask) noexcept {
  const Quantity den = q_bid + q_ask;
  if (den <= 0) return 0.0;
  return static_cast<double>(q_bid - q_ask) / static_cast<double>(den);
}

/// Level and cumulative imbalances for levels 1..10 of one snapshot.
struct ImbalanceVector {
  std::array<double, kMaxLevel> level{};
  std::array<double, kMaxLevel> cumulative{};

  static ImbalanceVector from(const BookSnapshot& s) noexcept {
    ImbalanceVector v;
    Quantity cb = 0, ca = 0;
    for (std::size_t k = 0; k < kMaxLevel; ++k) {
      v.level[k] = imbalance(s.bid_qty[k], s.ask_qty[k]);
      cb += s.bid_qty[k];
      ca += s.ask_qty[k];
      v.cumulative[k] = imbalance(cb, ca);
    }
    return v;
  }

  bool operator==(const ImbalanceVector&) const = default;
};

inline double cumulative_imbalance(const BookState& book, int n) {
  Quantity cb = 0, ca = 0;
  for (int k = 1; k <= n; ++k) {
    cb += book.depth(Side::Bid, k);
    ca += book.depth(Side::Ask, k);
  }
  return imbalance(cb, ca);
}

/// Sign of a market order as a covariate: -1 for an ask trade, +1 for a bid trade.
constexpr int trade_sign(OrderSide s) noexcept { return s == OrderSide::MA ? -1 : +1; }

/// eps * s, where s = +1 iff the spread is strictly above its mean.
constexpr int sign_spread_product(int eps, double current_spread, double mean_spread) noexcept {
  return eps * (current_spread > mean_spread ? 1 : -1);
}

/// Imbalances at the last few market orders of the current session, and the
/// sign of the most recent one.
class LagBuffer {
 public:
  explicit LagBuffer(int depth = kMaxLag) : depth_(std::clamp(depth, 0, kMaxLag)) {}

  void reset() noexcept {
    count_ = 0;
    head_ = 0;
    orders_seen_ = 0;
    last_sign_ = 0;
  }

  /// Records a market order after its features have been computed.
  void push(const ImbalanceVector& pre_event, OrderSide side) noexcept {
    if (depth_ > 0) {
      head_ = (head_ + 1) % static_cast<std::size_t>(depth_);
      ring_[head_] = pre_event;
      count_ = std::min(count_ + 1, static_cast<std::size_t>(depth_));
    }
    ++orders_seen_;
    last_sign_ = trade_sign(side);
  }

  /// Imbalances at the market order m orders back (m >= 1).
  const ImbalanceVector& lag(int m) const {
    if (m < 1 || static_cast<std::size_t>(m) > count_)
      throw Error(ErrorCode::InsufficientHistory, "lag " + std::to_string(m) + " unavailable");
    const std::size_t d = static_cast<std::size_t>(depth_);
    return ring_[(head_ + d - static_cast<std::size_t>(m - 1)) % d];
  }

  std::size_t size() const noexcept { return count_; }
  int depth() const noexcept { return depth_; }
  std::size_t orders_seen() const noexcept { return orders_seen_; }
  /// 0 before the first trade of the session.
  int last_sign() const noexcept { return last_sign_; }

 private:
  int depth_;
  std::array<ImbalanceVector, kMaxLag> ring_{};
  std::size_t count_ = 0;
  std::size_t head_ = 0;
  std::size_t orders_seen_ = 0;
  int last_sign_ = 0;
};

/// Whether the buffer holds enough history to evaluate `spec`.
inline bool has_history(const ModelSpec& spec, const LagBuffer& lags) noexcept {
  if (lags.size() < static_cast<std::size_t>(spec.max_lag())) return false;
  if (spec.has(CovariateKind::LastSign) && lags.orders_seen() == 0) return false;
  return true;
}

/// Writes the features of `spec` into `out` (length d). `spread` is the
/// current spread in ticks and only read by the sign-spread covariate.
inline void compute_features(const ModelSpec& spec, const ImbalanceVector& now, const LagBuffer& lags,
                             double spread, double spread_mean, std::span<double> out) {
  if (out.size() != spec.dimension()) throw Error(ErrorCode::DimensionMismatch, "output span length differs from d");
  if (!has_history(spec, lags))
    throw Error(ErrorCode::InsufficientHistory, "model '" + spec.name + "' needs more market-order history");
  for (std::size_t j = 0; j < out.size(); ++j) {
    const auto& c = spec.covariates[j];
    const auto k = static_cast<std::size_t>(c.n - 1);
    switch (c.kind) {
      case CovariateKind::Constant: out[j] = 1.0; break;
      case CovariateKind::Imb: out[j] = now.level[k]; break;
      case CovariateKind::ImbCum: out[j] = now.cumulative[k]; break;
      case CovariateKind::LastSign: out[j] = lags.last_sign(); break;
      case CovariateKind::SignSpreadProduct:
        out[j] = sign_spread_product(lags.last_sign(), spread, spread_mean);
        break;
      case CovariateKind::LagImb: out[j] = lags.lag(c.m).level[k]; break;
      case CovariateKind::LagImbCum: out[j] = lags.lag(c.m).cumulative[k]; break;
    }
  }
}

inline std::vector<double> compute_features(const ModelSpec& spec, const BookSnapshot& snap, const LagBuffer& lags,
                                            double spread_mean) {
  std::vector<double> out(spec.dimension());
  const auto spread = snap.spread();
  compute_features(spec, ImbalanceVector::from(snap), lags, spread ? static_cast<double>(*spread) : 0.0, spread_mean,
                   out);
  return out;
}

/// Arithmetic mean of the spread observed at market-order arrivals.
class SpreadMean {
 public:
  void add(Price spread) noexcept {
    sum_ += static_cast<double>(spread);
    ++count_;
  }
  std::size_t count() const noexcept { return count_; }
  double value() const noexcept { return count_ ? sum_ / static_cast<double>(count_) : 0.0; }

 private:
  double sum_ = 0.0;
  std::size_t count_ = 0;
};

/// What the covariate engine needs from one market-order arrival: the label,
/// the pre-event imbalances at every level and the pre-event spread.
struct ArrivalFeatures {
  SessionId session_id = 0;
  Timestamp timestamp = 0;
  OrderSide side = OrderSide::MA;
  std::uint32_t order_index = 0;
  std::size_t event_index = 0;
  ImbalanceVector imb;
  std::optional<double> spread;  // absent on a one-sided book

  static ArrivalFeatures from(const MarketOrderArrival& a) noexcept {
    ArrivalFeatures f;
    f.session_id = a.session_id;
    f.timestamp = a.timestamp;
    f.side = a.side;
    f.order_index = a.order_index;
    f.event_index = a.event_index;
    f.imb = ImbalanceVector::from(a.pre);
    if (auto sp = a.pre.spread()) f.spread = static_cast<double>(*sp);
    return f;
  }

  bool operator==(const ArrivalFeatures&) const = default;
};

inline std::vector<ArrivalFeatures> to_features(std::span<const MarketOrderArrival> arrivals) {
  std::vector<ArrivalFeatures> out;
  out.reserve(arrivals.size());
  for (const auto& a : arrivals) out.push_back(ArrivalFeatures::from(a));
  return out;
}

namespace detail {
inline const ArrivalFeatures& as_features(const ArrivalFeatures& a) noexcept { return a; }
inline ArrivalFeatures as_features(const MarketOrderArrival& a) noexcept { return ArrivalFeatures::from(a); }
}  // namespace detail

template <class Arrival>
double mean_spread(std::span<const Arrival> arrivals) {
  SpreadMean m;
  for (const auto& a : arrivals) {
    if constexpr (std::is_same_v<Arrival, MarketOrderArrival>) {
      if (auto s = a.pre.spread()) m.add(*s);
    } else {
      if (a.spread) m.add(*a.spread);
    }
  }
  return m.value();
}

struct DatasetOptions {
  // Threshold for the spread regime. When unset it is the mean over the
  // arrivals being converted.
  std::optional<double> frozen_spread_mean;
  // T for the dataset. When unset, the number of distinct sessions seen.
  std::optional<std::size_t> session_count;
  // Drop orders with fewer earlier orders in their session than this. Models
  // with different lag depths then share one sample, which keeps their
  // likelihoods comparable.
  std::optional<std::uint32_t> min_order_index;
};

struct DatasetBuild {
  Dataset data;
  std::size_t skipped_history = 0;
  std::size_t skipped_spread = 0;
  std::size_t skipped_mask = 0;
  double spread_mean = 0.0;

  std::size_t skipped() const noexcept { return skipped_history + skipped_spread + skipped_mask; }
};

/// Converts arrivals (ordered by session then time) into labeled samples.
/// Accepts replay output or precomputed ArrivalFeatures.
template <class Arrival>
DatasetBuild build_dataset(const ModelSpec& spec, std::span<const Arrival> arrivals, const DatasetOptions& opts = {}) {
  spec.validate();
  DatasetBuild out;
  out.data = Dataset(spec.dimension());
  out.data.reserve(arrivals.size());
  out.spread_mean = opts.frozen_spread_mean ? *opts.frozen_spread_mean : mean_spread(arrivals);
  const bool needs_spread = spec.has(CovariateKind::SignSpreadProduct);

  LagBuffer lags(spec.max_lag());
  std::size_t sessions = 0;
  std::optional<SessionId> current;
  for (const auto& raw : arrivals) {
    decltype(auto) a = detail::as_features(raw);
    if (!current || *current != a.session_id) {
      lags.reset();
      current = a.session_id;
      ++sessions;
    }
    if (opts.min_order_index && a.order_index < *opts.min_order_index) {
      ++out.skipped_mask;
    } else if (!has_history(spec, lags)) {
      ++out.skipped_history;
    } else if (needs_spread && !a.spread) {
      ++out.skipped_spread;
    } else {
      auto row = out.data.push_uninitialized(a.side, a.session_id, a.timestamp, a.order_index);
      compute_features(spec, a.imb, lags, a.spread.value_or(0.0), out.spread_mean, row);
    }
    lags.push(a.imb, a.side);
  }
  out.data.sessions = opts.session_count ? *opts.session_count : sessions;
  return out;
}

template <class Arrival>
DatasetBuild build_dataset(const ModelSpec& spec, const std::vector<Arrival>& arrivals, const DatasetOptions& opts = {}) {
  return build_dataset(spec, std::span<const Arrival>(arrivals), opts);
}

}  // namespace ratioflow
