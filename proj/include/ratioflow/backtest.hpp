#pragma once

// Rolling calibrate-then-predict experiments: fit on l sessions, freeze the
// estimate and the spread threshold, predict the side of every qualifying
// market order in the next l sessions.

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ratioflow/book.hpp"
#include "ratioflow/covariates.hpp"
#include "ratioflow/estimator.hpp"

namespace ratioflow {

/// Market-order arrivals of one session, in time order.
struct SessionArrivals {
  SessionId id = 0;
  std::vector<ArrivalFeatures> arrivals;
  std::size_t first_event = 0;  // event range in the source stream, for audits
  std::size_t end_event = 0;
};

/// `lines`, when given, holds each event's source line and is used to point
/// replay errors at the offending input.
inline std::vector<SessionArrivals> group_sessions(std::span<const OrderEvent> events, ReplayOptions opts = {},
                                                   std::span<const std::size_t> lines = {}) {
  std::vector<SessionArrivals> out;
  Replayer rep(opts);
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& ev = events[i];
    if (out.empty() || out.back().id != ev.session_id) {
      if (!out.empty()) out.back().end_event = i;
      out.push_back({ev.session_id, {}, i, i});
    }
    try {
      rep.push(ev, [&](const MarketOrderArrival& a) { out.back().arrivals.push_back(ArrivalFeatures::from(a)); });
    } catch (const Error& e) {
      if (i >= lines.size()) throw;
      throw Error(e.code(), "line " + std::to_string(lines[i]) + ", " + e.detail());
    }
  }
  if (!out.empty()) out.back().end_event = events.size();
  return out;
}

/// Predict MA iff r_MA > 1/2; an exact tie goes to MB.
inline OrderSide predict_side(const Eigen::VectorXd& theta, std::span<const double> features) {
  return ratio_pair(linear_predictor(theta, features)).ma > 0.5 ? OrderSide::MA : OrderSide::MB;
}

struct CalibrationSchedule {
  int lookback_days = 1;
  int step_days = 1;
  // Session index of the first predicted day; defaults to lookback_days.
  std::optional<std::size_t> first_predict;

  std::size_t start() const { return first_predict ? *first_predict : static_cast<std::size_t>(lookback_days); }

  void validate() const {
    if (lookback_days < 1 || step_days < 1) throw Error(ErrorCode::ConfigInvalid, "schedule needs l >= 1");
    if (start() < static_cast<std::size_t>(lookback_days))
      throw Error(ErrorCode::ConfigInvalid, "first predicted session precedes a full calibration window");
  }
};

struct PredictionRecord {
  SessionId session_id = 0;
  Timestamp timestamp = 0;
  std::uint32_t order_index = 0;
  OrderSide predicted = OrderSide::MB;
  OrderSide actual = OrderSide::MB;
  double r_ma = 0.5;
  std::optional<OrderSide> previous_actual;

  bool correct() const noexcept { return predicted == actual; }
  bool alternation() const noexcept { return previous_actual && *previous_actual != actual; }
};

/// Accuracy over records whose actual side differs from the preceding
/// market order's; absent when there are no such records.
inline std::optional<double> alternation_accuracy(std::span<const PredictionRecord> records) {
  std::size_t n = 0, hit = 0;
  for (const auto& r : records)
    if (r.alternation()) {
      ++n;
      hit += r.correct();
    }
  if (n == 0) return std::nullopt;
  return static_cast<double>(hit) / static_cast<double>(n);
}

struct WindowReport {
  std::size_t calibrate_first = 0;  // session indices, inclusive
  std::size_t calibrate_last = 0;
  std::size_t predict_first = 0;
  std::size_t predict_last = 0;
  bool fitted = false;
  std::string failure;
  Eigen::VectorXd theta;
  double spread_mean = 0.0;
  std::size_t n_predictions = 0;
  std::size_t n_correct = 0;
  std::size_t n_alternations = 0;
  std::size_t n_alternation_correct = 0;
};

struct AccuracyReport {
  std::string model;
  std::string instrument;
  int lookback_days = 1;
  std::size_t n_predictions = 0;
  std::size_t n_correct = 0;
  std::size_t n_alternations = 0;
  std::size_t n_alternation_correct = 0;
  std::optional<double> accuracy;
  std::optional<double> alternation_accuracy;
  std::optional<double> day_weighted_accuracy;
  std::size_t skipped_samples = 0;
  std::size_t failed_windows = 0;
  std::size_t audit_checked = 0;
  std::size_t audit_violations = 0;
  std::vector<WindowReport> windows;
  std::vector<PredictionRecord> records;  // filled when BacktestOptions::keep_records
};

struct BacktestOptions {
  FitOptions fit;
  std::string instrument;
  bool keep_records = false;
  // Recompute each scored sample's features from the event stream cut just
  // before that market order and compare. Needs the event-stream overload.
  bool audit = false;
  std::size_t audit_stride = 1;
  // Optional shared evaluation mask: score only orders with at least this
  // many earlier market orders in their session.
  std::optional<std::uint32_t> min_order_index;
  ReplayOptions replay;
};

namespace detail {

inline std::vector<ArrivalFeatures> concat_arrivals(std::span<const SessionArrivals> sessions, std::size_t first,
                                                    std::size_t last) {
  std::vector<ArrivalFeatures> out;
  for (std::size_t s = first; s <= last; ++s)
    out.insert(out.end(), sessions[s].arrivals.begin(), sessions[s].arrivals.end());
  return out;
}

/// Features of the market order at `event_index` recomputed from the
/// session's events strictly before it.
inline std::vector<double> features_from_prefix(std::span<const OrderEvent> events, const SessionArrivals& session,
                                                std::size_t event_index, const ModelSpec& spec, double spread_mean,
                                                ReplayOptions replay_opts) {
  Replayer rep(replay_opts);
  LagBuffer lags(spec.max_lag());
  for (std::size_t i = session.first_event; i < event_index; ++i)
    rep.push(events[i], [&](const MarketOrderArrival& a) { lags.push(ImbalanceVector::from(a.pre), a.side); });
  const auto snap = BookSnapshot::capture(rep.book());
  return compute_features(spec, snap, lags, spread_mean);
}

}  // namespace detail

inline AccuracyReport run_backtest(std::span<const SessionArrivals> sessions, const ModelSpec& spec,
                                   const CalibrationSchedule& schedule, const BacktestOptions& opts = {},
                                   std::span<const OrderEvent> events = {}) {
  spec.validate();
  schedule.validate();
  const std::size_t l = static_cast<std::size_t>(schedule.lookback_days);
  if (sessions.size() < l + 1 || schedule.start() >= sessions.size())
    throw Error(ErrorCode::InsufficientSessions, "need at least " + std::to_string(std::max(l, schedule.start()) + 1) +
                                                     " sessions, have " + std::to_string(sessions.size()));
  if (opts.audit && events.empty()) throw Error(ErrorCode::ConfigInvalid, "audit mode needs the event stream");

  AccuracyReport rep;
  rep.model = spec.name;
  rep.instrument = opts.instrument;
  rep.lookback_days = schedule.lookback_days;
  double day_acc_sum = 0.0;
  std::size_t day_count = 0;

  for (std::size_t start = schedule.start(); start < sessions.size(); start += static_cast<std::size_t>(schedule.step_days)) {
    WindowReport w;
    w.calibrate_first = start - l;
    w.calibrate_last = start - 1;
    w.predict_first = start;
    w.predict_last = std::min(start + static_cast<std::size_t>(schedule.step_days), sessions.size()) - 1;

    const auto cal = detail::concat_arrivals(sessions, w.calibrate_first, w.calibrate_last);
    DatasetOptions cal_opts;
    cal_opts.session_count = l;
    const auto built = build_dataset(spec, cal, cal_opts);
    w.spread_mean = built.spread_mean;
    std::optional<FitResult> fit;
    try {
      fit = fit_qmle(built.data, opts.fit);
      if (!fit->usable()) w.failure = "fit did not converge";
    } catch (const Error& e) {
      w.failure = e.what();
    }
    if (!w.failure.empty()) {
      ++rep.failed_windows;
      rep.windows.push_back(std::move(w));
      continue;
    }
    w.fitted = true;
    w.theta = fit->theta_hat.values;

    for (std::size_t s = w.predict_first; s <= w.predict_last; ++s) {
      const auto& sess = sessions[s];
      DatasetOptions pred_opts;
      pred_opts.frozen_spread_mean = w.spread_mean;
      const auto pred = build_dataset(spec, sess.arrivals, pred_opts);
      rep.skipped_samples += pred.skipped();
      std::size_t day_n = 0, day_hit = 0;
      for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const auto sample = pred.data.sample(i);
        if (opts.min_order_index && sample.order_index < *opts.min_order_index) continue;
        PredictionRecord rec;
        rec.session_id = sample.session_id;
        rec.timestamp = sample.timestamp;
        rec.order_index = sample.order_index;
        rec.actual = sample.side;
        rec.r_ma = ratio_pair(linear_predictor(w.theta, sample.features)).ma;
        rec.predicted = rec.r_ma > 0.5 ? OrderSide::MA : OrderSide::MB;
        // Arrivals of a session carry consecutive order indices.
        const std::size_t pos = sample.order_index - sess.arrivals.front().order_index;
        if (pos > 0) rec.previous_actual = sess.arrivals[pos - 1].side;

        if (opts.audit && (w.n_predictions % std::max<std::size_t>(opts.audit_stride, 1) == 0)) {
          const auto again =
              detail::features_from_prefix(events, sess, sess.arrivals[pos].event_index, spec, w.spread_mean, opts.replay);
          ++rep.audit_checked;
          if (!std::equal(again.begin(), again.end(), sample.features.begin(), sample.features.end()))
            ++rep.audit_violations;
        }

        ++w.n_predictions;
        ++day_n;
        if (rec.correct()) {
          ++w.n_correct;
          ++day_hit;
        }
        if (rec.alternation()) {
          ++w.n_alternations;
          w.n_alternation_correct += rec.correct();
        }
        if (opts.keep_records) rep.records.push_back(rec);
      }
      if (day_n > 0) {
        day_acc_sum += static_cast<double>(day_hit) / static_cast<double>(day_n);
        ++day_count;
      }
    }
    rep.n_predictions += w.n_predictions;
    rep.n_correct += w.n_correct;
    rep.n_alternations += w.n_alternations;
    rep.n_alternation_correct += w.n_alternation_correct;
    rep.windows.push_back(std::move(w));
  }

  if (rep.n_predictions > 0)
    rep.accuracy = static_cast<double>(rep.n_correct) / static_cast<double>(rep.n_predictions);
  if (rep.n_alternations > 0)
    rep.alternation_accuracy = static_cast<double>(rep.n_alternation_correct) / static_cast<double>(rep.n_alternations);
  if (day_count > 0) rep.day_weighted_accuracy = day_acc_sum / static_cast<double>(day_count);
  return rep;
}

/// Replays `events` and backtests; enables audit mode when requested.
inline AccuracyReport run_backtest(std::span<const OrderEvent> events, const ModelSpec& spec,
                                   const CalibrationSchedule& schedule, const BacktestOptions& opts = {}) {
  const auto sessions = group_sessions(events, opts.replay);
  return run_backtest(sessions, spec, schedule, opts, events);
}

inline constexpr std::array<int, 9> kStudyLookbacks{1, 2, 3, 5, 7, 10, 14, 30, 60};

struct RecalibrationRow {
  int lookback_days = 1;
  std::optional<AccuracyReport> report;
  std::string error;  // InsufficientSessions and the like, per row
};

/// One backtest per l, all scored over the same sessions: prediction starts
/// after the largest feasible lookback so every row covers the same dates.
inline std::vector<RecalibrationRow> recalibration_study(std::span<const SessionArrivals> sessions, const ModelSpec& spec,
                                                         std::span<const int> l_values,
                                                         const BacktestOptions& opts = {}) {
  std::vector<RecalibrationRow> rows;
  if (l_values.empty()) return rows;
  // Lookbacks that cannot be served by the sample fail on their own row and do
  // not move the common start.
  int common_start = 0;
  for (int l : l_values)
    if (l >= 1 && static_cast<std::size_t>(l) < sessions.size()) common_start = std::max(common_start, l);
  if (common_start == 0) common_start = *std::max_element(l_values.begin(), l_values.end());
  for (int l : l_values) {
    RecalibrationRow row;
    row.lookback_days = l;
    CalibrationSchedule sched;
    sched.lookback_days = l;
    sched.step_days = l;
    sched.first_predict = static_cast<std::size_t>(common_start);
    ModelSpec s = spec;
    s.recalibration_days = l;
    try {
      row.report = run_backtest(sessions, s, sched, opts);
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ratioflow
