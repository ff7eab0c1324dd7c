#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ratioflow/core.hpp"

namespace ratioflow {

/// One labeled observation: a market order paired with its pre-event features.
struct MarketOrderSample {
  OrderSide side = OrderSide::MA;
  Timestamp timestamp = 0;
  SessionId session_id = 0;
  std::uint32_t order_index = 0;
  std::span<const double> features;
};

/// Row-major feature matrix plus labels. `sessions` is T, the number of
/// observation intervals the samples were drawn from.
struct Dataset {
  std::size_t d = 0;
  std::size_t sessions = 0;
  std::vector<double> x;
  std::vector<OrderSide> side;
  std::vector<SessionId> session;
  std::vector<Timestamp> timestamp;
  std::vector<std::uint32_t> order_index;

  Dataset() = default;
  explicit Dataset(std::size_t dim, std::size_t t = 0) : d(dim), sessions(t) {}

  std::size_t size() const noexcept { return side.size(); }
  bool empty() const noexcept { return side.empty(); }

  std::span<const double> row(std::size_t i) const noexcept { return {x.data() + i * d, d}; }
  std::span<double> row(std::size_t i) noexcept { return {x.data() + i * d, d}; }

  void reserve(std::size_t n) {
    x.reserve(n * d);
    side.reserve(n);
    session.reserve(n);
    timestamp.reserve(n);
    order_index.reserve(n);
  }

  void push(OrderSide s, std::span<const double> features, SessionId sess = 0, Timestamp ts = 0,
            std::uint32_t order = 0) {
    if (features.size() != d) throw Error(ErrorCode::DimensionMismatch, "feature length differs from dataset dimension");
    x.insert(x.end(), features.begin(), features.end());
    side.push_back(s);
    session.push_back(sess);
    timestamp.push_back(ts);
    order_index.push_back(order);
  }

  /// Appends the feature row in place and returns it for filling.
  std::span<double> push_uninitialized(OrderSide s, SessionId sess, Timestamp ts, std::uint32_t order) {
    x.resize(x.size() + d);
    side.push_back(s);
    session.push_back(sess);
    timestamp.push_back(ts);
    order_index.push_back(order);
    return row(size() - 1);
  }

  MarketOrderSample sample(std::size_t i) const noexcept {
    return {side[i], timestamp[i], session[i], order_index[i], row(i)};
  }

  std::size_t count(OrderSide s) const noexcept {
    std::size_t c = 0;
    for (auto v : side) c += v == s;
    return c;
  }

  /// Concatenates `other` (same d). Session counts add.
  void append(const Dataset& other) {
    if (other.d != d) throw Error(ErrorCode::DimensionMismatch, "cannot append datasets of different dimension");
    x.insert(x.end(), other.x.begin(), other.x.end());
    side.insert(side.end(), other.side.begin(), other.side.end());
    session.insert(session.end(), other.session.begin(), other.session.end());
    timestamp.insert(timestamp.end(), other.timestamp.begin(), other.timestamp.end());
    order_index.insert(order_index.end(), other.order_index.begin(), other.order_index.end());
    sessions += other.sessions;
  }
};

}  // namespace ratioflow
