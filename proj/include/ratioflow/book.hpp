#pragma once

// Price-level order book and the market-order replay that feeds the
// covariate engine. Each session starts from an empty book.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ratioflow/core.hpp"

namespace ratioflow {

enum class EventKind : std::uint8_t { LimitInsert, Cancel, MarketOrder };

struct OrderEvent {
  SessionId session_id = 0;
  Timestamp timestamp = 0;
  EventKind kind = EventKind::LimitInsert;
  Side side = Side::Ask;
  Price price = 0;  // ignored for market orders
  Quantity quantity = 0;

  bool operator==(const OrderEvent&) const = default;
};

struct Level {
  Price price = 0;
  Quantity quantity = 0;

  bool operator==(const Level&) const = default;
};

/// Observation window [open, close] of one trading session.
struct Session {
  SessionId id = 0;
  Timestamp open = 0;
  Timestamp close = 0;

  Timestamp length() const noexcept { return close - open; }
};

class BookState {
 public:
  static constexpr int kTrackedLevels = 10;

  /// Applies one event. On error the book is left unchanged.
  void apply(const OrderEvent& ev);

  /// Resting quantity at the n-th best level (n >= 1); 0 when absent.
  Quantity depth(Side side, int n) const noexcept {
    const auto& lad = ladder_ref(side);
    if (n < 1 || static_cast<std::size_t>(n) > lad.size()) return 0;
    return lad[lad.size() - static_cast<std::size_t>(n)].quantity;
  }

  std::optional<Price> best_price(Side side) const noexcept {
    const auto& lad = ladder_ref(side);
    if (lad.empty()) return std::nullopt;
    return lad.back().price;
  }

  /// Best ask minus best bid in ticks. Throws EmptySide on a one-sided book.
  Price spread() const {
    if (asks_.empty() || bids_.empty())
      throw Error(ErrorCode::EmptySide, "spread undefined on a one-sided book");
    return asks_.back().price - bids_.back().price;
  }

  bool empty(Side side) const noexcept { return ladder_ref(side).empty(); }
  std::size_t level_count(Side side) const noexcept { return ladder_ref(side).size(); }
  Timestamp last_update() const noexcept { return last_update_; }

  /// Levels ordered best first.
  std::vector<Level> ladder(Side side) const {
    const auto& lad = ladder_ref(side);
    return {lad.rbegin(), lad.rend()};
  }

  Quantity total_quantity(Side side) const noexcept {
    Quantity q = 0;
    for (const auto& l : ladder_ref(side)) q += l.quantity;
    return q;
  }

  void clear() noexcept {
    asks_.clear();
    bids_.clear();
    last_update_ = 0;
  }

  bool operator==(const BookState&) const = default;

 private:
  // Stored worst-first so the best level is back(): asks descending, bids ascending.
  std::vector<Level> asks_;
  std::vector<Level> bids_;
  Timestamp last_update_ = 0;

  const std::vector<Level>& ladder_ref(Side s) const noexcept { return s == Side::Ask ? asks_ : bids_; }
  std::vector<Level>& ladder_ref(Side s) noexcept { return s == Side::Ask ? asks_ : bids_; }

  static bool better(Side s, Price a, Price b) noexcept { return s == Side::Ask ? a < b : a > b; }

  void insert(Side side, Price price, Quantity qty);
  void cancel(Side side, Price price, Quantity qty);
  void match(Side side, Quantity qty);
};

inline void BookState::apply(const OrderEvent& ev) {
  if (ev.timestamp < last_update_)
    throw Error(ErrorCode::OutOfOrder, "timestamp " + std::to_string(ev.timestamp) + " precedes last update " +
                                           std::to_string(last_update_));
  if (ev.quantity <= 0) throw Error(ErrorCode::NegativeQuantity, "non-positive event quantity");
  switch (ev.kind) {
    case EventKind::LimitInsert: insert(ev.side, ev.price, ev.quantity); break;
    case EventKind::Cancel: cancel(ev.side, ev.price, ev.quantity); break;
    case EventKind::MarketOrder: match(ev.side, ev.quantity); break;
  }
  last_update_ = ev.timestamp;
}

inline void BookState::insert(Side side, Price price, Quantity qty) {
  const Side other = side == Side::Ask ? Side::Bid : Side::Ask;
  const auto& opp = ladder_ref(other);
  if (!opp.empty()) {
    const Price best_opp = opp.back().price;
    const bool crosses = side == Side::Ask ? price <= best_opp : price >= best_opp;
    if (crosses)
      throw Error(ErrorCode::CrossedBook, "insert at " + std::to_string(price) + " crosses opposite best " +
                                              std::to_string(best_opp));
  }
  auto& lad = ladder_ref(side);
  // Most activity is near the top, so scan from the best level outward.
  std::size_t i = lad.size();
  while (i > 0 && better(side, lad[i - 1].price, price)) --i;
  if (i > 0 && lad[i - 1].price == price) {
    lad[i - 1].quantity += qty;
  } else {
    lad.insert(lad.begin() + static_cast<std::ptrdiff_t>(i), Level{price, qty});
  }
}

inline void BookState::cancel(Side side, Price price, Quantity qty) {
  auto& lad = ladder_ref(side);
  std::size_t i = lad.size();
  while (i > 0 && better(side, lad[i - 1].price, price)) --i;
  if (i == 0 || lad[i - 1].price != price)
    throw Error(ErrorCode::NegativeQuantity, "cancel at empty level " + std::to_string(price));
  Level& lvl = lad[i - 1];
  if (qty > lvl.quantity)
    throw Error(ErrorCode::NegativeQuantity, "cancel of " + std::to_string(qty) + " exceeds resting " +
                                                 std::to_string(lvl.quantity) + " at " + std::to_string(price));
  lvl.quantity -= qty;
  if (lvl.quantity == 0) lad.erase(lad.begin() + static_cast<std::ptrdiff_t>(i - 1));
}

inline void BookState::match(Side side, Quantity qty) {
  auto& lad = ladder_ref(side);
  Quantity available = 0;
  for (auto it = lad.rbegin(); it != lad.rend() && available < qty; ++it) available += it->quantity;
  if (available < qty)
    throw Error(ErrorCode::NegativeQuantity, "market order of " + std::to_string(qty) + " exceeds side depth " +
                                                 std::to_string(available));
  while (qty > 0) {
    Level& top = lad.back();
    if (top.quantity <= qty) {
      qty -= top.quantity;
      lad.pop_back();
    } else {
      top.quantity -= qty;
      qty = 0;
    }
  }
}

/// Copy-by-value, pre-event state of the top of book at a market-order arrival.
struct BookSnapshot {
  std::array<Quantity, BookState::kTrackedLevels> bid_qty{};
  std::array<Quantity, BookState::kTrackedLevels> ask_qty{};
  Price best_bid = 0;
  Price best_ask = 0;
  bool has_bid = false;
  bool has_ask = false;

  std::optional<Price> spread() const noexcept {
    if (!has_bid || !has_ask) return std::nullopt;
    return best_ask - best_bid;
  }

  static BookSnapshot capture(const BookState& book) noexcept {
    BookSnapshot s;
    for (int n = 1; n <= BookState::kTrackedLevels; ++n) {
      s.bid_qty[static_cast<std::size_t>(n - 1)] = book.depth(Side::Bid, n);
      s.ask_qty[static_cast<std::size_t>(n - 1)] = book.depth(Side::Ask, n);
    }
    if (auto p = book.best_price(Side::Bid)) {
      s.best_bid = *p;
      s.has_bid = true;
    }
    if (auto p = book.best_price(Side::Ask)) {
      s.best_ask = *p;
      s.has_ask = true;
    }
    return s;
  }

  bool operator==(const BookSnapshot&) const = default;
};

struct MarketOrderArrival {
  SessionId session_id = 0;
  Timestamp timestamp = 0;
  OrderSide side = OrderSide::MA;
  Quantity quantity = 0;
  std::size_t event_index = 0;  // position in the input stream
  std::uint32_t order_index = 0;  // market-order ordinal within the session
  BookSnapshot pre;

  bool operator==(const MarketOrderArrival&) const = default;
};

struct ReplayOptions {
  // Continuous-trading window, as offsets from session open. Events before
  // `open` update the book without emitting; events after `close` are dropped.
  std::optional<Timestamp> open;
  std::optional<Timestamp> close;
};

/// Single-pass replay over an event stream, emitting one arrival per market
/// order with the book as it stood immediately before the order executed.
class Replayer {
 public:
  explicit Replayer(ReplayOptions opts = {}) : opts_(opts) {}

  template <class OnArrival>
  void push(const OrderEvent& ev, OnArrival&& on_arrival) {
    const std::size_t idx = index_++;
    if (!started_ || ev.session_id != session_) {
      if (started_ && ev.session_id < session_)
        throw Error(ErrorCode::OutOfOrder, "event #" + std::to_string(idx) + ": session " +
                                               std::to_string(ev.session_id) + " after " + std::to_string(session_));
      book_.clear();
      session_ = ev.session_id;
      order_in_session_ = 0;
      started_ = true;
    }
    if (opts_.close && ev.timestamp > *opts_.close) return;
    const bool emit = ev.kind == EventKind::MarketOrder && (!opts_.open || ev.timestamp >= *opts_.open);
    if (emit) {
      MarketOrderArrival a;
      a.session_id = ev.session_id;
      a.timestamp = ev.timestamp;
      a.side = to_order_side(ev.side);
      a.quantity = ev.quantity;
      a.event_index = idx;
      a.order_index = order_in_session_;
      a.pre = BookSnapshot::capture(book_);
      apply_checked(ev, idx);
      ++order_in_session_;
      on_arrival(a);
    } else {
      apply_checked(ev, idx);
    }
  }

  const BookState& book() const noexcept { return book_; }
  std::size_t events_seen() const noexcept { return index_; }

 private:
  ReplayOptions opts_;
  BookState book_;
  SessionId session_ = 0;
  bool started_ = false;
  std::uint32_t order_in_session_ = 0;
  std::size_t index_ = 0;

  void apply_checked(const OrderEvent& ev, std::size_t idx) {
    try {
      book_.apply(ev);
    } catch (const Error& e) {
      throw Error(e.code(), "event #" + std::to_string(idx) + ": " + e.detail());
    }
  }
};

inline BookState apply_event(BookState state, const OrderEvent& ev) {
  state.apply(ev);
  return state;
}

inline std::vector<MarketOrderArrival> replay(std::span<const OrderEvent> events, ReplayOptions opts = {}) {
  Replayer r(opts);
  std::vector<MarketOrderArrival> out;
  for (const auto& ev : events) r.push(ev, [&](const MarketOrderArrival& a) { out.push_back(a); });
  return out;
}

}  // namespace ratioflow
