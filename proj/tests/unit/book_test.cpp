#include <gtest/gtest.h>

#include <ratioflow/book.hpp>
#include <ratioflow/rng.hpp>

#include <map>

#include "helpers.hpp"

using namespace ratioflow;
using namespace rf_test;

namespace {

void expect_error(ErrorCode code, auto&& fn) {
  try {
    fn();
    FAIL() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

}  // namespace

TEST(Book, InsertCreatesLevel) {
  const auto b = book_of({insert(Side::Ask, 1001, 300)});
  EXPECT_EQ(b.ladder(Side::Ask), (std::vector<Level>{{1001, 300}}));
  EXPECT_TRUE(b.empty(Side::Bid));
}

TEST(Book, ExactCancelRemovesLevel) {
  const auto b = book_of({insert(Side::Ask, 1001, 300), cancel(Side::Ask, 1001, 300)});
  EXPECT_TRUE(b.empty(Side::Ask));
  EXPECT_EQ(b.level_count(Side::Ask), 0u);
}

TEST(Book, MarketOrderWalksLevels) {
  const auto b = book_of({insert(Side::Ask, 1001, 200), insert(Side::Ask, 1002, 500), market(Side::Ask, 300)});
  EXPECT_EQ(b.ladder(Side::Ask), (std::vector<Level>{{1002, 400}}));
}

TEST(Book, Depth) {
  const auto b = book_of({insert(Side::Ask, 1001, 200), insert(Side::Ask, 1002, 500)});
  EXPECT_EQ(b.depth(Side::Ask, 1), 200);
  EXPECT_EQ(b.depth(Side::Ask, 2), 500);
  EXPECT_EQ(b.depth(Side::Ask, 3), 0);
  EXPECT_EQ(BookState{}.depth(Side::Ask, 1), 0);
  EXPECT_EQ(b.depth(Side::Bid, 1), 0);
}

TEST(Book, Spread) {
  EXPECT_EQ(book_of({insert(Side::Bid, 999, 1), insert(Side::Ask, 1001, 1)}).spread(), 2);
  EXPECT_EQ(book_of({insert(Side::Bid, 1000, 1), insert(Side::Ask, 1001, 1)}).spread(), 1);
  expect_error(ErrorCode::EmptySide, [] { (void)book_of({insert(Side::Bid, 1000, 1)}).spread(); });
}

TEST(Book, LaddersOrderedBestFirst) {
  const auto b = book_of({insert(Side::Bid, 995, 1), insert(Side::Bid, 999, 2), insert(Side::Bid, 997, 3),
                          insert(Side::Ask, 1003, 4), insert(Side::Ask, 1001, 5), insert(Side::Bid, 999, 6)});
  EXPECT_EQ(b.ladder(Side::Bid), (std::vector<Level>{{999, 8}, {997, 3}, {995, 1}}));
  EXPECT_EQ(b.ladder(Side::Ask), (std::vector<Level>{{1001, 5}, {1003, 4}}));
  EXPECT_EQ(b.best_price(Side::Bid), 999);
  EXPECT_EQ(b.total_quantity(Side::Bid), 12);
}

TEST(Book, Errors) {
  expect_error(ErrorCode::CrossedBook, [] { book_of({insert(Side::Ask, 1001, 1), insert(Side::Bid, 1001, 1)}); });
  expect_error(ErrorCode::CrossedBook, [] { book_of({insert(Side::Bid, 1001, 1), insert(Side::Ask, 1000, 1)}); });
  expect_error(ErrorCode::NegativeQuantity, [] { book_of({insert(Side::Ask, 1001, 10), cancel(Side::Ask, 1001, 11)}); });
  expect_error(ErrorCode::NegativeQuantity, [] { book_of({cancel(Side::Ask, 1001, 1)}); });
  expect_error(ErrorCode::NegativeQuantity, [] { book_of({insert(Side::Ask, 1001, 10), market(Side::Ask, 11)}); });
  expect_error(ErrorCode::NegativeQuantity, [] { book_of({insert(Side::Ask, 1001, 0)}); });
  expect_error(ErrorCode::OutOfOrder,
               [] { book_of({insert(Side::Ask, 1001, 1, 10), insert(Side::Ask, 1002, 1, 9)}); });
}

TEST(Book, FailedEventLeavesBookUnchanged) {
  auto b = book_of({insert(Side::Ask, 1001, 200), insert(Side::Ask, 1002, 100)});
  const auto before = b;
  EXPECT_THROW(b.apply(market(Side::Ask, 301)), Error);
  EXPECT_EQ(b, before);
  EXPECT_THROW(b.apply(insert(Side::Bid, 1005, 1)), Error);
  EXPECT_EQ(b, before);
}

TEST(Book, ApplyEventIsValueSemantics) {
  const BookState empty;
  const auto next = apply_event(empty, insert(Side::Bid, 900, 5));
  EXPECT_TRUE(empty.empty(Side::Bid));
  EXPECT_EQ(next.depth(Side::Bid, 1), 5);
}

TEST(Replay, NoMarketOrdersNoEmissions) {
  const std::vector<OrderEvent> evs{insert(Side::Ask, 1001, 5), insert(Side::Bid, 999, 5), cancel(Side::Ask, 1001, 2)};
  EXPECT_TRUE(replay(evs).empty());
}

TEST(Replay, SnapshotIsPreEvent) {
  const std::vector<OrderEvent> evs{insert(Side::Ask, 1001, 5), insert(Side::Bid, 999, 7), market(Side::Ask, 5)};
  const auto out = replay(evs);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].side, OrderSide::MA);
  EXPECT_EQ(out[0].pre.ask_qty[0], 5);
  EXPECT_EQ(out[0].pre.bid_qty[0], 7);
  EXPECT_EQ(out[0].pre.spread(), 2);
  EXPECT_EQ(out[0].event_index, 2u);
}

TEST(Replay, ErrorCarriesEventIndex) {
  const std::vector<OrderEvent> evs{insert(Side::Ask, 1001, 5), cancel(Side::Ask, 1001, 9)};
  try {
    replay(evs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NegativeQuantity);
    EXPECT_NE(std::string(e.what()).find("event #1"), std::string::npos) << e.what();
  }
}

TEST(Replay, SessionBoundaryResetsBook) {
  const std::vector<OrderEvent> evs{insert(Side::Ask, 1001, 5, 0, 0), insert(Side::Bid, 999, 5, 0, 0),
                                    insert(Side::Ask, 2001, 3, 0, 1), market(Side::Ask, 1, 5, 1)};
  const auto out = replay(evs);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].session_id, 1);
  EXPECT_EQ(out[0].order_index, 0u);
  EXPECT_FALSE(out[0].pre.has_bid);
  EXPECT_EQ(out[0].pre.best_ask, 2001);
}

TEST(Replay, TimestampsMayRestartInNewSession) {
  const std::vector<OrderEvent> evs{insert(Side::Ask, 1001, 5, 900, 0), insert(Side::Ask, 1001, 5, 10, 1)};
  EXPECT_NO_THROW(replay(evs));
  const std::vector<OrderEvent> back{insert(Side::Ask, 1001, 5, 0, 2), insert(Side::Ask, 1001, 5, 0, 1)};
  expect_error(ErrorCode::OutOfOrder, [&] { replay(back); });
}

TEST(Replay, ClippingWindow) {
  const std::vector<OrderEvent> evs{insert(Side::Ask, 1001, 50, 0), insert(Side::Bid, 999, 50, 0),
                                    market(Side::Ask, 1, 5),         market(Side::Ask, 1, 10),
                                    market(Side::Bid, 1, 20),        market(Side::Bid, 1, 31)};
  ReplayOptions opts;
  opts.open = 10;
  opts.close = 30;
  const auto out = replay(evs, opts);
  ASSERT_EQ(out.size(), 2u);
  // The order before the open still consumed liquidity.
  EXPECT_EQ(out[0].pre.ask_qty[0], 49);
  EXPECT_EQ(out[0].order_index, 0u);
  EXPECT_EQ(out[1].side, OrderSide::MB);
}

namespace {

// Random valid stream built against a naive price -> quantity map.
std::vector<OrderEvent> random_stream(std::uint64_t seed, std::size_t n, int sessions = 1) {
  Philox rng(seed);
  std::vector<OrderEvent> out;
  for (int k = 0; k < sessions; ++k) {
    std::map<Price, Quantity> ask, bid;
    Timestamp t = 0;
    for (std::size_t i = 0; i < n; ++i) {
      t += rng.uniform_int(0, 3);
      const Side side = rng.bernoulli(0.5) ? Side::Ask : Side::Bid;
      auto& lad = side == Side::Ask ? ask : bid;
      const double u = rng.uniform();
      if (u < 0.15 && !lad.empty()) {
        Quantity total = 0;
        for (auto& [p, q] : lad) total += q;
        out.push_back(market(side, rng.uniform_int(1, total), t, k));
        Quantity left = out.back().quantity;
        while (left > 0) {
          auto it = side == Side::Ask ? lad.begin() : std::prev(lad.end());
          const Quantity f = std::min(left, it->second);
          it->second -= f;
          left -= f;
          if (it->second == 0) lad.erase(it);
        }
      } else if (u < 0.45 && !lad.empty()) {
        auto it = std::next(lad.begin(), rng.uniform_int(0, static_cast<std::int64_t>(lad.size()) - 1));
        const Quantity q = rng.uniform_int(1, it->second);
        out.push_back(cancel(side, it->first, q, t, k));
        it->second -= q;
        if (it->second == 0) lad.erase(it);
      } else {
        Price p;
        if (side == Side::Ask)
          p = (bid.empty() ? 1000 : std::prev(bid.end())->first) + 1 + rng.uniform_int(0, 8);
        else
          p = (ask.empty() ? 1002 : ask.begin()->first) - 1 - rng.uniform_int(0, 8);
        const Quantity q = rng.uniform_int(1, 500);
        out.push_back(insert(side, p, q, t, k));
        lad[p] += q;
      }
    }
  }
  return out;
}

}  // namespace

TEST(Replay, LevelsMatchNaiveAccumulator) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto evs = random_stream(seed, 10000);
    std::map<std::pair<Side, Price>, Quantity> acc;
    BookState b;
    for (std::size_t i = 0; i < evs.size(); ++i) {
      const auto& e = evs[i];
      if (e.kind == EventKind::MarketOrder) {
        // Brute-force matcher: take from the best price repeatedly.
        Quantity left = e.quantity;
        while (left > 0) {
          std::optional<Price> best;
          for (auto& [k, q] : acc)
            if (k.first == e.side && q > 0 && (!best || (e.side == Side::Ask ? k.second < *best : k.second > *best)))
              best = k.second;
          ASSERT_TRUE(best);
          auto& q = acc[{e.side, *best}];
          const Quantity f = std::min(q, left);
          q -= f;
          left -= f;
        }
      } else {
        acc[{e.side, e.price}] += e.kind == EventKind::LimitInsert ? e.quantity : -e.quantity;
      }
      b.apply(e);
      if (i % 97 == 0 || i + 1 == evs.size()) {
        for (Side s : {Side::Ask, Side::Bid}) {
          std::size_t nonzero = 0;
          for (auto& [k, q] : acc)
            if (k.first == s && q > 0) ++nonzero;
          ASSERT_EQ(b.level_count(s), nonzero);
          for (const auto& lvl : b.ladder(s)) ASSERT_EQ((acc[{s, lvl.price}]), lvl.quantity);
        }
      }
    }
  }
}

TEST(Replay, EmissionDepthExceedsPostEventDepth) {
  const auto evs = random_stream(11, 5000);
  BookState b;
  Replayer rep;
  for (const auto& e : evs) {
    std::optional<MarketOrderArrival> got;
    rep.push(e, [&](const MarketOrderArrival& a) { got = a; });
    b.apply(e);
    if (got) {
      const auto side = to_book_side(got->side);
      const Quantity pre = side == Side::Ask ? got->pre.ask_qty[0] : got->pre.bid_qty[0];
      const Price best = side == Side::Ask ? got->pre.best_ask : got->pre.best_bid;
      Quantity post = 0;
      for (const auto& l : b.ladder(side))
        if (l.price == best) post = l.quantity;
      EXPECT_GT(pre, post);
    }
  }
}

TEST(Replay, Deterministic) {
  const auto evs = random_stream(3, 3000, 3);
  const auto a = replay(evs), b = replay(evs);
  EXPECT_EQ(a, b);
  std::size_t mos = 0;
  for (const auto& e : evs) mos += e.kind == EventKind::MarketOrder;
  EXPECT_EQ(a.size(), mos);
}
