#include <gtest/gtest.h>

#include <ratioflow/catalog.hpp>
#include <ratioflow/covariates.hpp>
#include <ratioflow/rng.hpp>

#include <cmath>

#include "helpers.hpp"

using namespace ratioflow;
using namespace rf_test;

TEST(Imbalance, Examples) {
  EXPECT_EQ(imbalance(400, 400), 0.0);
  EXPECT_EQ(imbalance(100, 0), 1.0);
  EXPECT_EQ(imbalance(0, 100), -1.0);
  EXPECT_DOUBLE_EQ(imbalance(100, 50), 1.0 / 3.0);
  EXPECT_EQ(imbalance(0, 0), 0.0);
}

TEST(Imbalance, Cumulative) {
  const auto b1 = book_of({insert(Side::Bid, 999, 100), insert(Side::Bid, 998, 300), insert(Side::Ask, 1001, 200),
                           insert(Side::Ask, 1002, 200)});
  EXPECT_EQ(cumulative_imbalance(b1, 2), 0.0);
  EXPECT_EQ(cumulative_imbalance(b1, 1), imbalance(100, 200));

  // Bid has one level, so q^B_2 = 0.
  const auto b2 = book_of({insert(Side::Bid, 999, 100), insert(Side::Ask, 1001, 50), insert(Side::Ask, 1002, 150)});
  EXPECT_DOUBLE_EQ(cumulative_imbalance(b2, 2), -1.0 / 3.0);
  const auto v = ImbalanceVector::from(BookSnapshot::capture(b2));
  EXPECT_DOUBLE_EQ(v.cumulative[1], -1.0 / 3.0);
  EXPECT_EQ(v.cumulative[0], v.level[0]);
}

TEST(Imbalance, SignSpreadProduct) {
  EXPECT_EQ(sign_spread_product(+1, 3, 1.8), +1);
  EXPECT_EQ(sign_spread_product(-1, 1, 1.8), +1);
  EXPECT_EQ(sign_spread_product(0, 5, 1.8), 0);
  EXPECT_EQ(sign_spread_product(+1, 2, 2.0), -1);  // tie is not "larger"
  EXPECT_EQ(trade_sign(OrderSide::MA), -1);
  EXPECT_EQ(trade_sign(OrderSide::MB), +1);
}

namespace {

BookSnapshot random_snapshot(Philox& rng) {
  BookSnapshot s;
  for (std::size_t k = 0; k < kMaxLevel; ++k) {
    s.bid_qty[k] = rng.bernoulli(0.1) ? 0 : rng.uniform_int(1, 1000);
    s.ask_qty[k] = rng.bernoulli(0.1) ? 0 : rng.uniform_int(1, 1000);
  }
  s.has_bid = s.has_ask = true;
  s.best_bid = 1000;
  s.best_ask = 1000 + rng.uniform_int(1, 3);
  return s;
}

}  // namespace

TEST(Imbalance, Properties) {
  Philox rng(5);
  for (int i = 0; i < 2000; ++i) {
    auto s = random_snapshot(rng);
    const auto v = ImbalanceVector::from(s);
    BookSnapshot swapped = s;
    std::swap(swapped.bid_qty, swapped.ask_qty);
    const auto w = ImbalanceVector::from(swapped);
    double max_abs = 0.0;
    for (std::size_t k = 0; k < kMaxLevel; ++k) {
      ASSERT_LE(std::abs(v.level[k]), 1.0);
      ASSERT_LE(std::abs(v.cumulative[k]), 1.0);
      ASSERT_EQ(w.level[k], -v.level[k]);
      ASSERT_EQ(w.cumulative[k], -v.cumulative[k]);
      max_abs = std::max(max_abs, std::abs(v.level[k]));
      ASSERT_LE(std::abs(v.cumulative[k]), max_abs + 1e-15);
    }
  }
}

TEST(Features, ConstantAndBalanced) {
  const ModelSpec constant{"c", {CovariateDescriptor::constant()}, 1};
  const auto snap = BookSnapshot::capture(book_of({insert(Side::Bid, 999, 40), insert(Side::Ask, 1001, 40)}));
  LagBuffer lags(0);
  EXPECT_EQ(compute_features(constant, snap, lags, 1.0), (std::vector<double>{1.0}));
  EXPECT_EQ(compute_features(*find_model("imb1"), snap, lags, 1.0), (std::vector<double>{1.0, 0.0}));
}

TEST(Features, HandcraftedLagModel) {
  const auto spec = *find_model("imb2_e_es_la1");
  ASSERT_EQ(spec.dimension(), 7u);
  // Previous order: an MB trade against a book with bids (300, 100), asks (100, 100).
  const auto prev = BookSnapshot::capture(book_of({insert(Side::Bid, 999, 300), insert(Side::Bid, 998, 100),
                                                   insert(Side::Ask, 1001, 100), insert(Side::Ask, 1002, 100)}));
  LagBuffer lags(spec.max_lag());
  lags.push(ImbalanceVector::from(prev), OrderSide::MB);
  // Current book: bids (100, 0), asks (50, 150), spread 3.
  const auto now = BookSnapshot::capture(
      book_of({insert(Side::Bid, 999, 100), insert(Side::Ask, 1002, 50), insert(Side::Ask, 1003, 150)}));
  const double mean = 1.8;
  const auto x = compute_features(spec, now, lags, mean);
  const int eps = trade_sign(OrderSide::MB);
  const std::vector<double> expect{1.0,
                                   imbalance(100, 50),
                                   imbalance(0, 150),
                                   imbalance(300, 100),
                                   imbalance(100, 100),
                                   static_cast<double>(eps),
                                   static_cast<double>(sign_spread_product(eps, 3, mean))};
  EXPECT_EQ(x, expect);
}

TEST(Features, InsufficientHistoryThrows) {
  LagBuffer lags(1);
  const BookSnapshot snap{};
  try {
    compute_features(*find_model("imb1_la1"), snap, lags, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientHistory);
  }
  EXPECT_THROW(compute_features(*find_model("imb1_e_es"), snap, lags, 1.0), Error);
}

TEST(LagBuffer, RingOrder) {
  LagBuffer lags(3);
  for (int i = 1; i <= 5; ++i) {
    ImbalanceVector v;
    v.level[0] = i;
    lags.push(v, i % 2 ? OrderSide::MA : OrderSide::MB);
  }
  EXPECT_EQ(lags.size(), 3u);
  EXPECT_EQ(lags.lag(1).level[0], 5);
  EXPECT_EQ(lags.lag(3).level[0], 3);
  EXPECT_THROW(lags.lag(4), Error);
  EXPECT_EQ(lags.last_sign(), -1);
  lags.reset();
  EXPECT_EQ(lags.size(), 0u);
  EXPECT_EQ(lags.last_sign(), 0);
}

namespace {

std::vector<ArrivalFeatures> arrivals(SessionId k, int n, std::uint64_t seed = 1) {
  Philox rng(seed, static_cast<std::uint64_t>(k));
  std::vector<ArrivalFeatures> out;
  for (int i = 0; i < n; ++i) {
    ArrivalFeatures a;
    a.session_id = k;
    a.timestamp = i * 1000;
    a.order_index = static_cast<std::uint32_t>(i);
    a.side = rng.bernoulli(0.5) ? OrderSide::MA : OrderSide::MB;
    a.imb = ImbalanceVector::from(random_snapshot(rng));
    a.spread = static_cast<double>(rng.uniform_int(1, 3));
    out.push_back(a);
  }
  return out;
}

}  // namespace

TEST(BuildDataset, EmptyInput) {
  const std::vector<ArrivalFeatures> none;
  const auto b = build_dataset(*find_model("imb1"), none);
  EXPECT_TRUE(b.data.empty());
  EXPECT_EQ(b.skipped(), 0u);
}

TEST(BuildDataset, LagSkipsFirstOrder) {
  const auto b = build_dataset(*find_model("imb1_la1"), arrivals(0, 5));
  EXPECT_EQ(b.data.size(), 4u);
  EXPECT_EQ(b.skipped_history, 1u);
}

TEST(BuildDataset, LagsResetPerSession) {
  auto a = arrivals(0, 5);
  const auto b = arrivals(1, 5);
  a.insert(a.end(), b.begin(), b.end());
  const auto built = build_dataset(*find_model("imb1_e_es_la2"), a);
  EXPECT_EQ(built.skipped_history, 4u);
  EXPECT_EQ(built.data.size(), 6u);
  EXPECT_EQ(built.data.sessions, 2u);
}

TEST(BuildDataset, LagShiftsPreviousImbalance) {
  const auto a = arrivals(0, 50);
  const auto spec = *find_model("imb3_la1");
  const auto built = build_dataset(spec, a);
  ASSERT_EQ(built.data.size(), 49u);
  for (std::size_t i = 1; i < built.data.size(); ++i)
    for (int k = 0; k < 3; ++k) EXPECT_EQ(built.data.row(i)[4 + k], built.data.row(i - 1)[1 + k]);
}

TEST(BuildDataset, SpreadMeanAndMissingSpread) {
  auto a = arrivals(0, 20);
  a[7].spread.reset();
  const auto spec = *find_model("imb1_e_es");
  const auto built = build_dataset(spec, a);
  EXPECT_EQ(built.skipped_spread, 1u);
  EXPECT_EQ(built.skipped_history, 1u);
  double sum = 0;
  int n = 0;
  for (const auto& x : a)
    if (x.spread) sum += *x.spread, ++n;
  EXPECT_DOUBLE_EQ(built.spread_mean, sum / n);

  DatasetOptions frozen;
  frozen.frozen_spread_mean = 0.5;
  const auto f = build_dataset(spec, a, frozen);
  for (std::size_t i = 0; i < f.data.size(); ++i) EXPECT_EQ(f.data.row(i)[3], f.data.row(i)[2]);
}

TEST(BuildDataset, FeatureRangesHold) {
  for (const auto& spec : model_catalog()) {
    const auto built = build_dataset(spec, arrivals(0, 30, 9));
    for (std::size_t i = 0; i < built.data.size(); ++i) {
      const auto r = built.data.row(i);
      ASSERT_EQ(r[0], 1.0);
      for (std::size_t j = 1; j < r.size(); ++j) {
        const auto kind = spec.covariates[j].kind;
        if (kind == CovariateKind::LastSign || kind == CovariateKind::SignSpreadProduct)
          ASSERT_TRUE(r[j] == -1 || r[j] == 0 || r[j] == 1);
        else
          ASSERT_LE(std::abs(r[j]), 1.0);
      }
    }
  }
}

TEST(BuildDataset, ReplayOutputAccepted) {
  const std::vector<OrderEvent> evs{insert(Side::Ask, 1001, 50), insert(Side::Bid, 999, 30), market(Side::Ask, 10, 1),
                                    market(Side::Bid, 5, 2)};
  const auto out = replay(evs);
  const auto built = build_dataset(*find_model("imb1_e_es"), out);
  ASSERT_EQ(built.data.size(), 1u);
  EXPECT_DOUBLE_EQ(built.data.row(0)[1], imbalance(30, 40));
  EXPECT_EQ(built.data.row(0)[2], -1.0);
  EXPECT_EQ(built.data.side[0], OrderSide::MB);
}

TEST(BuildDataset, SharedMaskAlignsLagModels) {
  const auto a = arrivals(0, 30, 4);
  DatasetOptions opts;
  opts.min_order_index = 3;
  const auto shallow = build_dataset(*find_model("imb1_e_es_la1"), a, opts);
  const auto deep = build_dataset(*find_model("imb1_e_es_la3"), a, opts);
  EXPECT_EQ(shallow.data.order_index, deep.data.order_index);
  EXPECT_EQ(shallow.data.side, deep.data.side);
  EXPECT_EQ(deep.skipped_history, 0u);
  EXPECT_GT(deep.skipped_mask, 0u);
}
