#pragma once

#include <ratioflow/book.hpp>

#include <vector>

namespace rf_test {

using namespace ratioflow;

inline OrderEvent insert(Side s, Price p, Quantity q, Timestamp t = 0, SessionId k = 0) {
  return {k, t, EventKind::LimitInsert, s, p, q};
}
inline OrderEvent cancel(Side s, Price p, Quantity q, Timestamp t = 0, SessionId k = 0) {
  return {k, t, EventKind::Cancel, s, p, q};
}
inline OrderEvent market(Side s, Quantity q, Timestamp t = 0, SessionId k = 0) {
  return {k, t, EventKind::MarketOrder, s, 0, q};
}

inline BookState book_of(const std::vector<OrderEvent>& evs) {
  BookState b;
  for (const auto& e : evs) b.apply(e);
  return b;
}

}  // namespace rf_test
