#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ratioflow {

inline constexpr std::string_view kVersion = "0.1.0";

using Timestamp = std::int64_t;  // nanoseconds since session open
using Price = std::int64_t;      // integer ticks
using Quantity = std::int64_t;   // shares
using SessionId = std::int32_t;

enum class Side : std::uint8_t { Ask, Bid };

/// Side of a market order, named by the book side it consumes.
/// MA hits the ask (a buy), MB hits the bid (a sell).
enum class OrderSide : std::uint8_t { MA, MB };

constexpr OrderSide to_order_side(Side s) noexcept {
  return s == Side::Ask ? OrderSide::MA : OrderSide::MB;
}
constexpr Side to_book_side(OrderSide s) noexcept {
  return s == OrderSide::MA ? Side::Ask : Side::Bid;
}
constexpr OrderSide opposite(OrderSide s) noexcept {
  return s == OrderSide::MA ? OrderSide::MB : OrderSide::MA;
}
constexpr std::string_view to_string(OrderSide s) noexcept {
  return s == OrderSide::MA ? "MA" : "MB";
}

enum class ErrorCode {
  ParseError,
  OutOfOrder,
  CrossedBook,
  NegativeQuantity,
  EmptySide,
  InsufficientHistory,
  DimensionMismatch,
  EmptyDataset,
  SingularHessian,
  MixedT,
  InsufficientSessions,
  ConfigInvalid,
  EnvelopeViolation,
  UnknownModel,
};

constexpr std::string_view to_string(ErrorCode c) noexcept {
  switch (c) {
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::OutOfOrder: return "OutOfOrder";
    case ErrorCode::CrossedBook: return "CrossedBook";
    case ErrorCode::NegativeQuantity: return "NegativeQuantity";
    case ErrorCode::EmptySide: return "EmptySide";
    case ErrorCode::InsufficientHistory: return "InsufficientHistory";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::SingularHessian: return "SingularHessian";
    case ErrorCode::MixedT: return "MixedT";
    case ErrorCode::InsufficientSessions: return "InsufficientSessions";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::EnvelopeViolation: return "EnvelopeViolation";
    case ErrorCode::UnknownModel: return "UnknownModel";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace ratioflow
