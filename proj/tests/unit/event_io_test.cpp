#include <gtest/gtest.h>
#include <zlib.h>

#include <ratioflow/event_io.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "helpers.hpp"

using namespace ratioflow;
using namespace rf_test;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ratioflow_io_" + std::to_string(::getpid()) + "_" + name);
}

std::vector<OrderEvent> parse_all(EventFormat fmt, std::string_view text, std::size_t chunk) {
  EventParser p(fmt);
  std::vector<OrderEvent> out;
  auto cb = [&](const OrderEvent& e) { out.push_back(e); };
  for (std::size_t i = 0; i < text.size(); i += chunk) p.feed(text.substr(i, chunk), cb);
  p.finish(cb);
  return out;
}

const std::vector<OrderEvent> kSample{insert(Side::Ask, 1001, 300, 5, 0), insert(Side::Bid, 999, 200, 6, 0),
                                      cancel(Side::Ask, 1001, 100, 7, 0), market(Side::Ask, 150, 9, 0),
                                      insert(Side::Bid, 500, 1, 0, 3)};

}  // namespace

TEST(EventIo, CsvLine) {
  const auto ev = parse_csv_line("3,1500,M,B,0,40", 1);
  EXPECT_EQ(ev, (OrderEvent{3, 1500, EventKind::MarketOrder, Side::Bid, 0, 40}));
}

TEST(EventIo, CsvErrorsNameTheLine) {
  for (std::string_view bad : {"1,2,L,A,3", "1,2,X,A,3,4", "1,2,L,Q,3,4", "1,2,L,A,3,0", "1,x,L,A,3,4",
                               "1,2,L,A,3,4,5", "1,-2,L,A,3,4"}) {
    try {
      parse_csv_line(bad, 17);
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::ParseError);
      EXPECT_NE(std::string(e.what()).find("line 17"), std::string::npos) << e.what();
    }
  }
}

TEST(EventIo, NdjsonLine) {
  const auto ev = parse_ndjson_line(
      R"({"session_id":2,"timestamp_ns":77,"kind":"C","side":"A","price_ticks":1010,"quantity":5})", 1);
  EXPECT_EQ(ev, (OrderEvent{2, 77, EventKind::Cancel, Side::Ask, 1010, 5}));
  EXPECT_THROW(parse_ndjson_line(R"({"session_id":2})", 4), Error);
  EXPECT_THROW(parse_ndjson_line("{", 4), Error);
}

TEST(EventIo, CsvRoundTripAnyChunking) {
  std::ostringstream os;
  write_events_csv(os, kSample);
  const auto text = os.str();
  for (std::size_t chunk : {1u, 3u, 7u, 64u, 4096u}) EXPECT_EQ(parse_all(EventFormat::Csv, text, chunk), kSample);
}

TEST(EventIo, NdjsonRoundTrip) {
  std::ostringstream os;
  write_events_ndjson(os, kSample);
  EXPECT_EQ(parse_all(EventFormat::Ndjson, os.str(), 5), kSample);
}

TEST(EventIo, HeaderRequired) {
  EXPECT_THROW(parse_all(EventFormat::Csv, "1,2,L,A,3,4\n", 100), Error);
  EXPECT_THROW(parse_all(EventFormat::Csv, "", 100), Error);
  const std::string ok = std::string(kEventCsvHeader) + "\r\n# comment\n\n1,2,L,A,3,4\r\n";
  EXPECT_EQ(parse_all(EventFormat::Csv, ok, 100).size(), 1u);
}

TEST(EventIo, FormatSniffing) {
  EXPECT_EQ(format_for_path("a/b.csv"), EventFormat::Csv);
  EXPECT_EQ(format_for_path("a/b.csv.gz"), EventFormat::Csv);
  EXPECT_EQ(format_for_path("b.ndjson"), EventFormat::Ndjson);
  EXPECT_EQ(format_for_path("b.jsonl.gz"), EventFormat::Ndjson);
}

TEST(EventIo, FilesPlainAndGzip) {
  std::ostringstream os;
  write_events_csv(os, kSample);
  const auto plain = temp_path("events.csv");
  std::ofstream(plain) << os.str();
  EXPECT_EQ(read_events(plain), kSample);

  const auto gz = temp_path("events.csv.gz");
  gzFile f = gzopen(gz.c_str(), "wb");
  ASSERT_NE(f, nullptr);
  gzwrite(f, os.str().data(), static_cast<unsigned>(os.str().size()));
  gzclose(f);
  EXPECT_EQ(read_events(gz), kSample);

  std::filesystem::remove(plain);
  std::filesystem::remove(gz);
  EXPECT_THROW(read_events(temp_path("missing.csv")), Error);
}

TEST(EventIo, CallbackReceivesSourceLines) {
  EventParser p(EventFormat::Csv);
  std::vector<std::size_t> lines;
  const std::string text = std::string(kEventCsvHeader) + "\n# note\n1,2,L,A,3,4\n\n1,3,L,B,2,4\n";
  auto cb = [&](const OrderEvent&, std::size_t line) { lines.push_back(line); };
  p.feed(text, cb);
  p.finish(cb);
  EXPECT_EQ(lines, (std::vector<std::size_t>{3, 5}));
}
