#include <catch_amalgamated.hpp>

#include <sstream>

#include "nonstat/ingest.hpp"

using namespace nonstat;

namespace {

constexpr std::int64_t kDay = 19723;  // 2024-01-01
std::int64_t at(std::int64_t day, int minute_of_day) { return day * 86400 + std::int64_t{minute_of_day} * 60; }

std::vector<ObservationRecord> grid_records(int entities, int days, double base = 1.0) {
  std::vector<ObservationRecord> r;
  for (int d = 0; d < days; ++d) {
    for (int slot = 0; slot < 39; ++slot) {
      for (int e = 0; e < entities; ++e) {
        r.push_back({at(kDay + d, 540 + 10 * slot), "id" + std::to_string(e), base + e + slot});
      }
    }
  }
  return r;
}

}  // namespace

TEST_CASE("load_records parses value and volume-price schemas") {
  std::istringstream a("timestamp,entity_id,value\n0,x,1.5\n60,y,2\n# comment\n120,z,0\n");
  const auto ra = load_records(a);
  CHECK(ra.records.size() == 3);
  CHECK(ra.errors.empty());
  CHECK(ra.records[1].entity_id == "y");
  CHECK(ra.records[0].value == 1.5);

  std::istringstream b("timestamp,entity_id,volume,price\r\n10,x,100,2.5\r\n");
  const auto rb = load_records(b);
  REQUIRE(rb.records.size() == 1);
  CHECK(rb.records[0].value == 250.0);
}

TEST_CASE("load_records rejects bad rows with line numbers") {
  std::istringstream in("timestamp,entity_id,value\n0,x,1\n5,y,-1\n6,z,abc\n7,,1\n8,w\nnan,q,1\n9,v,inf\n");
  const auto r = load_records(in);
  CHECK(r.records.size() == 1);
  REQUIRE(r.errors.size() == 6);
  CHECK(r.errors[0].line == 3);
  CHECK(r.errors[0].message == "negative value");
  CHECK(r.errors[1].line == 4);
  CHECK(r.errors[2].line == 5);
  CHECK(r.errors[3].line == 6);
  CHECK(r.errors[4].line == 7);
  CHECK(r.errors[5].line == 8);
}

TEST_CASE("load_records requires a header") {
  std::istringstream empty("");
  CHECK_THROWS_AS(load_records(empty), InputError);
  std::istringstream wrong("a,b,c\n1,2,3\n");
  CHECK_THROWS_AS(load_records(wrong), InputError);
}

TEST_CASE("intraday minute and session mask") {
  const TradingCalendar cal;
  CHECK(intraday_minute(at(kDay, 540), cal) == 0);
  CHECK(intraday_minute(at(kDay + 1, 600), cal) == 60);
  CHECK(intraday_minute(at(kDay, 530), cal) == -10);
  CHECK(intraday_minute(-86400 + 540 * 60, cal) == 0);
  CHECK(in_session(at(kDay, 540), cal));
  CHECK(in_session(at(kDay, 540 + 389), cal));
  CHECK_FALSE(in_session(at(kDay, 540 + 390), cal));
  CHECK(slot_of(at(kDay, 540 + 25), cal) == 2);
  CHECK(iso_date(kDay) == "2024-01-01");
  CHECK(iso_date(0) == "1970-01-01");
}

TEST_CASE("night-only records leave no trading snapshots") {
  std::vector<ObservationRecord> r;
  for (int e = 0; e < 20; ++e) r.push_back({at(kDay, 180), "e" + std::to_string(e), 1.0});
  CHECK_THROWS_WITH(assemble_snapshots(r, TradingCalendar{}), "no trading snapshots");
}

TEST_CASE("one trading and one masked record") {
  const std::vector<ObservationRecord> r = {{at(kDay, 580), "a", 2.0}, {at(kDay, 1200), "a", 3.0}};
  const auto res = assemble_snapshots(r, TradingCalendar{}, AssemblyOptions{1});
  REQUIRE(res.series.size() == 2);
  CHECK(res.series.trading_count() == 1);
  CHECK(res.series.mask[0] == SlotState::Trading);
  CHECK(res.series.times[0] == at(kDay, 580));
  CHECK(res.series.mask[1] == SlotState::Closed);
  CHECK(res.report.kept == 1);
  CHECK(res.report.masked == 1);
}

TEST_CASE("two entities over two days give 78 snapshots of size two") {
  const auto res = assemble_snapshots(grid_records(2, 2), TradingCalendar{}, AssemblyOptions{2});
  CHECK(res.series.size() == 78);
  CHECK(res.series.trading_count() == 78);
  for (const auto& s : res.series.snapshots) CHECK(s.size() == 2);
  CHECK(res.report.dropped_days.empty());
}

TEST_CASE("records inside a bucket are floored and summed per entity") {
  const std::vector<ObservationRecord> r = {
      {at(kDay, 540) + 59, "a", 1.0}, {at(kDay, 545), "a", 2.0}, {at(kDay, 549) + 59, "b", 4.0}, {at(kDay, 550), "b", 8.0}};
  const auto res = assemble_snapshots(r, TradingCalendar{}, AssemblyOptions{1});
  REQUIRE(res.series.size() == 2);
  CHECK(res.series.snapshots[0] == std::vector<double>{3.0, 4.0});
  CHECK(res.series.snapshots[1] == std::vector<double>{8.0});
}

TEST_CASE("a day with an undersized bucket is dropped and reported") {
  auto r = grid_records(12, 3);
  // Day 2 keeps only five entities in one slot.
  std::erase_if(r, [](const ObservationRecord& x) {
    return x.timestamp == at(kDay + 1, 540 + 70) && x.entity_id != "id0" && x.entity_id != "id1" &&
           x.entity_id != "id2" && x.entity_id != "id3" && x.entity_id != "id4";
  });
  const auto res = assemble_snapshots(r, TradingCalendar{}, AssemblyOptions{10});
  CHECK(res.series.size() == 78);
  REQUIRE(res.report.dropped_days.size() == 1);
  CHECK(iso_date(res.report.dropped_days[0]) == "2024-01-02");
  CHECK(res.report.dropped == 38 * 12 + 5);
  CHECK(res.report.kept == 2 * 39 * 12);
}

TEST_CASE("zero values are masked out of snapshots") {
  std::vector<ObservationRecord> r = {{at(kDay, 540), "a", 0.0}, {at(kDay, 540), "b", 5.0}};
  const auto res = assemble_snapshots(r, TradingCalendar{}, AssemblyOptions{1});
  CHECK(res.series.snapshots[0] == std::vector<double>{5.0});
  CHECK(res.report.masked == 1);
}

TEST_CASE("flatten and CSV output round-trip through assembly") {
  auto base = assemble_snapshots(grid_records(3, 1, 0.1), TradingCalendar{}, AssemblyOptions{3}).series;
  base.snapshots[4][1] = 1.0 / 3.0;
  const auto again = assemble_snapshots(flatten(base), TradingCalendar{}, AssemblyOptions{3}).series;
  CHECK(again == base);

  std::ostringstream os;
  write_records_csv(os, base);
  std::istringstream is(os.str());
  const auto loaded = load_records(is);
  CHECK(loaded.errors.empty());
  CHECK(assemble_snapshots(loaded.records, TradingCalendar{}, AssemblyOptions{3}).series == base);
}

TEST_CASE("per-day JSON documents round-trip") {
  std::vector<ObservationRecord> r = grid_records(2, 2, 0.7);
  r.push_back({at(kDay, 1300), "a", 1.0});
  const auto series = assemble_snapshots(r, TradingCalendar{}, AssemblyOptions{2}).series;
  const auto docs = snapshot_store_json(series);
  CHECK(docs.size() == 2);
  SnapshotSeries back;
  for (const auto& [day, text] : docs) {
    std::istringstream in(text);
    read_snapshot_day(in, back);
  }
  CHECK(back == series);
  std::istringstream bad("{\"times\":[1]}");
  CHECK_THROWS_AS(read_snapshot_day(bad, back), InputError);
}

TEST_CASE("format_double is exact and handles non-finite values") {
  CHECK(format_double(0.1) == "0.10000000000000001");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(format_double(std::nan("")) == "nan");
}
