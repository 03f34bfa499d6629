#pragma once

// Raw observation loading, the trading-calendar mask and cross-sectional
// snapshot assembly.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nonstat/errors.hpp"

namespace nonstat {

struct ObservationRecord {
  std::int64_t timestamp = 0;  // epoch seconds, exchange-local
  std::string entity_id;
  double value = 0.0;  // volume-price, >= 0

  friend bool operator==(const ObservationRecord&, const ObservationRecord&) = default;
};

struct TradingCalendar {
  int session_open_minute = 540;
  int session_length_intervals = 39;
  int interval_minutes = 10;

  void validate() const {
    if (interval_minutes <= 0 || session_length_intervals <= 0 || session_open_minute < 0 ||
        session_open_minute >= 1440) {
      throw std::invalid_argument("TradingCalendar: nonpositive interval/session or open outside the day");
    }
    if (session_length_intervals * interval_minutes > 1440 - session_open_minute) {
      throw std::invalid_argument("TradingCalendar: session runs past midnight");
    }
  }
  std::int64_t interval_seconds() const { return std::int64_t{interval_minutes} * 60; }
  int session_minutes() const { return session_length_intervals * interval_minutes; }
};

namespace detail {
inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}
inline std::int64_t floor_mod(std::int64_t a, std::int64_t b) { return a - floor_div(a, b) * b; }
}  // namespace detail

/// Minutes since session open: (minute-of-day mod 1440) - open. Negative
/// before the open.
inline int intraday_minute(std::int64_t t, const TradingCalendar& cal) {
  const std::int64_t minute_of_day = detail::floor_mod(detail::floor_div(t, 60), 1440);
  return static_cast<int>(minute_of_day) - cal.session_open_minute;
}

inline bool in_session(std::int64_t t, const TradingCalendar& cal) {
  const int td = intraday_minute(t, cal);
  return td >= 0 && td < cal.session_minutes();
}

inline std::int64_t day_of(std::int64_t t) { return detail::floor_div(t, 86400); }

/// Session slot index of a trading time (0 .. session_length_intervals-1).
inline int slot_of(std::int64_t t, const TradingCalendar& cal) { return intraday_minute(t, cal) / cal.interval_minutes; }

inline std::string iso_date(std::int64_t epoch_day) {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{days{epoch_day}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

struct RowError {
  std::size_t line = 0;
  std::string message;
};

struct LoadResult {
  std::vector<ObservationRecord> records;
  std::vector<RowError> errors;
};

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) field.remove_suffix(1);
    out.push_back(field);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

}  // namespace detail

/// Parse CSV with header `timestamp,entity_id,value` or
/// `timestamp,entity_id,volume,price` (value = volume * price). Lines
/// starting with '#' are comments. Bad rows are reported with their line
/// number and skipped; a bad stream or header throws InputError.
inline LoadResult load_records(std::istream& in) {
  if (!in) throw InputError("unreadable input stream");
  LoadResult result;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  bool volume_price = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto fields = detail::split_csv(line);
    if (!have_header) {
      if (fields.size() == 3 && fields[0] == "timestamp" && fields[1] == "entity_id" && fields[2] == "value") {
        volume_price = false;
      } else if (fields.size() == 4 && fields[0] == "timestamp" && fields[1] == "entity_id" && fields[2] == "volume" &&
                 fields[3] == "price") {
        volume_price = true;
      } else {
        throw InputError("missing header: expected timestamp,entity_id,value or timestamp,entity_id,volume,price");
      }
      have_header = true;
      continue;
    }
    const std::size_t expected = volume_price ? 4 : 3;
    if (fields.size() != expected) {
      result.errors.push_back({line_no, "expected " + std::to_string(expected) + " fields"});
      continue;
    }
    double ts = 0.0;
    if (!detail::parse_double(fields[0], ts) || !std::isfinite(ts)) {
      result.errors.push_back({line_no, "bad timestamp"});
      continue;
    }
    if (fields[1].empty()) {
      result.errors.push_back({line_no, "empty entity_id"});
      continue;
    }
    double value = 0.0;
    if (volume_price) {
      double volume = 0.0, price = 0.0;
      if (!detail::parse_double(fields[2], volume) || !detail::parse_double(fields[3], price)) {
        result.errors.push_back({line_no, "bad volume or price"});
        continue;
      }
      if (volume < 0.0 || price < 0.0) {
        result.errors.push_back({line_no, "negative volume or price"});
        continue;
      }
      value = volume * price;
    } else if (!detail::parse_double(fields[2], value)) {
      result.errors.push_back({line_no, "bad value"});
      continue;
    }
    if (!std::isfinite(value)) {
      result.errors.push_back({line_no, "non-finite value"});
      continue;
    }
    if (value < 0.0) {
      result.errors.push_back({line_no, "negative value"});
      continue;
    }
    result.records.push_back({static_cast<std::int64_t>(std::floor(ts)), std::string(fields[1]), value});
  }
  if (in.bad()) throw InputError("read error on input stream");
  if (!have_header) throw InputError("missing header: empty input");
  return result;
}

enum class SlotState { Trading, Closed };

/// Time-ordered cross-sections. Closed entries carry no values.
struct SnapshotSeries {
  std::vector<std::int64_t> times;
  std::vector<std::vector<double>> snapshots;
  std::vector<SlotState> mask;

  std::size_t size() const { return times.size(); }
  std::size_t trading_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), SlotState::Trading));
  }
  friend bool operator==(const SnapshotSeries&, const SnapshotSeries&) = default;
};

struct AssemblyOptions {
  /// A day is dropped when any observed session bucket has fewer entities.
  std::size_t min_entities = 10;
};

struct AssemblyReport {
  std::size_t kept = 0;     // records contributing to trading snapshots
  std::size_t masked = 0;   // records outside the session, or zero-valued
  std::size_t dropped = 0;  // records in days dropped for undersized buckets
  std::vector<std::int64_t> dropped_days;
};

struct AssembleResult {
  SnapshotSeries series;
  AssemblyReport report;
};

/// Floor records onto the interval grid, mask buckets outside the session
/// and drop whole days with an undersized session bucket. Values inside a
/// bucket are summed per entity and ordered by entity id.
inline AssembleResult assemble_snapshots(const std::vector<ObservationRecord>& records, const TradingCalendar& cal,
                                         const AssemblyOptions& opt = {}) {
  cal.validate();
  if (records.empty()) throw InsufficientData("no records to assemble");
  const std::int64_t dt = cal.interval_seconds();

  struct Bucket {
    std::map<std::string, double> by_entity;
    std::size_t records = 0;
    std::size_t zero_records = 0;
  };
  std::map<std::int64_t, Bucket> buckets;
  for (const auto& r : records) {
    auto& b = buckets[detail::floor_div(r.timestamp, dt) * dt];
    ++b.records;
    if (r.value > 0.0) {
      b.by_entity[r.entity_id] += r.value;
    } else {
      ++b.zero_records;
    }
  }

  std::map<std::int64_t, bool> day_ok;
  for (const auto& [t, b] : buckets) {
    auto [it, inserted] = day_ok.try_emplace(day_of(t), true);
    if (in_session(t, cal) && b.by_entity.size() < opt.min_entities) it->second = false;
  }

  AssembleResult out;
  for (const auto& [day, ok] : day_ok) {
    if (!ok) out.report.dropped_days.push_back(day);
  }
  for (const auto& [t, b] : buckets) {
    const bool trading = in_session(t, cal);
    if (!trading) {
      out.report.masked += b.records;
      if (!day_ok[day_of(t)]) continue;
      out.series.times.push_back(t);
      out.series.snapshots.emplace_back();
      out.series.mask.push_back(SlotState::Closed);
      continue;
    }
    if (!day_ok[day_of(t)]) {
      out.report.dropped += b.records;
      continue;
    }
    out.report.masked += b.zero_records;
    out.report.kept += b.records - b.zero_records;
    std::vector<double> values;
    values.reserve(b.by_entity.size());
    for (const auto& [id, v] : b.by_entity) values.push_back(v);
    out.series.times.push_back(t);
    out.series.snapshots.push_back(std::move(values));
    out.series.mask.push_back(SlotState::Trading);
  }
  if (out.series.trading_count() == 0) throw InsufficientData("no trading snapshots");
  return out;
}

/// Records that reassemble into `series`: trading values under synthetic
/// entity ids, closed buckets as a single zero-valued record.
inline std::vector<ObservationRecord> flatten(const SnapshotSeries& series) {
  std::vector<ObservationRecord> out;
  char id[32];
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series.mask[i] == SlotState::Closed) {
      out.push_back({series.times[i], "_closed", 0.0});
      continue;
    }
    for (std::size_t j = 0; j < series.snapshots[i].size(); ++j) {
      std::snprintf(id, sizeof id, "e%07zu", j);
      out.push_back({series.times[i], id, series.snapshots[i][j]});
    }
  }
  return out;
}

inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Dataset CSV in the ingest schema (timestamp,entity_id,value).
inline void write_records_csv(std::ostream& os, const SnapshotSeries& series) {
  os << "timestamp,entity_id,value\n";
  char id[32];
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series.mask[i] != SlotState::Trading) continue;
    for (std::size_t j = 0; j < series.snapshots[i].size(); ++j) {
      std::snprintf(id, sizeof id, "e%07zu", j);
      os << series.times[i] << ',' << id << ',' << format_double(series.snapshots[i][j]) << '\n';
    }
  }
}

/// One JSON document per day: {date, times, snapshots, mask}. Floats use
/// 17 significant digits.
inline std::map<std::int64_t, std::string> snapshot_store_json(const SnapshotSeries& series) {
  std::map<std::int64_t, std::vector<std::size_t>> by_day;
  for (std::size_t i = 0; i < series.size(); ++i) by_day[day_of(series.times[i])].push_back(i);
  std::map<std::int64_t, std::string> docs;
  for (const auto& [day, idx] : by_day) {
    std::ostringstream os;
    os << "{\"date\":\"" << iso_date(day) << "\",\"times\":[";
    for (std::size_t k = 0; k < idx.size(); ++k) os << (k ? "," : "") << series.times[idx[k]];
    os << "],\"snapshots\":[";
    for (std::size_t k = 0; k < idx.size(); ++k) {
      os << (k ? "," : "") << '[';
      const auto& snap = series.snapshots[idx[k]];
      for (std::size_t j = 0; j < snap.size(); ++j) os << (j ? "," : "") << format_double(snap[j]);
      os << ']';
    }
    os << "],\"mask\":[";
    for (std::size_t k = 0; k < idx.size(); ++k) {
      os << (k ? "," : "") << (series.mask[idx[k]] == SlotState::Trading ? "\"trading\"" : "\"closed\"");
    }
    os << "]}\n";
    docs.emplace(day, os.str());
  }
  return docs;
}

/// Append one per-day document to `series`.
inline void read_snapshot_day(std::istream& in, SnapshotSeries& series) {
  nlohmann::json doc;
  try {
    in >> doc;
    const auto& times = doc.at("times");
    const auto& snaps = doc.at("snapshots");
    const auto& mask = doc.at("mask");
    if (times.size() != snaps.size() || times.size() != mask.size()) {
      throw InputError("snapshot document: array lengths differ");
    }
    for (std::size_t i = 0; i < times.size(); ++i) {
      series.times.push_back(times[i].get<std::int64_t>());
      series.snapshots.push_back(snaps[i].get<std::vector<double>>());
      series.mask.push_back(mask[i].get<std::string>() == "trading" ? SlotState::Trading : SlotState::Closed);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("snapshot document: ") + e.what());
  }
}

}  // namespace nonstat
