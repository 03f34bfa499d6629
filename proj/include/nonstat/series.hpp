#pragma once

// Regularly sampled scalar series split into gap-free segments.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace nonstat {

struct SegmentedSeries {
  std::vector<double> values;
  std::vector<std::uint32_t> segment;  // nondecreasing segment ids
  double dt = 1.0;                     // sampling step in seconds

  std::size_t size() const { return values.size(); }

  /// True when samples i and i + lag lie in the same segment. Segments
  /// are contiguous, so comparing the end points suffices.
  bool same_segment(std::size_t i, std::size_t lag) const {
    return i + lag < values.size() && segment[i] == segment[i + lag];
  }

  /// A single gap-free segment.
  static SegmentedSeries contiguous(std::vector<double> v, double dt = 1.0) {
    if (!(dt > 0.0)) throw std::invalid_argument("SegmentedSeries: dt must be positive");
    SegmentedSeries s;
    s.segment.assign(v.size(), 0);
    s.values = std::move(v);
    s.dt = dt;
    return s;
  }
};

/// Builds a segmented series from timestamped samples. A new segment
/// starts wherever consecutive times are not exactly `dt_seconds` apart.
/// Non-finite values are dropped and also break the segment.
inline SegmentedSeries segment_series(std::span<const std::int64_t> times, std::span<const double> values,
                                      std::int64_t dt_seconds) {
  if (times.size() != values.size()) throw std::invalid_argument("segment_series: size mismatch");
  if (dt_seconds <= 0) throw std::invalid_argument("segment_series: dt must be positive");
  SegmentedSeries s;
  s.dt = static_cast<double>(dt_seconds);
  std::uint32_t seg = 0;
  bool have_prev = false;
  std::int64_t prev_t = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!std::isfinite(values[i])) {
      have_prev = false;
      continue;
    }
    if (have_prev && times[i] - prev_t != dt_seconds) ++seg;
    if (!have_prev && !s.values.empty()) ++seg;
    s.values.push_back(values[i]);
    s.segment.push_back(seg);
    prev_t = times[i];
    have_prev = true;
  }
  return s;
}

}  // namespace nonstat
