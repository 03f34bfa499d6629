#pragma once

// Weighted |log-ratio| divergence between a fitted density and the
// empirical density of a snapshot, per-snapshot model ranking and
// aggregate statistics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nonstat/distributions.hpp"
#include "nonstat/ecdf_fit.hpp"
#include "nonstat/numeric.hpp"

namespace nonstat {

enum class WeightKind { CenterWeighted, TailWeighted };
enum class TailRestriction { None, AboveMedian };

struct WeightScheme {
  WeightKind kind = WeightKind::CenterWeighted;
  TailRestriction restriction = TailRestriction::None;

  static WeightScheme center() { return {WeightKind::CenterWeighted, TailRestriction::None}; }
  static WeightScheme tail() { return {WeightKind::TailWeighted, TailRestriction::AboveMedian}; }

  std::string name() const {
    std::string n = kind == WeightKind::CenterWeighted ? "center" : "tail";
    if (restriction == TailRestriction::AboveMedian) n += "_above_median";
    return n;
  }
  friend bool operator==(const WeightScheme&, const WeightScheme&) = default;
};

inline constexpr double kDensityFloor = 1e-300;

struct DivergenceValue {
  double value = 0.0;
  std::size_t points = 0;   // support points summed over
  std::size_t floored = 0;  // points where P or Q hit the floor
};

/// Sum over i of |ln(P_i / Q_i)| F_i ds_i with F = P (center) or 1/P
/// (tail). P is the model density, Q the empirical one. Both are floored
/// at kDensityFloor. Points before `first` are skipped.
inline DivergenceValue weighted_divergence(std::span<const double> p, std::span<const double> q,
                                           std::span<const double> widths, WeightKind kind, std::size_t first = 0) {
  if (p.size() != q.size() || p.size() != widths.size()) {
    throw std::invalid_argument("weighted_divergence: length mismatch");
  }
  DivergenceValue out;
  CompensatedSum sum;
  bool any_weight = false;
  for (std::size_t i = first; i < p.size(); ++i) {
    double pi = p[i], qi = q[i];
    if (widths[i] > 0.0 && (kind == WeightKind::TailWeighted || pi > 0.0)) any_weight = true;
    if (!(pi >= kDensityFloor) || !(qi >= kDensityFloor)) ++out.floored;
    pi = std::max(pi, kDensityFloor);
    qi = std::max(qi, kDensityFloor);
    const double f = kind == WeightKind::CenterWeighted ? pi : 1.0 / pi;
    sum += std::fabs(std::log(pi / qi)) * f * widths[i];
    ++out.points;
  }
  if (!any_weight) throw std::invalid_argument("weighted_divergence: all weights are zero");
  out.value = sum.value();
  return out;
}

/// First support index strictly above the sample median, or 0 without a
/// restriction.
inline std::size_t restriction_start(const EmpiricalCDF& e, TailRestriction r) {
  if (r == TailRestriction::None) return 0;
  const auto it = std::upper_bound(e.support.begin(), e.support.end(), e.sample_median);
  return static_cast<std::size_t>(it - e.support.begin());
}

/// Divergence of one fitted model against an empirical CDF.
inline DivergenceValue model_divergence(const ModelParams& params, const EmpiricalCDF& e, WeightScheme scheme) {
  const auto q = empirical_density(e);
  std::vector<double> p(e.support.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = pdf(params, e.support[i]);
  return weighted_divergence(p, q, e.bin_widths, scheme.kind, restriction_start(e, scheme.restriction));
}

struct RankEntry {
  double divergence = std::numeric_limits<double>::infinity();
  int rank = 4;
  std::size_t floored = 0;
  bool scored = false;  // false for missing or non-converged fits
};

using SnapshotRanks = std::array<RankEntry, 4>;

/// Ranks 1..4 by ascending divergence, ties broken by family order.
inline void assign_ranks(SnapshotRanks& r) {
  std::array<std::size_t, 4> order{0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return r[a].divergence < r[b].divergence; });
  for (std::size_t pos = 0; pos < 4; ++pos) r[order[pos]].rank = static_cast<int>(pos) + 1;
}

/// Scores the four fits of one snapshot. Missing or non-converged fits
/// are placed last with divergence +inf.
inline SnapshotRanks rank_snapshot(const std::array<FitCell, 4>& fits, const EmpiricalCDF& e, WeightScheme scheme) {
  SnapshotRanks r;
  const auto q = empirical_density(e);
  const std::size_t first = restriction_start(e, scheme.restriction);
  std::vector<double> p(e.support.size());
  for (auto f : kAllFamilies) {
    const auto& cell = fits[family_index(f)];
    auto& entry = r[family_index(f)];
    if (!cell.fit || !cell.fit->converged) continue;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = pdf(cell.fit->params, e.support[i]);
    try {
      const auto d = weighted_divergence(p, q, e.bin_widths, scheme.kind, first);
      entry.divergence = d.value;
      entry.floored = d.floored;
      entry.scored = true;
    } catch (const std::invalid_argument&) {
    }
  }
  assign_ranks(r);
  return r;
}

struct RankTable {
  WeightScheme scheme;
  std::vector<std::int64_t> times;
  std::vector<SnapshotRanks> ranks;
};

struct FamilyAggregate {
  double mean = std::nan("");
  double std = std::nan("");
  std::size_t scored = 0;
  std::array<std::size_t, 4> rank_histogram{};  // [r-1] = snapshots at rank r
};

/// Per-family mean and population std over scored snapshots, plus the
/// rank-frequency histogram.
inline std::array<FamilyAggregate, 4> aggregate_ranks(const RankTable& table) {
  if (table.ranks.empty()) throw std::invalid_argument("aggregate_ranks: empty table");
  std::array<FamilyAggregate, 4> out;
  for (auto f : kAllFamilies) {
    const std::size_t fi = family_index(f);
    std::vector<double> vals;
    for (const auto& row : table.ranks) {
      ++out[fi].rank_histogram[static_cast<std::size_t>(row[fi].rank - 1)];
      if (row[fi].scored) vals.push_back(row[fi].divergence);
    }
    out[fi].scored = vals.size();
    if (!vals.empty()) {
      out[fi].mean = mean(vals);
      out[fi].std = std::isinf(out[fi].mean) ? out[fi].mean : stddev(vals);
    }
  }
  return out;
}

/// Ranks every snapshot of a series under one scheme.
inline RankTable rank_all(const SnapshotSeries& series, const ParamTimeSeries& params, WeightScheme scheme,
                          std::size_t min_entities = 1) {
  RankTable table;
  table.scheme = scheme;
  std::size_t k = 0;
  for (std::size_t i = 0; i < series.size() && k < params.size(); ++i) {
    if (series.mask[i] != SlotState::Trading) continue;
    if (series.times[i] != params.times[k]) continue;
    table.times.push_back(params.times[k]);
    try {
      const auto e = empirical_cdf(series.snapshots[i], min_entities);
      table.ranks.push_back(rank_snapshot(params.cells[k], e, scheme));
    } catch (const std::exception&) {
      SnapshotRanks empty;
      assign_ranks(empty);
      table.ranks.push_back(empty);
    }
    ++k;
  }
  return table;
}

namespace detail {
inline nlohmann::json json_number(double x) {
  if (std::isfinite(x)) return x;
  return format_double(x);
}
}  // namespace detail

/// {scheme, per_family: {name: {mean, std, rank_histogram}}, per_snapshot: [...]}
inline nlohmann::ordered_json rank_report_json(const RankTable& table) {
  nlohmann::ordered_json j;
  j["scheme"] = table.scheme.name();
  const auto agg = aggregate_ranks(table);
  nlohmann::ordered_json fam = nlohmann::ordered_json::object();
  for (auto f : kAllFamilies) {
    const auto& a = agg[family_index(f)];
    fam[std::string(family_name(f))] = {{"mean", detail::json_number(a.mean)},
                                        {"std", detail::json_number(a.std)},
                                        {"scored", a.scored},
                                        {"rank_histogram", a.rank_histogram}};
  }
  j["per_family"] = fam;
  nlohmann::ordered_json snaps = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < table.times.size(); ++i) {
    nlohmann::ordered_json div = nlohmann::ordered_json::object(), rk = nlohmann::ordered_json::object();
    for (auto f : kAllFamilies) {
      const auto& e = table.ranks[i][family_index(f)];
      div[std::string(family_name(f))] = detail::json_number(e.divergence);
      rk[std::string(family_name(f))] = e.rank;
    }
    snaps.push_back({{"time", table.times[i]}, {"divergence", div}, {"rank", rk}});
  }
  j["per_snapshot"] = snaps;
  return j;
}

/// CSV rows: time,family,scheme,divergence,rank.
inline void write_rank_csv(std::ostream& os, std::span<const RankTable> tables, bool header = true) {
  if (header) os << "time,family,scheme,divergence,rank\n";
  for (const auto& t : tables) {
    for (std::size_t i = 0; i < t.times.size(); ++i) {
      for (auto f : kAllFamilies) {
        const auto& e = t.ranks[i][family_index(f)];
        os << t.times[i] << ',' << family_name(f) << ',' << t.scheme.name() << ',' << format_double(e.divergence)
           << ',' << e.rank << '\n';
      }
    }
  }
}

}  // namespace nonstat
