#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "odcast/graphs.hpp"
#include "odcast/tensor.hpp"

namespace odcast {

/// Days since 1970-01-01 for a proleptic Gregorian date.
int64_t days_from_civil(int year, int month, int day);
/// Inverse of days_from_civil, formatted "YYYY-MM-DD".
std::string civil_from_days(int64_t days);
/// Parses "YYYY-MM-DD"; returns nothing on malformed or impossible dates.
std::optional<int64_t> parse_date(const std::string& s);

/// A pickup instant reduced to what aggregation needs.
struct Timestamp {
  int64_t day = 0;       // days since epoch
  int minute_of_day = 0;
};

/// Accepts "YYYY-MM-DD HH:MM:SS" and ISO-8601 "YYYY-MM-DDTHH:MM:SS"
/// (seconds optional in both).
std::optional<Timestamp> parse_timestamp(const std::string& s);

/// Outcome counts of one ingestion run. rejected rows are malformed;
/// out_of_range rows parse but fall outside the configured date span;
/// residual rows are well-formed trips whose OD pair is not in the index.
struct IngestReport {
  size_t accepted = 0;
  size_t rejected = 0;
  size_t out_of_range = 0;
  size_t residual = 0;
  std::vector<std::pair<size_t, std::string>> reject_lines;  // capped sample

  static constexpr size_t kMaxRejectLines = 100;
};

/// Demand counts indexed [day][interval][pair]. Counts are non-negative
/// integers stored as doubles; the calendar is an unbroken day range
/// starting at first_day.
class DemandCube {
 public:
  DemandCube(size_t days, size_t intervals, size_t pairs, int64_t first_day, int interval_minutes);

  size_t days() const { return days_; }
  size_t intervals() const { return intervals_; }
  size_t pairs() const { return pairs_; }
  int64_t first_day() const { return first_day_; }
  int interval_minutes() const { return interval_minutes_; }
  std::string date_of_day(size_t d) const { return civil_from_days(first_day_ + static_cast<int64_t>(d)); }

  double at(size_t d, size_t t, size_t i) const;
  double& at(size_t d, size_t t, size_t i);
  const Tensor& values() const { return values_; }

  /// Total count over all cells.
  double total() const;

 private:
  size_t days_, intervals_, pairs_;
  int64_t first_day_;
  int interval_minutes_;
  Tensor values_;  // [D x T x N]
};

/// Counts trips into a cube over [first_day, last_day] inclusive.
/// interval_minutes must divide 1440. The trip file needs columns
/// pickup_datetime, PULocationID, DOLocationID.
DemandCube aggregate_demand(const std::filesystem::path& trips_csv, const ODPairIndex& pairs,
                            int interval_minutes, int64_t first_day, int64_t last_day,
                            IngestReport& report);

void save_cube(const std::filesystem::path& path, const DemandCube& cube);
DemandCube load_cube(const std::filesystem::path& path);

/// Per-pair history rows for the mobility graph: [N x (days*intervals)]
/// over the day range [day_begin, day_end).
Tensor pair_series(const DemandCube& cube, size_t day_begin, size_t day_end);

/// One supervised example: four demand lags per pair and the target
/// snapshot. Lag columns, in order: same interval one week back, same
/// interval one day back, two intervals back, one interval back.
struct TrainingInstance {
  Tensor features;  // [N x 4]
  Tensor target;    // [N]
  size_t day = 0;
  size_t interval = 0;
};

/// Builds the instance at (d, t), or nothing when history is missing.
/// With wrap_midnight the within-day lags cross into the previous day's
/// trailing intervals; without it, t < 2 is skipped.
std::optional<TrainingInstance> extract_window(const DemandCube& cube, size_t d, size_t t,
                                               bool wrap_midnight = true);

/// All valid instances in chronological (d, t) order. The cube must span
/// at least 8 days.
std::vector<TrainingInstance> build_dataset(const DemandCube& cube, bool wrap_midnight = true);

/// One lag cell address. Day is a cube day index and may fall outside the
/// cube (negative or past the end) when the window is incomplete.
struct LagCoord {
  int64_t day = 0;
  int64_t interval = 0;
};

/// The four cells feeding the feature columns of a window at (d, t), in
/// column order — which is also chronological order. Without wrap_midnight
/// the within-day lags stay on day d and go negative in interval when t < 2.
std::array<LagCoord, 4> window_lag_coordinates(int64_t d, int64_t t, int64_t intervals,
                                               bool wrap_midnight = true);

/// Chronological split: by leading fraction (ratio in (0,1)) or by last
/// training day (days since epoch). Either side empty is an error.
struct SplitPolicy {
  enum class Kind { kRatio, kBoundaryDay };
  Kind kind = Kind::kRatio;
  double ratio = 0.8;
  int64_t boundary_day = 0;
};

std::pair<std::vector<TrainingInstance>, std::vector<TrainingInstance>> split_dataset(
    std::vector<TrainingInstance> instances, const SplitPolicy& policy, const DemandCube& cube);

}  // namespace odcast
