#include "odcast/data.hpp"

#include <cmath>

#include "odcast/csv.hpp"
#include "odcast/errors.hpp"
#include "odcast/serialize.hpp"

namespace odcast {

namespace {

bool all_digits(const std::string& s, size_t from, size_t to) {
  for (size_t i = from; i < to; ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  return true;
}

int num(const std::string& s, size_t from, size_t len) {
  int v = 0;
  for (size_t i = from; i < from + len; ++i) v = v * 10 + (s[i] - '0');
  return v;
}

bool leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int days_in_month(int y, int m) {
  static const int lengths[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (m == 2 && leap(y)) return 29;
  return lengths[m - 1];
}

}  // namespace

int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                       static_cast<unsigned>(d) - 1u;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<int64_t>(doe) - 719468;
}

std::string civil_from_days(int64_t z) {
  z += 719468;
  const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const int64_t y = static_cast<int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  const int64_t year = y + (m <= 2);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02u", static_cast<long long>(year), m, d);
  return buf;
}

std::optional<int64_t> parse_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  if (!all_digits(s, 0, 4) || !all_digits(s, 5, 7) || !all_digits(s, 8, 10)) return std::nullopt;
  const int y = num(s, 0, 4), m = num(s, 5, 2), d = num(s, 8, 2);
  if (m < 1 || m > 12 || d < 1 || d > days_in_month(y, m)) return std::nullopt;
  return days_from_civil(y, m, d);
}

std::optional<Timestamp> parse_timestamp(const std::string& s) {
  // date, separator (' ' or 'T'), HH:MM with optional :SS
  if (s.size() < 16) return std::nullopt;
  if (s[10] != ' ' && s[10] != 'T') return std::nullopt;
  const auto day = parse_date(s.substr(0, 10));
  if (!day) return std::nullopt;
  if (s[13] != ':') return std::nullopt;
  if (!all_digits(s, 11, 13) || !all_digits(s, 14, 16)) return std::nullopt;
  const int hh = num(s, 11, 2), mm = num(s, 14, 2);
  if (hh > 23 || mm > 59) return std::nullopt;
  if (s.size() > 16) {
    if (s.size() != 19 || s[16] != ':' || !all_digits(s, 17, 19)) return std::nullopt;
    if (num(s, 17, 2) > 59) return std::nullopt;
  }
  return Timestamp{*day, hh * 60 + mm};
}

DemandCube::DemandCube(size_t days, size_t intervals, size_t pairs, int64_t first_day,
                       int interval_minutes)
    : days_(days),
      intervals_(intervals),
      pairs_(pairs),
      first_day_(first_day),
      interval_minutes_(interval_minutes),
      values_({days, intervals, pairs}) {
  if (interval_minutes <= 0 || 1440 % interval_minutes != 0) {
    throw ConfigError("interval length " + std::to_string(interval_minutes) +
                      " does not divide 1440 minutes");
  }
  if (intervals != static_cast<size_t>(1440 / interval_minutes)) {
    throw ConfigError("cube has " + std::to_string(intervals) + " intervals but " +
                      std::to_string(interval_minutes) + "-minute intervals need " +
                      std::to_string(1440 / interval_minutes));
  }
}

double DemandCube::at(size_t d, size_t t, size_t i) const {
  return values_[(d * intervals_ + t) * pairs_ + i];
}

double& DemandCube::at(size_t d, size_t t, size_t i) {
  return values_[(d * intervals_ + t) * pairs_ + i];
}

double DemandCube::total() const {
  double s = 0.0;
  for (size_t i = 0; i < values_.numel(); ++i) s += values_[i];
  return s;
}

DemandCube aggregate_demand(const std::filesystem::path& trips_csv, const ODPairIndex& pairs,
                            int interval_minutes, int64_t first_day, int64_t last_day,
                            IngestReport& report) {
  if (last_day < first_day) throw ConfigError("ingestion date range is empty");
  const size_t days = static_cast<size_t>(last_day - first_day + 1);
  if (interval_minutes <= 0 || 1440 % interval_minutes != 0) {
    throw ConfigError("interval length " + std::to_string(interval_minutes) +
                      " does not divide 1440 minutes");
  }
  const size_t intervals = static_cast<size_t>(1440 / interval_minutes);
  DemandCube cube(days, intervals, pairs.size(), first_day, interval_minutes);

  const CsvFile csv = read_csv(trips_csv);
  const size_t c_time = csv.column("pickup_datetime");
  const size_t c_pu = csv.column("PULocationID");
  const size_t c_do = csv.column("DOLocationID");
  const size_t need = std::max({c_time, c_pu, c_do}) + 1;

  auto reject = [&report](size_t line, const std::string& why) {
    ++report.rejected;
    if (report.reject_lines.size() < IngestReport::kMaxRejectLines) {
      report.reject_lines.emplace_back(line, why);
    }
  };

  for (size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    const size_t line = csv.line_numbers[r];
    if (row.size() < need) {
      reject(line, "expected at least " + std::to_string(need) + " fields, got " +
                       std::to_string(row.size()));
      continue;
    }
    const auto ts = parse_timestamp(row[c_time]);
    if (!ts) {
      reject(line, "bad pickup_datetime '" + row[c_time] + "'");
      continue;
    }
    if (row[c_pu].empty() || row[c_do].empty()) {
      reject(line, "empty zone id");
      continue;
    }
    if (ts->day < first_day || ts->day > last_day) {
      ++report.out_of_range;
      continue;
    }
    const auto pair = pairs.find(row[c_pu], row[c_do]);
    if (!pair) {
      ++report.residual;
      continue;
    }
    const size_t d = static_cast<size_t>(ts->day - first_day);
    const size_t t = static_cast<size_t>(ts->minute_of_day / interval_minutes);
    cube.at(d, t, *pair) += 1.0;
    ++report.accepted;
  }
  return cube;
}

void save_cube(const std::filesystem::path& path, const DemandCube& cube) {
  Container c;
  c.magic = "ODCCUBE1";
  c.meta["kind"] = "demand_cube";
  c.meta["first_day"] = civil_from_days(cube.first_day());
  c.meta["interval_minutes"] = cube.interval_minutes();
  c.meta["days"] = cube.days();
  c.meta["intervals"] = cube.intervals();
  c.meta["pairs"] = cube.pairs();
  c.tensors.emplace_back("counts", cube.values());
  save_container(path, c);
}

DemandCube load_cube(const std::filesystem::path& path) {
  const Container c = load_container(path, "ODCCUBE1");
  const auto first = parse_date(c.meta.at("first_day").get<std::string>());
  if (!first) throw DataError(path.string() + ": bad first_day in cube metadata");
  DemandCube cube(c.meta.at("days").get<size_t>(), c.meta.at("intervals").get<size_t>(),
                  c.meta.at("pairs").get<size_t>(), *first,
                  c.meta.at("interval_minutes").get<int>());
  const Tensor& counts = c.tensor("counts");
  if (counts.shape() != cube.values().shape()) {
    throw DataError(path.string() + ": counts tensor is " + counts.shape_str() +
                    ", metadata says " + cube.values().shape_str());
  }
  for (size_t i = 0; i < counts.numel(); ++i) {
    const double v = counts[i];
    if (v < 0.0 || v != std::floor(v) || !std::isfinite(v)) {
      throw DataError(path.string() + ": demand counts must be non-negative integers");
    }
  }
  for (size_t d = 0; d < cube.days(); ++d)
    for (size_t t = 0; t < cube.intervals(); ++t)
      for (size_t i = 0; i < cube.pairs(); ++i)
        cube.at(d, t, i) = counts[(d * cube.intervals() + t) * cube.pairs() + i];
  return cube;
}

Tensor pair_series(const DemandCube& cube, size_t day_begin, size_t day_end) {
  if (day_begin >= day_end || day_end > cube.days()) {
    throw ContractError("pair_series day range [" + std::to_string(day_begin) + ", " +
                        std::to_string(day_end) + ") outside cube of " +
                        std::to_string(cube.days()) + " days");
  }
  const size_t len = (day_end - day_begin) * cube.intervals();
  Tensor s({cube.pairs(), len});
  for (size_t i = 0; i < cube.pairs(); ++i) {
    size_t col = 0;
    for (size_t d = day_begin; d < day_end; ++d)
      for (size_t t = 0; t < cube.intervals(); ++t) s[i * len + col++] = cube.at(d, t, i);
  }
  return s;
}

std::array<LagCoord, 4> window_lag_coordinates(int64_t d, int64_t t, int64_t intervals,
                                               bool wrap_midnight) {
  if (intervals <= 0) throw ContractError("interval count must be positive");
  if (t < 0 || t >= intervals) {
    throw ContractError("interval " + std::to_string(t) + " outside [0, " +
                        std::to_string(intervals) + ")");
  }
  if (!wrap_midnight) {
    return {{{d - 7, t}, {d - 1, t}, {d, t - 2}, {d, t - 1}}};
  }
  return {{{d - 7, t},
           {d - 1, t},
           {t >= 2 ? d : d - 1, t >= 2 ? t - 2 : intervals + t - 2},
           {t >= 1 ? d : d - 1, t >= 1 ? t - 1 : intervals - 1}}};
}

std::optional<TrainingInstance> extract_window(const DemandCube& cube, size_t d, size_t t,
                                               bool wrap_midnight) {
  if (d >= cube.days() || t >= cube.intervals()) {
    throw ContractError("(" + std::to_string(d) + ", " + std::to_string(t) +
                        ") outside cube of " + std::to_string(cube.days()) + " days x " +
                        std::to_string(cube.intervals()) + " intervals");
  }
  if (d < 7) return std::nullopt;
  if (!wrap_midnight && t < 2) return std::nullopt;

  const size_t T = cube.intervals();
  // lag keys in column order; within-day lags may wrap into day d-1
  const size_t lag_d[4] = {d - 7, d - 1, t >= 2 ? d : d - 1, t >= 1 ? d : d - 1};
  const size_t lag_t[4] = {t, t, t >= 2 ? t - 2 : T + t - 2, t >= 1 ? t - 1 : T - 1};

  TrainingInstance inst;
  inst.day = d;
  inst.interval = t;
  inst.features = Tensor({cube.pairs(), 4});
  inst.target = Tensor({cube.pairs()});
  for (size_t i = 0; i < cube.pairs(); ++i) {
    for (size_t c = 0; c < 4; ++c) inst.features[i * 4 + c] = cube.at(lag_d[c], lag_t[c], i);
    inst.target[i] = cube.at(d, t, i);
  }
  return inst;
}

std::vector<TrainingInstance> build_dataset(const DemandCube& cube, bool wrap_midnight) {
  if (cube.days() < 8) {
    throw DataError("feature windows need at least 8 days of history, cube has " +
                    std::to_string(cube.days()));
  }
  std::vector<TrainingInstance> out;
  for (size_t d = 7; d < cube.days(); ++d)
    for (size_t t = 0; t < cube.intervals(); ++t) {
      auto inst = extract_window(cube, d, t, wrap_midnight);
      if (inst) out.push_back(std::move(*inst));
    }
  return out;
}

std::pair<std::vector<TrainingInstance>, std::vector<TrainingInstance>> split_dataset(
    std::vector<TrainingInstance> instances, const SplitPolicy& policy, const DemandCube& cube) {
  size_t cut = 0;
  if (policy.kind == SplitPolicy::Kind::kRatio) {
    if (!(policy.ratio > 0.0 && policy.ratio < 1.0)) {
      throw ConfigError("split ratio must be in (0, 1)");
    }
    cut = static_cast<size_t>(std::floor(policy.ratio * static_cast<double>(instances.size())));
  } else {
    while (cut < instances.size() &&
           cube.first_day() + static_cast<int64_t>(instances[cut].day) <= policy.boundary_day) {
      ++cut;
    }
  }
  if (cut == 0 || cut == instances.size()) {
    throw ConfigError("split leaves one side empty (cut at " + std::to_string(cut) + " of " +
                      std::to_string(instances.size()) + ")");
  }
  std::vector<TrainingInstance> train(instances.begin(),
                                      instances.begin() + static_cast<ptrdiff_t>(cut));
  std::vector<TrainingInstance> test(instances.begin() + static_cast<ptrdiff_t>(cut),
                                     instances.end());
  return {std::move(train), std::move(test)};
}

}  // namespace odcast
