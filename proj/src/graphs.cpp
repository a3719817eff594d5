#include "odcast/graphs.hpp"

#include <algorithm>
#include <cmath>

#include "odcast/csv.hpp"
#include "odcast/errors.hpp"
#include "odcast/serialize.hpp"

namespace odcast {

const std::vector<std::string> kGraphNames = {
    "neighborhood_origin", "neighborhood_destination", "functional_origin",
    "functional_destination", "distance_origin", "distance_destination",
    "mobility",
};

namespace {

constexpr double kEarthRadiusKm = 6371.0;

void check_coordinates(double lat, double lng) {
  if (!(lat >= -90.0 && lat <= 90.0) || !(lng >= -180.0 && lng <= 180.0)) {
    throw DataError("coordinate (" + std::to_string(lat) + ", " + std::to_string(lng) +
                    ") outside latitude [-90,90] / longitude [-180,180]");
  }
}

double parse_double(const std::string& s, const std::string& what, size_t line) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line) + ": cannot parse " + what + " '" + s + "'");
  }
}

std::vector<std::string> split_semicolons(const std::string& s) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= s.size()) {
    const size_t semi = s.find(';', start);
    const std::string piece =
        semi == std::string::npos ? s.substr(start) : s.substr(start, semi - start);
    if (!piece.empty()) out.push_back(piece);
    if (semi == std::string::npos) break;
    start = semi + 1;
  }
  return out;
}

// min-max scales the off-diagonal entries of a symmetric matrix into
// [0,1]; a constant off-diagonal maps to 1.0 (all pairs equally close).
void minmax_scale_offdiag(Tensor& a) {
  const size_t n = a.dim(0);
  if (n < 2) return;
  double lo = INFINITY, hi = -INFINITY;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      lo = std::min(lo, a[i * n + j]);
      hi = std::max(hi, a[i * n + j]);
    }
  const double span = hi - lo;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      a[i * n + j] = span > 0.0 ? (a[i * n + j] - lo) / span : 1.0;
    }
}

// z-scores each feature column across zones; a constant column becomes 0
std::vector<std::vector<double>> standardized_features(const ZoneTable& zones) {
  const size_t z = zones.size();
  const size_t f = zones.feature_dim();
  std::vector<std::vector<double>> out(z, std::vector<double>(f, 0.0));
  for (size_t c = 0; c < f; ++c) {
    double mean = 0.0;
    for (size_t i = 0; i < z; ++i) mean += zones.zones()[i].features[c];
    mean /= static_cast<double>(z);
    double var = 0.0;
    for (size_t i = 0; i < z; ++i) {
      const double d = zones.zones()[i].features[c] - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(z));
    if (sd == 0.0) continue;
    for (size_t i = 0; i < z; ++i) out[i][c] = (zones.zones()[i].features[c] - mean) / sd;
  }
  return out;
}

// entry (i,j) = weight(zone of pair i, zone of pair j) for the chosen
// side, from a precomputed z x z zone weight table
Tensor from_zone_weights(const ODPairIndex& pairs, const std::vector<double>& zw, size_t z,
                         Side side) {
  const size_t n = pairs.size();
  Tensor a({n, n});
  for (size_t i = 0; i < n; ++i) {
    const size_t zi = side == Side::kOrigin ? pairs.origin_index(i) : pairs.dest_index(i);
    for (size_t j = i + 1; j < n; ++j) {
      const size_t zj = side == Side::kOrigin ? pairs.origin_index(j) : pairs.dest_index(j);
      const double w = zw[zi * z + zj];
      a[i * n + j] = w;
      a[j * n + i] = w;
    }
  }
  return a;
}

}  // namespace

ZoneTable::ZoneTable(std::vector<Zone> zones) : zones_(std::move(zones)) {
  if (zones_.empty()) throw DataError("zone table is empty");
  const size_t f = zones_.front().features.size();
  for (const Zone& zn : zones_) {
    check_coordinates(zn.lat, zn.lng);
    if (zn.features.size() != f) {
      throw DataError("zone '" + zn.id + "' has " + std::to_string(zn.features.size()) +
                      " features, expected " + std::to_string(f));
    }
    for (double v : zn.features) {
      if (!std::isfinite(v)) throw DataError("zone '" + zn.id + "' has a non-finite feature");
    }
  }
  index_.reserve(zones_.size());
  for (size_t i = 0; i < zones_.size(); ++i) index_.emplace_back(zones_[i].id, i);
  std::sort(index_.begin(), index_.end());
  for (size_t i = 1; i < index_.size(); ++i) {
    if (index_[i].first == index_[i - 1].first) {
      throw DataError("duplicate zone id '" + index_[i].first + "'");
    }
  }
  // validate neighbor references, reject self-links, then symmetrize
  for (Zone& zn : zones_) {
    if (zn.neighbors.count(zn.id)) {
      throw DataError("zone '" + zn.id + "' lists itself as a neighbor");
    }
    for (const std::string& nb : zn.neighbors) {
      if (!has(nb)) throw DataError("zone '" + zn.id + "' names unknown neighbor '" + nb + "'");
    }
  }
  for (size_t i = 0; i < zones_.size(); ++i) {
    for (const std::string& nb : zones_[i].neighbors) {
      zones_[index_of(nb)].neighbors.insert(zones_[i].id);
    }
  }
}

ZoneTable ZoneTable::from_csv(const std::filesystem::path& path) {
  const CsvFile csv = read_csv(path);
  if (csv.header.size() < 5) {
    throw DataError("'" + path.string() +
                    "': zone file needs id, lat, lng, at least one feature, and a neighbor column");
  }
  std::vector<Zone> zones;
  zones.reserve(csv.rows.size());
  const size_t ncols = csv.header.size();
  for (size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    const size_t line = csv.line_numbers[r];
    if (row.size() != ncols) {
      throw DataError("'" + path.string() + "' line " + std::to_string(line) + ": expected " +
                      std::to_string(ncols) + " fields, got " + std::to_string(row.size()));
    }
    Zone zn;
    zn.id = row[0];
    if (zn.id.empty()) throw DataError("line " + std::to_string(line) + ": empty zone id");
    zn.lat = parse_double(row[1], "latitude", line);
    zn.lng = parse_double(row[2], "longitude", line);
    for (size_t c = 3; c + 1 < ncols; ++c) {
      zn.features.push_back(parse_double(row[c], "feature " + csv.header[c], line));
    }
    for (const std::string& nb : split_semicolons(row[ncols - 1])) zn.neighbors.insert(nb);
    zones.push_back(std::move(zn));
  }
  return ZoneTable(std::move(zones));
}

size_t ZoneTable::feature_dim() const { return zones_.front().features.size(); }

bool ZoneTable::has(const std::string& id) const {
  const auto it = std::lower_bound(index_.begin(), index_.end(), id,
                                   [](const auto& p, const std::string& k) { return p.first < k; });
  return it != index_.end() && it->first == id;
}

size_t ZoneTable::index_of(const std::string& id) const {
  const auto it = std::lower_bound(index_.begin(), index_.end(), id,
                                   [](const auto& p, const std::string& k) { return p.first < k; });
  if (it == index_.end() || it->first != id) throw DataError("unknown zone id '" + id + "'");
  return it->second;
}

ODPairIndex::ODPairIndex(std::vector<std::pair<std::string, std::string>> pairs,
                         const ZoneTable& zones)
    : pairs_(std::move(pairs)) {
  if (pairs_.empty()) throw DataError("OD pair list is empty");
  origin_idx_.reserve(pairs_.size());
  dest_idx_.reserve(pairs_.size());
  for (const auto& [o, d] : pairs_) {
    origin_idx_.push_back(zones.index_of(o));
    dest_idx_.push_back(zones.index_of(d));
  }
  lookup_.reserve(pairs_.size());
  for (size_t i = 0; i < pairs_.size(); ++i) lookup_.emplace_back(pairs_[i], i);
  std::sort(lookup_.begin(), lookup_.end());
  for (size_t i = 1; i < lookup_.size(); ++i) {
    if (lookup_[i].first == lookup_[i - 1].first) {
      throw DataError("duplicate OD pair (" + lookup_[i].first.first + ", " +
                      lookup_[i].first.second + ")");
    }
  }
}

ODPairIndex ODPairIndex::all_pairs(const ZoneTable& zones) {
  std::vector<std::pair<std::string, std::string>> pairs;
  pairs.reserve(zones.size() * zones.size());
  for (const Zone& o : zones.zones())
    for (const Zone& d : zones.zones()) pairs.emplace_back(o.id, d.id);
  return ODPairIndex(std::move(pairs), zones);
}

std::optional<size_t> ODPairIndex::find(const std::string& origin, const std::string& dest) const {
  const std::pair<std::string, std::string> key{origin, dest};
  const auto it = std::lower_bound(
      lookup_.begin(), lookup_.end(), key,
      [](const auto& p, const std::pair<std::string, std::string>& k) { return p.first < k; });
  if (it == lookup_.end() || it->first != key) return std::nullopt;
  return it->second;
}

double haversine_km(double lat1, double lng1, double lat2, double lng2) {
  check_coordinates(lat1, lng1);
  check_coordinates(lat2, lng2);
  const double rad = M_PI / 180.0;
  const double dlat = (lat2 - lat1) * rad;
  const double dlng = (lng2 - lng1) * rad;
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlng / 2.0);
  const double h = s1 * s1 + std::cos(lat1 * rad) * std::cos(lat2 * rad) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

Tensor neighborhood_adjacency(const ODPairIndex& pairs, const ZoneTable& zones, Side side) {
  const size_t z = zones.size();
  std::vector<double> zw(z * z, 0.0);
  for (size_t i = 0; i < z; ++i) {
    for (const std::string& nb : zones.zones()[i].neighbors) {
      zw[i * z + zones.index_of(nb)] = 1.0;
    }
  }
  return from_zone_weights(pairs, zw, z, side);
}

Tensor functional_similarity_adjacency(const ODPairIndex& pairs, const ZoneTable& zones, Side side,
                                       double eps) {
  if (eps <= 0.0) throw ConfigError("feature distance clamp must be positive");
  const size_t z = zones.size();
  const auto feats = standardized_features(zones);
  std::vector<double> zw(z * z, 0.0);
  for (size_t i = 0; i < z; ++i)
    for (size_t j = 0; j < z; ++j) {
      double d2 = 0.0;
      for (size_t c = 0; c < feats[i].size(); ++c) {
        const double d = feats[i][c] - feats[j][c];
        d2 += d * d;
      }
      zw[i * z + j] = 1.0 / std::max(std::sqrt(d2), eps);
    }
  Tensor a = from_zone_weights(pairs, zw, z, side);
  minmax_scale_offdiag(a);
  return a;
}

Tensor centroid_distance_adjacency(const ODPairIndex& pairs, const ZoneTable& zones, Side side,
                                   double floor_km) {
  if (floor_km <= 0.0) throw ConfigError("distance clamp must be positive");
  const size_t z = zones.size();
  std::vector<double> zw(z * z, 0.0);
  for (size_t i = 0; i < z; ++i)
    for (size_t j = 0; j < z; ++j) {
      const Zone& a = zones.zones()[i];
      const Zone& b = zones.zones()[j];
      zw[i * z + j] = 1.0 / std::max(haversine_km(a.lat, a.lng, b.lat, b.lng), floor_km);
    }
  Tensor a = from_zone_weights(pairs, zw, z, side);
  minmax_scale_offdiag(a);
  return a;
}

Tensor mobility_correlation_adjacency(const Tensor& series) {
  if (series.rank() != 2) {
    throw DimensionError("demand series must be [N x L], got " + series.shape_str());
  }
  const size_t n = series.dim(0);
  const size_t len = series.dim(1);
  if (len < 2) throw DataError("demand history needs at least 2 intervals per pair");
  std::vector<double> mean(n, 0.0), var(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (size_t t = 0; t < len; ++t) mean[i] += series[i * len + t];
    mean[i] /= static_cast<double>(len);
    for (size_t t = 0; t < len; ++t) {
      const double d = series[i * len + t] - mean[i];
      var[i] += d * d;
    }
  }
  Tensor a({n, n});
  for (size_t i = 0; i < n; ++i) {
    if (var[i] == 0.0) continue;
    for (size_t j = i + 1; j < n; ++j) {
      if (var[j] == 0.0) continue;
      double cov = 0.0;
      for (size_t t = 0; t < len; ++t) {
        cov += (series[i * len + t] - mean[i]) * (series[j * len + t] - mean[j]);
      }
      const double corr = cov / std::sqrt(var[i] * var[j]);
      const double w = std::min(std::max(corr, 0.0), 1.0);
      a[i * n + j] = w;
      a[j * n + i] = w;
    }
  }
  return a;
}

Tensor normalize_adjacency(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw DimensionError("adjacency must be square, got " + a.shape_str());
  }
  const size_t n = a.dim(0);
  for (size_t i = 0; i < a.numel(); ++i) {
    if (a[i] < 0.0) throw ContractError("adjacency has a negative entry; clamp before normalizing");
  }
  std::vector<double> deg(n);
  for (size_t i = 0; i < n; ++i) {
    deg[i] = 1.0;  // self-loop
    for (size_t j = 0; j < n; ++j) deg[i] += a[i * n + j];
  }
  // loop / sqrt(deg_i * deg_j) keeps the result bitwise symmetric and
  // exact on integer-degree graphs
  Tensor out({n, n});
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) {
      const double loop = a[i * n + j] + (i == j ? 1.0 : 0.0);
      out[i * n + j] = loop == 0.0 ? 0.0 : loop / std::sqrt(deg[i] * deg[j]);
    }
  return out;
}

const Tensor& ODGraphSet::normalized_by_name(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return normalized[i];
  }
  throw DataError("graph set has no graph named '" + name + "'");
}

ODGraphSet build_graph_set(const ODPairIndex& pairs, const ZoneTable& zones,
                           const Tensor& demand_series, const GraphClamps& clamps) {
  if (demand_series.dim(0) != pairs.size()) {
    throw DimensionError("demand series rows (" + std::to_string(demand_series.dim(0)) +
                         ") do not match pair count (" + std::to_string(pairs.size()) + ")");
  }
  ODGraphSet set;
  set.names = kGraphNames;
  set.raw.push_back(neighborhood_adjacency(pairs, zones, Side::kOrigin));
  set.raw.push_back(neighborhood_adjacency(pairs, zones, Side::kDestination));
  set.raw.push_back(functional_similarity_adjacency(pairs, zones, Side::kOrigin, clamps.feature_eps));
  set.raw.push_back(
      functional_similarity_adjacency(pairs, zones, Side::kDestination, clamps.feature_eps));
  set.raw.push_back(
      centroid_distance_adjacency(pairs, zones, Side::kOrigin, clamps.distance_floor_km));
  set.raw.push_back(
      centroid_distance_adjacency(pairs, zones, Side::kDestination, clamps.distance_floor_km));
  set.raw.push_back(mobility_correlation_adjacency(demand_series));
  set.normalized.reserve(set.raw.size());
  for (const Tensor& r : set.raw) set.normalized.push_back(normalize_adjacency(r));
  return set;
}

void save_graph_set(const std::filesystem::path& path, const ODGraphSet& set) {
  Container c;
  c.magic = "ODCGRPH1";
  c.meta["kind"] = "graph_set";
  c.meta["k"] = set.k();
  c.meta["n"] = set.n();
  c.meta["names"] = set.names;
  for (size_t i = 0; i < set.names.size(); ++i) {
    c.tensors.emplace_back("raw/" + set.names[i], set.raw[i]);
  }
  for (size_t i = 0; i < set.names.size(); ++i) {
    c.tensors.emplace_back("norm/" + set.names[i], set.normalized[i]);
  }
  save_container(path, c);
}

ODGraphSet load_graph_set(const std::filesystem::path& path) {
  const Container c = load_container(path, "ODCGRPH1");
  ODGraphSet set;
  set.names = c.meta.at("names").get<std::vector<std::string>>();
  for (const std::string& name : set.names) {
    set.raw.push_back(c.tensor("raw/" + name));
    set.normalized.push_back(c.tensor("norm/" + name));
  }
  return set;
}

}  // namespace odcast
