#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "odcast/tensor.hpp"

namespace odcast {

/// One traffic zone: centroid coordinates in degrees, per-area land-use
/// features, and the set of zones sharing a boundary with it.
struct Zone {
  std::string id;
  double lat = 0.0;
  double lng = 0.0;
  std::vector<double> features;
  std::set<std::string> neighbors;
};

/// Immutable zone list loaded from the zone metadata file. Zones keep
/// file order; ids are unique; the neighbor relation is symmetrized on
/// load and self-references are rejected.
class ZoneTable {
 public:
  explicit ZoneTable(std::vector<Zone> zones);

  /// Reads the delimited zone file: id, centroid_lat, centroid_lng,
  /// feature columns, and a trailing semicolon-separated neighbor list.
  static ZoneTable from_csv(const std::filesystem::path& path);

  const std::vector<Zone>& zones() const { return zones_; }
  size_t size() const { return zones_.size(); }
  size_t feature_dim() const;
  bool has(const std::string& id) const;
  /// Zone position in file order; throws DataError for unknown ids.
  size_t index_of(const std::string& id) const;
  const Zone& zone(const std::string& id) const { return zones_[index_of(id)]; }

 private:
  std::vector<Zone> zones_;
  std::vector<std::pair<std::string, size_t>> index_;  // sorted by id
};

/// Ordered universe of (origin, destination) zone pairs; the node set of
/// every adjacency matrix. N = size().
class ODPairIndex {
 public:
  ODPairIndex(std::vector<std::pair<std::string, std::string>> pairs, const ZoneTable& zones);

  /// All z^2 ordered pairs, including intra-zone pairs, in row-major zone
  /// order.
  static ODPairIndex all_pairs(const ZoneTable& zones);

  size_t size() const { return pairs_.size(); }
  const std::pair<std::string, std::string>& pair(size_t i) const { return pairs_[i]; }
  /// Zone-table index of the origin (or destination) zone of pair i.
  size_t origin_index(size_t i) const { return origin_idx_[i]; }
  size_t dest_index(size_t i) const { return dest_idx_[i]; }
  std::optional<size_t> find(const std::string& origin, const std::string& dest) const;

 private:
  std::vector<std::pair<std::string, std::string>> pairs_;
  std::vector<size_t> origin_idx_;
  std::vector<size_t> dest_idx_;
  std::vector<std::pair<std::pair<std::string, std::string>, size_t>> lookup_;  // sorted
};

enum class Side { kOrigin, kDestination };

/// Denominator clamps for the inverse-distance graph weights, and the
/// correlation floor. All configurable from the run config.
struct GraphClamps {
  double feature_eps = 1e-6;     // L2 feature distance floor
  double distance_floor_km = 0.01;  // haversine floor
};

/// Great-circle distance in kilometers (Earth radius 6371.0 km).
/// Coordinates are validated: latitude in [-90, 90], longitude in
/// [-180, 180]; out of range throws DataError.
double haversine_km(double lat1, double lng1, double lat2, double lng2);

/// Binary boundary-sharing adjacency between the side-zones of each pair:
/// entry (i,j) = 1 iff the zones are distinct and neighbors. Pairs whose
/// side-zones coincide get 0.
Tensor neighborhood_adjacency(const ODPairIndex& pairs, const ZoneTable& zones, Side side);

/// Inverse L2 distance between z-scored land-use feature vectors of the
/// side-zones, clamped at eps, then min-max scaled to [0,1] over the
/// off-diagonal entries.
Tensor functional_similarity_adjacency(const ODPairIndex& pairs, const ZoneTable& zones, Side side,
                                       double eps = 1e-6);

/// Inverse haversine distance between side-zone centroids, clamped at
/// floor_km, min-max scaled to [0,1] over the off-diagonal entries.
Tensor centroid_distance_adjacency(const ODPairIndex& pairs, const ZoneTable& zones, Side side,
                                   double floor_km = 0.01);

/// Pearson correlation between per-pair demand series, clamped to [0,1].
/// series is [N x L] with L >= 2; a zero-variance series yields 0 against
/// everything.
Tensor mobility_correlation_adjacency(const Tensor& series);

/// Spectral normalization with self-loops: D^{-1/2} (A + I) D^{-1/2},
/// where D is the degree matrix of A + I. A must be square, symmetric and
/// non-negative; negative entries throw ContractError.
Tensor normalize_adjacency(const Tensor& a);

/// The seven named adjacency matrices and their normalized forms.
/// Canonical order: neighborhood o/d, functional o/d, distance o/d,
/// mobility.
struct ODGraphSet {
  std::vector<std::string> names;
  std::vector<Tensor> raw;
  std::vector<Tensor> normalized;

  size_t k() const { return raw.size(); }
  size_t n() const { return raw.empty() ? 0 : raw.front().dim(0); }
  const Tensor& normalized_by_name(const std::string& name) const;
};

extern const std::vector<std::string> kGraphNames;

/// Builds all seven graphs. demand_series is the [N x L] per-pair history
/// for the mobility graph.
ODGraphSet build_graph_set(const ODPairIndex& pairs, const ZoneTable& zones,
                           const Tensor& demand_series, const GraphClamps& clamps = {});

void save_graph_set(const std::filesystem::path& path, const ODGraphSet& set);
ODGraphSet load_graph_set(const std::filesystem::path& path);

}  // namespace odcast
