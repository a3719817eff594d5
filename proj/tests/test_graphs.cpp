#include "odcast/graphs.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "odcast/errors.hpp"
#include "odcast/rng.hpp"
#include "oracles.hpp"

using namespace odcast;
namespace fs = std::filesystem;

namespace {

Zone make_zone(std::string id, double lat, double lng, std::vector<double> feats,
               std::set<std::string> nbs = {}) {
  Zone z;
  z.id = std::move(id);
  z.lat = lat;
  z.lng = lng;
  z.features = std::move(feats);
  z.neighbors = std::move(nbs);
  return z;
}

// random zone fixture: z zones on a small coordinate patch with symmetric
// random neighbor links
ZoneTable random_zones(size_t z, Rng& rng, size_t n_features = 6) {
  std::vector<Zone> zones;
  for (size_t i = 0; i < z; ++i) {
    std::vector<double> f(n_features);
    for (double& v : f) v = rng.uniform(0.0, 10.0);
    zones.push_back(make_zone("z" + std::to_string(i), 40.0 + rng.uniform(0.0, 0.5),
                              -74.0 + rng.uniform(0.0, 0.5), std::move(f)));
  }
  for (size_t i = 0; i < z; ++i)
    for (size_t j = i + 1; j < z; ++j) {
      if (rng.uniform() < 0.4) {
        zones[i].neighbors.insert(zones[j].id);
        zones[j].neighbors.insert(zones[i].id);
      }
    }
  return ZoneTable(std::move(zones));
}

Tensor random_series(size_t n, size_t len, Rng& rng) {
  Tensor s({n, len});
  for (size_t i = 0; i < s.numel(); ++i) s[i] = rng.uniform(0.0, 20.0);
  return s;
}

bool is_symmetric_zero_diag_unit(const Tensor& a) {
  const size_t n = a.dim(0);
  for (size_t i = 0; i < n; ++i) {
    if (a[i * n + i] != 0.0) return false;
    for (size_t j = 0; j < n; ++j) {
      const double v = a[i * n + j];
      if (v != a[j * n + i] || v < 0.0 || v > 1.0) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("zone table validation") {
  CHECK_THROWS_AS(ZoneTable({make_zone("a", 95.0, 0.0, {1.0})}), DataError);
  CHECK_THROWS_AS(ZoneTable({make_zone("a", 0.0, 181.0, {1.0})}), DataError);
  CHECK_THROWS_AS(
      ZoneTable({make_zone("a", 0, 0, {1.0}), make_zone("a", 0, 0, {1.0})}), DataError);
  CHECK_THROWS_AS(
      ZoneTable({make_zone("a", 0, 0, {1.0}), make_zone("b", 0, 0, {1.0, 2.0})}), DataError);
  CHECK_THROWS_AS(ZoneTable({make_zone("a", 0, 0, {std::nan("")})}), DataError);
  CHECK_THROWS_AS(ZoneTable({make_zone("a", 0, 0, {1.0}, {"a"})}), DataError);
  CHECK_THROWS_AS(ZoneTable({make_zone("a", 0, 0, {1.0}, {"ghost"})}), DataError);

  // one-sided neighbor lists are symmetrized on load
  ZoneTable t({make_zone("a", 0, 0, {1.0}, {"b"}), make_zone("b", 0, 1, {2.0})});
  CHECK(t.zone("b").neighbors.count("a") == 1);
  CHECK(t.index_of("a") == 0);
  CHECK_THROWS_AS(t.index_of("c"), DataError);
}

TEST_CASE("zone csv ingestion") {
  const fs::path dir = fs::temp_directory_path() / "odcast_graphs_test";
  fs::create_directories(dir);
  const fs::path p = dir / "zones.csv";
  std::ofstream(p) << "zone_id,lat,lng,f_car,f_house,neighbors\n"
                      "a,40.1,-74.0,1.0,2.0,b\n"
                      "b,40.2,-74.1,3.0,4.0,a\n"
                      "c,40.3,-74.2,5.0,6.0,\n";
  const ZoneTable t = ZoneTable::from_csv(p);
  CHECK(t.size() == 3);
  CHECK(t.feature_dim() == 2);
  CHECK(t.zone("a").neighbors == std::set<std::string>{"b"});
  CHECK(t.zone("c").neighbors.empty());
  CHECK(t.zone("b").lat == 40.2);

  std::ofstream(p) << "zone_id,lat,lng,f_car,neighbors\n"
                      "a,40.1,oops,1.0,\n";
  try {
    ZoneTable::from_csv(p);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("pair index covers all ordered pairs and rejects duplicates") {
  Rng rng(31);
  const ZoneTable t = random_zones(3, rng);
  const ODPairIndex idx = ODPairIndex::all_pairs(t);
  CHECK(idx.size() == 9);
  CHECK(idx.pair(0) == std::pair<std::string, std::string>{"z0", "z0"});
  CHECK(idx.pair(5) == std::pair<std::string, std::string>{"z1", "z2"});
  CHECK(idx.find("z2", "z1").value() == 7);
  CHECK_FALSE(idx.find("z2", "nope").has_value());
  CHECK(idx.origin_index(5) == 1);
  CHECK(idx.dest_index(5) == 2);

  CHECK_THROWS_AS(ODPairIndex({{"z0", "z1"}, {"z0", "z1"}}, t), DataError);
  CHECK_THROWS_AS(ODPairIndex({{"z0", "missing"}}, t), DataError);
}

TEST_CASE("neighborhood adjacency: irreflexive, matches brute force") {
  Rng rng(32);
  const ZoneTable t = random_zones(5, rng);
  const ODPairIndex idx = ODPairIndex::all_pairs(t);
  const Tensor a = neighborhood_adjacency(idx, t, Side::kOrigin);
  CHECK(is_symmetric_zero_diag_unit(a));

  const size_t n = idx.size();
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) {
      const Zone& zi = t.zones()[idx.origin_index(i)];
      const Zone& zj = t.zones()[idx.origin_index(j)];
      const double want =
          (i != j && zi.id != zj.id && zi.neighbors.count(zj.id)) ? 1.0 : 0.0;
      CHECK(a[i * n + j] == want);
    }

  // pairs sharing an origin zone are never adjacent on the origin side
  const size_t p1 = idx.find("z0", "z1").value();
  const size_t p2 = idx.find("z0", "z2").value();
  CHECK(a[p1 * n + p2] == 0.0);

  // destination side uses destination zones
  const Tensor ad = neighborhood_adjacency(idx, t, Side::kDestination);
  const size_t q1 = idx.find("z1", "z0").value();
  const size_t q2 = idx.find("z2", "z0").value();
  CHECK(ad[q1 * n + q2] == 0.0);
}

TEST_CASE("adjacent origin zones connect their pairs") {
  ZoneTable t({make_zone("a", 40.0, -74.0, {1.0}, {"b"}), make_zone("b", 40.1, -74.1, {2.0}),
               make_zone("c", 40.2, -74.2, {3.0})});
  const ODPairIndex idx = ODPairIndex::all_pairs(t);
  const Tensor a = neighborhood_adjacency(idx, t, Side::kOrigin);
  const size_t n = idx.size();
  const size_t i = idx.find("a", "c").value();
  const size_t j = idx.find("b", "c").value();
  const size_t k = idx.find("c", "a").value();
  CHECK(a[i * n + j] == 1.0);
  CHECK(a[i * n + k] == 0.0);
}

TEST_CASE("functional similarity: degenerate equality and direct formula") {
  ZoneTable same({make_zone("a", 40.0, -74.0, {2.0, 5.0}), make_zone("b", 40.1, -74.1, {2.0, 5.0}),
                  make_zone("c", 40.2, -74.2, {2.0, 5.0})});
  const ODPairIndex idx = ODPairIndex::all_pairs(same);
  const Tensor a = functional_similarity_adjacency(idx, same, Side::kOrigin);
  const size_t n = idx.size();
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) CHECK(a[i * n + j] == (i == j ? 0.0 : 1.0));
}

TEST_CASE("functional similarity matches an independent pipeline oracle") {
  Rng rng(33);
  const ZoneTable t = random_zones(4, rng, 3);
  const ODPairIndex idx = ODPairIndex::all_pairs(t);
  const Tensor a = functional_similarity_adjacency(idx, t, Side::kDestination);
  CHECK(is_symmetric_zero_diag_unit(a));

  // oracle: z-score columns, inverse clamped L2 distance, min-max
  const size_t z = t.size();
  const size_t nf = t.feature_dim();
  std::vector<std::vector<double>> f(z, std::vector<double>(nf));
  for (size_t c = 0; c < nf; ++c) {
    double mean = 0, var = 0;
    for (size_t i = 0; i < z; ++i) mean += t.zones()[i].features[c];
    mean /= static_cast<double>(z);
    for (size_t i = 0; i < z; ++i) {
      const double d = t.zones()[i].features[c] - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(z));
    for (size_t i = 0; i < z; ++i)
      f[i][c] = sd == 0.0 ? 0.0 : (t.zones()[i].features[c] - mean) / sd;
  }
  const size_t n = idx.size();
  std::vector<double> w(n * n, 0.0);
  double lo = INFINITY, hi = -INFINITY;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double d2 = 0;
      for (size_t c = 0; c < nf; ++c) {
        const double d = f[idx.dest_index(i)][c] - f[idx.dest_index(j)][c];
        d2 += d * d;
      }
      w[i * n + j] = 1.0 / std::max(std::sqrt(d2), 1e-6);
      lo = std::min(lo, w[i * n + j]);
      hi = std::max(hi, w[i * n + j]);
    }
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double want = hi > lo ? (w[i * n + j] - lo) / (hi - lo) : 1.0;
      CHECK(a[i * n + j] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("haversine distances") {
  CHECK(haversine_km(40.7, -74.0, 40.7, -74.0) == 0.0);
  CHECK(haversine_km(0.0, 0.0, 0.0, 180.0) == doctest::Approx(M_PI * 6371.0).epsilon(1e-9));
  CHECK(haversine_km(40.7128, -74.0060, 40.7831, -73.9712) ==
        doctest::Approx(oracle::haversine_km(40.7128, -74.0060, 40.7831, -73.9712)).epsilon(1e-9));
  CHECK_THROWS_AS(haversine_km(91.0, 0.0, 0.0, 0.0), DataError);
  CHECK_THROWS_AS(haversine_km(0.0, 0.0, 0.0, -181.0), DataError);
}

TEST_CASE("centroid distance adjacency: clamp, oracle, order preservation") {
  Rng rng(34);
  const ZoneTable t = random_zones(4, rng);
  const ODPairIndex idx = ODPairIndex::all_pairs(t);
  const Tensor a = centroid_distance_adjacency(idx, t, Side::kOrigin);
  CHECK(is_symmetric_zero_diag_unit(a));

  const size_t n = idx.size();
  // same origin zone -> zero distance -> clamp -> nearest possible -> 1.0
  const size_t p1 = idx.find("z0", "z1").value();
  const size_t p2 = idx.find("z0", "z2").value();
  CHECK(a[p1 * n + p2] == 1.0);

  // oracle: haversine matrix, invert with floor, min-max
  std::vector<double> w(n * n, 0.0);
  double lo = INFINITY, hi = -INFINITY;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const Zone& zi = t.zones()[idx.origin_index(i)];
      const Zone& zj = t.zones()[idx.origin_index(j)];
      w[i * n + j] = 1.0 / std::max(oracle::haversine_km(zi.lat, zi.lng, zj.lat, zj.lng), 0.01);
      lo = std::min(lo, w[i * n + j]);
      hi = std::max(hi, w[i * n + j]);
    }
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      CHECK(a[i * n + j] == doctest::Approx((w[i * n + j] - lo) / (hi - lo)).epsilon(1e-9));
    }
}

TEST_CASE("widening every gap preserves distance-graph entry ordering") {
  auto build = [](double step) {
    std::vector<Zone> zones;
    for (size_t i = 0; i < 4; ++i) {
      zones.push_back(make_zone("z" + std::to_string(i), 0.0, step * static_cast<double>(i) *
                                static_cast<double>(i + 1) / 2.0, {1.0 * static_cast<double>(i)}));
    }
    return ZoneTable(std::move(zones));
  };
  const ZoneTable t1 = build(0.01);
  const ZoneTable t2 = build(0.02);
  const ODPairIndex i1 = ODPairIndex::all_pairs(t1);
  const ODPairIndex i2 = ODPairIndex::all_pairs(t2);
  const Tensor a1 = centroid_distance_adjacency(i1, t1, Side::kOrigin);
  const Tensor a2 = centroid_distance_adjacency(i2, t2, Side::kOrigin);
  const size_t n = i1.size();
  for (size_t x = 0; x < n * n; ++x)
    for (size_t y = 0; y < n * n; ++y) {
      if (a1[x] < a1[y]) CHECK(a2[x] <= a2[y]);
      if (a1[x] > a1[y]) CHECK(a2[x] >= a2[y]);
    }
}

TEST_CASE("mobility correlation: exact rules") {
  Tensor s({3, 4});
  const double base[4] = {1.0, 3.0, 2.0, 5.0};
  for (size_t t = 0; t < 4; ++t) {
    s[0 * 4 + t] = base[t];
    s[1 * 4 + t] = 2.0 * base[t] + 3.0;  // perfectly correlated
    s[2 * 4 + t] = -base[t];             // perfectly anti-correlated
  }
  const Tensor a = mobility_correlation_adjacency(s);
  CHECK(a[0 * 3 + 1] == 1.0);
  CHECK(a[0 * 3 + 2] == 0.0);
  CHECK(a[0 * 3 + 0] == 0.0);
  CHECK(is_symmetric_zero_diag_unit(a));

  Tensor flat({2, 3});
  flat[0] = flat[1] = flat[2] = 4.0;
  flat[3] = 1.0;
  flat[4] = 2.0;
  flat[5] = 3.0;
  const Tensor z = mobility_correlation_adjacency(flat);
  CHECK(z[1] == 0.0);

  CHECK_THROWS_AS(mobility_correlation_adjacency(Tensor({3, 1})), DataError);
}

TEST_CASE("mobility correlation matches the statistical oracle") {
  Rng rng(35);
  const Tensor s = random_series(6, 30, rng);
  const Tensor a = mobility_correlation_adjacency(s);
  for (size_t i = 0; i < 6; ++i)
    for (size_t j = 0; j < 6; ++j) {
      if (i == j) continue;
      std::vector<double> qi(s.data() + i * 30, s.data() + (i + 1) * 30);
      std::vector<double> qj(s.data() + j * 30, s.data() + (j + 1) * 30);
      const double r = oracle::pearson(qi, qj);
      const double want = std::isnan(r) ? 0.0 : std::min(std::max(r, 0.0), 1.0);
      CHECK(a[i * 6 + j] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("mobility correlation is invariant to positive affine rescaling") {
  Rng rng(36);
  Tensor s = random_series(4, 20, rng);
  const Tensor a = mobility_correlation_adjacency(s);
  Tensor scaled = s;
  for (size_t t = 0; t < 20; ++t) scaled[0 * 20 + t] = 3.5 * s[0 * 20 + t] + 11.0;
  const Tensor b = mobility_correlation_adjacency(scaled);
  for (size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("normalize_adjacency: hand cases and oracle") {
  const Tensor zero({3, 3});
  const Tensor id = normalize_adjacency(zero);
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 3; ++j) CHECK(id[i * 3 + j] == (i == j ? 1.0 : 0.0));

  Tensor pair = Tensor::matrix({{0.0, 1.0}, {1.0, 0.0}});
  const Tensor half = normalize_adjacency(pair);
  for (size_t i = 0; i < 4; ++i) CHECK(half[i] == 0.5);

  Rng rng(37);
  Tensor a({7, 7});
  for (size_t i = 0; i < 7; ++i)
    for (size_t j = i + 1; j < 7; ++j) {
      const double v = rng.uniform();
      a[i * 7 + j] = v;
      a[j * 7 + i] = v;
    }
  const Tensor norm = normalize_adjacency(a);
  const auto want = oracle::normalize_adjacency(a.values(), 7);
  for (size_t i = 0; i < norm.numel(); ++i)
    CHECK(norm[i] == doctest::Approx(want[i]).epsilon(1e-12));

  // diagonal entries are 1/D_ii and the matrix stays symmetric
  for (size_t i = 0; i < 7; ++i) {
    double deg = 1.0;
    for (size_t j = 0; j < 7; ++j) deg += a[i * 7 + j];
    CHECK(norm[i * 7 + i] == doctest::Approx(1.0 / deg).epsilon(1e-12));
    for (size_t j = 0; j < 7; ++j) CHECK(norm[i * 7 + j] == norm[j * 7 + i]);
  }

  Tensor neg({2, 2});
  neg[1] = -0.5;
  CHECK_THROWS_AS(normalize_adjacency(neg), ContractError);
  CHECK_THROWS_AS(normalize_adjacency(Tensor({2, 3})), DimensionError);
}

TEST_CASE("isolated node keeps exactly its self-loop") {
  Tensor a({3, 3});
  a[0 * 3 + 1] = a[1 * 3 + 0] = 0.7;
  const Tensor norm = normalize_adjacency(a);
  CHECK(norm[2 * 3 + 2] == 1.0);
  CHECK(norm[2 * 3 + 0] == 0.0);
  CHECK(norm[2 * 3 + 1] == 0.0);
  CHECK(norm[0 * 3 + 2] == 0.0);
}

TEST_CASE("normalized adjacency spectral radius stays at or below 1") {
  Rng rng(38);
  for (int trial = 0; trial < 5; ++trial) {
    const size_t z = 2 + rng.bounded(4);
    const ZoneTable t = random_zones(z, rng);
    const ODPairIndex idx = ODPairIndex::all_pairs(t);
    const Tensor series = random_series(idx.size(), 16, rng);
    const ODGraphSet set = build_graph_set(idx, t, series);
    for (const Tensor& norm : set.normalized) {
      CHECK(oracle::spectral_radius(norm.values(), norm.dim(0)) <= 1.0 + 1e-9);
    }
  }
}

TEST_CASE("graph set: seven named graphs, invariants, round trip") {
  Rng rng(39);
  const ZoneTable t = random_zones(4, rng);
  const ODPairIndex idx = ODPairIndex::all_pairs(t);
  const Tensor series = random_series(idx.size(), 12, rng);
  const ODGraphSet set = build_graph_set(idx, t, series);

  CHECK(set.k() == 7);
  CHECK(set.n() == idx.size());
  CHECK(set.names == kGraphNames);
  for (const Tensor& raw : set.raw) CHECK(is_symmetric_zero_diag_unit(raw));
  for (size_t g = 0; g < set.k(); ++g) {
    const Tensor& norm = set.normalized[g];
    const size_t n = norm.dim(0);
    for (size_t i = 0; i < n; ++i) {
      CHECK(norm[i * n + i] > 0.0);
      for (size_t j = 0; j < n; ++j) CHECK(norm[i * n + j] == norm[j * n + i]);
    }
    const auto want = oracle::normalize_adjacency(set.raw[g].values(), n);
    for (size_t i = 0; i < norm.numel(); ++i)
      CHECK(norm[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }

  const fs::path dir = fs::temp_directory_path() / "odcast_graphs_test";
  fs::create_directories(dir);
  const fs::path p = dir / "set.bin";
  save_graph_set(p, set);
  const ODGraphSet back = load_graph_set(p);
  CHECK(back.names == set.names);
  for (size_t g = 0; g < set.k(); ++g) {
    for (size_t i = 0; i < set.raw[g].numel(); ++i) {
      CHECK(back.raw[g][i] == set.raw[g][i]);
      CHECK(back.normalized[g][i] == set.normalized[g][i]);
    }
  }
  CHECK(&back.normalized_by_name("mobility") == &back.normalized[6]);
  CHECK_THROWS_AS(back.normalized_by_name("bogus"), DataError);

  CHECK_THROWS_AS(build_graph_set(idx, t, Tensor({3, 12})), DimensionError);
}

TEST_CASE("relabeling pairs permutes every graph as P A P^T") {
  Rng rng(40);
  const ZoneTable t = random_zones(3, rng);
  const ODPairIndex base = ODPairIndex::all_pairs(t);
  const size_t n = base.size();

  std::vector<size_t> perm(n);
  for (size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);  // permuted[i] = base pair perm[i]

  std::vector<std::pair<std::string, std::string>> shuffled;
  for (size_t i = 0; i < n; ++i) shuffled.push_back(base.pair(perm[i]));
  const ODPairIndex permuted(shuffled, t);

  const Tensor series = random_series(n, 10, rng);
  Tensor series_p({n, 10});
  for (size_t i = 0; i < n; ++i)
    for (size_t l = 0; l < 10; ++l) series_p[i * 10 + l] = series[perm[i] * 10 + l];

  const ODGraphSet a = build_graph_set(base, t, series);
  const ODGraphSet b = build_graph_set(permuted, t, series_p);
  for (size_t g = 0; g < a.k(); ++g) {
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < n; ++j) {
        CHECK(b.raw[g][i * n + j] == doctest::Approx(a.raw[g][perm[i] * n + perm[j]]).epsilon(1e-12));
      }
  }
}
