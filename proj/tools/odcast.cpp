// Command-line front end for the demand forecasting pipeline:
// ingest -> graphs -> train -> evaluate -> predict, plus a numeric
// gradient self-check. Driven by a JSON run config; flags override
// file values. Exit codes: 0 ok, 2 config error, 3 data error,
// 4 training divergence, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "odcast/autodiff.hpp"
#include "odcast/data.hpp"
#include "odcast/errors.hpp"
#include "odcast/eval.hpp"
#include "odcast/graphs.hpp"
#include "odcast/model.hpp"
#include "odcast/rng.hpp"
#include "odcast/serialize.hpp"
#include "odcast/tensor.hpp"
#include "odcast/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace odcast;

namespace {

constexpr int kConfigVersion = 1;

struct BaselineSettings {
  bool ha = true;
  bool lasso = true;
  bool mlp = true;
  bool spatial_lstm = true;
  double lasso_lambda = 0.1;
  size_t mlp_hidden = 32;
  std::vector<size_t> lstm_hidden = {64, 32};
  size_t lstm_latent = 0;  // 0 means "track n"
  size_t epochs = 0;       // 0 means "same as training.epochs"
};

/// Fully resolved run configuration. Relative paths in the file (and in
/// flag overrides) resolve against the config file's directory.
struct RunConfig {
  fs::path workdir;
  fs::path trips, zones;  // may be empty; commands check what they need
  int interval_minutes = 60;
  std::optional<int64_t> first_day, last_day;
  bool wrap_midnight = true;
  uint64_t seed = 42;
  SplitPolicy split;
  double validation_ratio = 0.1;
  GraphClamps clamps;
  bool mobility_train_only = true;
  json model_overrides = json::object();
  TrainingConfig training;
  BaselineSettings baselines;
  json snapshot;  // effective config as parsed, embedded in checkpoints
};

/// Flag-level overrides collected by CLI11 before the file is read.
struct Overrides {
  std::optional<std::string> workdir, trips, zones;
  std::optional<uint64_t> seed;
  std::optional<size_t> epochs;
  std::optional<int> interval_minutes;
};

void reject_unknown_keys(const json& j, const std::string& section,
                         std::initializer_list<const char*> allowed) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* key : allowed) known = known || item.key() == key;
    if (!known) throw ConfigError(section + ": unknown key \"" + item.key() + "\"");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& section) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

int64_t parse_config_date(const json& j, const char* key, const std::string& section) {
  const auto text = get_or<std::string>(j, key, "", section);
  const auto day = parse_date(text);
  if (!day) throw ConfigError(section + "." + key + ": not a date: \"" + text + "\"");
  return *day;
}

SplitPolicy parse_split(const json& j) {
  reject_unknown_keys(j, "split", {"policy", "ratio", "boundary_day"});
  SplitPolicy policy;
  const auto kind = get_or<std::string>(j, "policy", "ratio", "split");
  if (kind == "ratio") {
    policy.kind = SplitPolicy::Kind::kRatio;
    policy.ratio = get_or<double>(j, "ratio", policy.ratio, "split");
  } else if (kind == "boundary") {
    policy.kind = SplitPolicy::Kind::kBoundaryDay;
    if (!j.contains("boundary_day")) throw ConfigError("split.boundary_day: required");
    policy.boundary_day = parse_config_date(j, "boundary_day", "split");
  } else {
    throw ConfigError("split.policy: expected \"ratio\" or \"boundary\", got \"" + kind + "\"");
  }
  return policy;
}

BaselineSettings parse_baselines(const json& j) {
  reject_unknown_keys(j, "baselines",
                      {"ha", "lasso", "mlp", "spatial_lstm", "lasso_lambda", "mlp_hidden",
                       "lstm_hidden", "lstm_latent", "epochs"});
  BaselineSettings b;
  b.ha = get_or<bool>(j, "ha", b.ha, "baselines");
  b.lasso = get_or<bool>(j, "lasso", b.lasso, "baselines");
  b.mlp = get_or<bool>(j, "mlp", b.mlp, "baselines");
  b.spatial_lstm = get_or<bool>(j, "spatial_lstm", b.spatial_lstm, "baselines");
  b.lasso_lambda = get_or<double>(j, "lasso_lambda", b.lasso_lambda, "baselines");
  b.mlp_hidden = get_or<size_t>(j, "mlp_hidden", b.mlp_hidden, "baselines");
  b.lstm_hidden = get_or<std::vector<size_t>>(j, "lstm_hidden", b.lstm_hidden, "baselines");
  b.lstm_latent = get_or<size_t>(j, "lstm_latent", b.lstm_latent, "baselines");
  b.epochs = get_or<size_t>(j, "epochs", b.epochs, "baselines");
  if (b.lasso_lambda < 0.0) throw ConfigError("baselines.lasso_lambda: must be >= 0");
  if (b.mlp_hidden == 0) throw ConfigError("baselines.mlp_hidden: must be positive");
  if (b.lstm_hidden.empty()) throw ConfigError("baselines.lstm_hidden: needs at least one layer");
  for (size_t h : b.lstm_hidden)
    if (h == 0) throw ConfigError("baselines.lstm_hidden: widths must be positive");
  return b;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

RunConfig load_run_config(const fs::path& config_path, const Overrides& flags) {
  json j = read_json_file(config_path);
  if (!j.is_object()) throw ConfigError(config_path.string() + ": top level must be an object");

  if (flags.workdir) j["workdir"] = *flags.workdir;
  if (flags.trips) j["trips"] = *flags.trips;
  if (flags.zones) j["zones"] = *flags.zones;
  if (flags.seed) j["seed"] = *flags.seed;
  if (flags.interval_minutes) j["interval_minutes"] = *flags.interval_minutes;
  if (flags.epochs) j["training"]["epochs"] = *flags.epochs;

  reject_unknown_keys(j, "config",
                      {"version", "workdir", "trips", "zones", "interval_minutes", "first_day",
                       "last_day", "wrap_midnight", "seed", "split", "validation_ratio", "graphs",
                       "model", "training", "baselines"});
  const int version = get_or<int>(j, "version", kConfigVersion, "config");
  if (version != kConfigVersion)
    throw ConfigError("config.version: expected " + std::to_string(kConfigVersion) + ", got " +
                      std::to_string(version));

  RunConfig rc;
  const fs::path base = config_path.has_parent_path() ? config_path.parent_path() : fs::path(".");
  const auto resolve = [&base](const std::string& p) -> fs::path {
    if (p.empty()) return {};
    fs::path candidate(p);
    return candidate.is_absolute() ? candidate : base / candidate;
  };

  rc.workdir = resolve(get_or<std::string>(j, "workdir", "work", "config"));
  rc.trips = resolve(get_or<std::string>(j, "trips", "", "config"));
  rc.zones = resolve(get_or<std::string>(j, "zones", "", "config"));
  rc.interval_minutes = get_or<int>(j, "interval_minutes", rc.interval_minutes, "config");
  if (rc.interval_minutes <= 0 || 1440 % rc.interval_minutes != 0)
    throw ConfigError("config.interval_minutes: must divide 1440");
  if (j.contains("first_day")) rc.first_day = parse_config_date(j, "first_day", "config");
  if (j.contains("last_day")) rc.last_day = parse_config_date(j, "last_day", "config");
  if (rc.first_day && rc.last_day && *rc.first_day > *rc.last_day)
    throw ConfigError("config: first_day is after last_day");
  rc.wrap_midnight = get_or<bool>(j, "wrap_midnight", rc.wrap_midnight, "config");
  rc.seed = get_or<uint64_t>(j, "seed", rc.seed, "config");
  if (j.contains("split")) rc.split = parse_split(j.at("split"));
  rc.validation_ratio = get_or<double>(j, "validation_ratio", rc.validation_ratio, "config");
  if (rc.validation_ratio < 0.0 || rc.validation_ratio >= 1.0)
    throw ConfigError("config.validation_ratio: must be in [0, 1)");

  if (j.contains("graphs")) {
    const json& g = j.at("graphs");
    reject_unknown_keys(g, "graphs", {"feature_eps", "distance_floor_km", "mobility_train_only"});
    rc.clamps.feature_eps = get_or<double>(g, "feature_eps", rc.clamps.feature_eps, "graphs");
    rc.clamps.distance_floor_km =
        get_or<double>(g, "distance_floor_km", rc.clamps.distance_floor_km, "graphs");
    rc.mobility_train_only =
        get_or<bool>(g, "mobility_train_only", rc.mobility_train_only, "graphs");
    if (rc.clamps.feature_eps <= 0.0 || rc.clamps.distance_floor_km <= 0.0)
      throw ConfigError("graphs: clamps must be positive");
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    // n, k and lags come from the data; only the widths are configurable
    reject_unknown_keys(m, "model",
                        {"block_widths", "lstm_hidden", "v1", "v2", "post_sum_activation",
                         "hidden_activation"});
    rc.model_overrides = m;
  }

  {
    TrainingConfig defaults;
    defaults.seed = rc.seed;
    json merged = defaults.to_json();
    if (j.contains("training")) {
      const json& t = j.at("training");
      reject_unknown_keys(t, "training",
                          {"learning_rate", "lr_decay", "batch_size", "epochs", "l2_weight",
                           "seed", "shuffle", "sample_with_replacement", "patience"});
      for (const auto& item : t.items()) merged[item.key()] = item.value();
    }
    rc.training = TrainingConfig::from_json(merged);
  }

  if (j.contains("baselines")) rc.baselines = parse_baselines(j.at("baselines"));

  rc.snapshot = j;
  return rc;
}

/// Artifact addresses inside the workdir.
struct Workspace {
  fs::path dir, cube, ingest_report, graphs, checkpoint, train_log, metrics_csv, metrics_json,
      prediction;

  explicit Workspace(fs::path d) : dir(std::move(d)) {
    cube = dir / "cube.bin";
    ingest_report = dir / "ingest_report.json";
    graphs = dir / "graphs.bin";
    checkpoint = dir / "checkpoint.bin";
    train_log = dir / "train_log.csv";
    metrics_csv = dir / "metrics.csv";
    metrics_json = dir / "metrics.json";
    prediction = dir / "prediction.csv";
  }

  fs::path grid(const std::string& model_name) const {
    return dir / ("grid_" + model_name + ".csv");
  }
};

void need_file(const fs::path& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string(what) + ": no path configured");
  if (!fs::exists(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
}

void write_json_atomic(const fs::path& path, const json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------- pipeline

ZoneTable load_zones(const RunConfig& rc) {
  need_file(rc.zones, "zones file");
  return ZoneTable::from_csv(rc.zones);
}

DemandCube load_workdir_cube(const Workspace& ws) {
  need_file(ws.cube, "demand cube (run ingest first)");
  return load_cube(ws.cube);
}

ODGraphSet load_workdir_graphs(const Workspace& ws) {
  need_file(ws.graphs, "graph set (run graphs first)");
  return load_graph_set(ws.graphs);
}

void check_pair_count(const DemandCube& cube, const ODPairIndex& pairs) {
  if (cube.pairs() != pairs.size())
    throw DataError("cube covers " + std::to_string(cube.pairs()) + " OD pairs but the zone file "
                    "implies " + std::to_string(pairs.size()));
}

/// Chronological split of the train side: the trailing fraction becomes
/// the early-stopping validation set.
std::pair<std::vector<TrainingInstance>, std::vector<TrainingInstance>> holdout_split(
    std::vector<TrainingInstance> train, double ratio) {
  const size_t n_val = static_cast<size_t>(static_cast<double>(train.size()) * ratio);
  std::vector<TrainingInstance> val(train.end() - static_cast<ptrdiff_t>(n_val), train.end());
  train.resize(train.size() - n_val);
  return {std::move(train), std::move(val)};
}

struct SplitData {
  std::vector<TrainingInstance> train, val, test;
};

SplitData make_splits(const DemandCube& cube, const RunConfig& rc) {
  auto data = build_dataset(cube, rc.wrap_midnight);
  auto [train_full, test] = split_dataset(std::move(data), rc.split, cube);
  auto [train, val] = holdout_split(std::move(train_full), rc.validation_ratio);
  return {std::move(train), std::move(val), std::move(test)};
}

ModelConfig resolve_model_config(const RunConfig& rc, size_t n, size_t k) {
  ModelConfig defaults;
  defaults.n = n;
  defaults.k = k;
  json merged = defaults.to_json();
  for (const auto& item : rc.model_overrides.items()) merged[item.key()] = item.value();
  return ModelConfig::from_json(merged);
}

/// [M x N] model predictions in fixed-size batches.
Tensor predict_rows(const ForecastNet& net, const std::vector<TrainingInstance>& set, size_t n,
                    size_t batch_size) {
  Tensor out({set.size(), n});
  for (size_t start = 0; start < set.size(); start += batch_size) {
    const size_t stop = std::min(set.size(), start + batch_size);
    std::vector<const TrainingInstance*> batch;
    for (size_t i = start; i < stop; ++i) batch.push_back(&set[i]);
    const Tensor block = net.predict(batch);
    std::copy(block.data(), block.data() + block.numel(), out.data() + start * n);
  }
  return out;
}

// ---------------------------------------------------------------- commands

void cmd_ingest(const RunConfig& rc) {
  need_file(rc.trips, "trips file");
  if (!rc.first_day || !rc.last_day)
    throw ConfigError("ingest needs first_day and last_day in the config");
  const ZoneTable zones = load_zones(rc);
  const ODPairIndex pairs = ODPairIndex::all_pairs(zones);

  IngestReport report;
  const DemandCube cube = aggregate_demand(rc.trips, pairs, rc.interval_minutes, *rc.first_day,
                                           *rc.last_day, report);

  const Workspace ws(rc.workdir);
  fs::create_directories(ws.dir);
  save_cube(ws.cube, cube);

  json rejects = json::array();
  for (const auto& [line, reason] : report.reject_lines)
    rejects.push_back({{"line", line}, {"reason", reason}});
  write_json_atomic(ws.ingest_report,
                    {{"accepted", report.accepted},
                     {"rejected", report.rejected},
                     {"out_of_range", report.out_of_range},
                     {"residual", report.residual},
                     {"cube", {{"days", cube.days()},
                               {"intervals", cube.intervals()},
                               {"pairs", cube.pairs()},
                               {"first_day", cube.date_of_day(0)},
                               {"last_day", cube.date_of_day(cube.days() - 1)},
                               {"interval_minutes", cube.interval_minutes()},
                               {"total", cube.total()}}},
                     {"reject_lines", rejects}});

  std::printf("ingested %zu trips (%zu rejected, %zu out of range, %zu residual)\n",
              report.accepted, report.rejected, report.out_of_range, report.residual);
  std::printf("cube: %zu days x %zu intervals x %zu pairs -> %s\n", cube.days(), cube.intervals(),
              cube.pairs(), ws.cube.string().c_str());
}

void cmd_graphs(const RunConfig& rc) {
  const ZoneTable zones = load_zones(rc);
  const ODPairIndex pairs = ODPairIndex::all_pairs(zones);
  const Workspace ws(rc.workdir);
  const DemandCube cube = load_workdir_cube(ws);
  check_pair_count(cube, pairs);

  // the mobility graph sees only the training period unless configured off
  size_t day_end = cube.days();
  if (rc.mobility_train_only) {
    auto data = build_dataset(cube, rc.wrap_midnight);
    auto [train_full, test] = split_dataset(std::move(data), rc.split, cube);
    day_end = train_full.back().day + 1;
  }
  const Tensor series = pair_series(cube, 0, day_end);
  const ODGraphSet set = build_graph_set(pairs, zones, series, rc.clamps);
  save_graph_set(ws.graphs, set);

  std::printf("built %zu graphs over %zu OD pairs (mobility history: %zu days) -> %s\n", set.k(),
              set.n(), day_end, ws.graphs.string().c_str());
  for (const auto& name : set.names) std::printf("  %s\n", name.c_str());
}

void cmd_train(const RunConfig& rc) {
  const Workspace ws(rc.workdir);
  const DemandCube cube = load_workdir_cube(ws);
  const ODGraphSet gset = load_workdir_graphs(ws);
  const SplitData splits = make_splits(cube, rc);

  const ModelConfig mcfg = resolve_model_config(rc, cube.pairs(), gset.k());
  Model model(mcfg);
  model.init_params(rc.seed);
  ForecastNet net(model, model.stack_graphs(gset));

  std::printf("training on %zu instances (%zu validation, %zu test held out)\n",
              splits.train.size(), splits.val.size(), splits.test.size());

  json meta = {{"config", rc.snapshot}};
  fs::create_directories(ws.dir);
  TrainResult result;
  try {
    result = fit(net, splits.train, splits.val, rc.training);
  } catch (const DivergenceError&) {
    // fit already restored the last completed epoch; keep it reachable
    meta["diverged"] = true;
    save_checkpoint(ws.checkpoint, model, meta);
    throw;
  }

  model.params().restore(result.best_params);
  meta["best_epoch"] = result.best_epoch;
  meta["best_val"] = result.best_val;
  meta["early_stopped"] = result.early_stopped;
  meta["epochs_run"] = result.log.size();
  save_checkpoint(ws.checkpoint, model, meta);
  write_epoch_log(ws.train_log, result.log);

  if (!result.log.empty()) {
    const EpochLog& last = result.log.back();
    std::printf("ran %zu epochs: train loss %.6g, validation %.6g%s\n", result.log.size(),
                last.train_loss, last.val_loss, result.early_stopped ? " (early stop)" : "");
    if (result.best_epoch > 0)
      std::printf("best epoch %zu (validation %.6g)\n", result.best_epoch, result.best_val);
  }
  std::printf("checkpoint -> %s\n", ws.checkpoint.string().c_str());
}

TrainingConfig baseline_training_config(const RunConfig& rc, uint64_t seed) {
  TrainingConfig cfg = rc.training;
  if (rc.baselines.epochs > 0) cfg.epochs = rc.baselines.epochs;
  cfg.seed = seed;
  return cfg;
}

void cmd_evaluate(const RunConfig& rc, const fs::path& checkpoint_override) {
  const ZoneTable zones = load_zones(rc);
  const ODPairIndex pairs = ODPairIndex::all_pairs(zones);
  const Workspace ws(rc.workdir);
  const DemandCube cube = load_workdir_cube(ws);
  check_pair_count(cube, pairs);
  const ODGraphSet gset = load_workdir_graphs(ws);

  const fs::path ckpt = checkpoint_override.empty() ? ws.checkpoint : checkpoint_override;
  need_file(ckpt, "checkpoint");
  Model model = load_checkpoint(ckpt);
  ForecastNet net(model, model.stack_graphs(gset));

  SplitData splits = make_splits(cube, rc);
  if (splits.test.empty()) throw DataError("test split is empty");

  // HA needs four weeks of history; when enabled, restrict the comparison
  // to instances every model can serve so the rows stay comparable
  bool ha_enabled = rc.baselines.ha;
  bool restricted = false;
  std::vector<TrainingInstance> eval_set;
  if (ha_enabled) {
    for (const auto& inst : splits.test)
      if (inst.day >= 28) eval_set.push_back(inst);
    if (eval_set.empty()) {
      std::printf("note: no test instance has 28 days of history; skipping the HA row\n");
      ha_enabled = false;
      eval_set = splits.test;
    } else if (eval_set.size() < splits.test.size()) {
      restricted = true;
      std::printf("note: restricting evaluation to %zu of %zu test instances with full HA history\n",
                  eval_set.size(), splits.test.size());
    }
  } else {
    eval_set = splits.test;
  }

  const Tensor targets = stack_targets(eval_set);
  std::vector<ComparisonRow> rows;
  std::vector<Tensor> predictions;
  const auto add_row = [&](const std::string& name, Tensor pred) {
    rows.push_back({name, compute_metrics(pred, targets)});
    predictions.push_back(std::move(pred));
  };

  add_row("odcast", predict_rows(net, eval_set, cube.pairs(), rc.training.batch_size));
  if (ha_enabled) add_row("ha", ha_predictions(cube, eval_set));
  if (rc.baselines.lasso) {
    const LassoModel lasso = fit_lasso(splits.train, rc.baselines.lasso_lambda);
    if (!lasso.converged)
      std::printf("note: lasso stopped at max sweeps (last delta %.3g)\n", lasso.final_delta);
    add_row("lasso", lasso.predict_all(eval_set));
  }
  if (rc.baselines.mlp) {
    MlpBaseline mlp(rc.baselines.mlp_hidden, rc.seed + 1);
    fit(mlp, splits.train, splits.val, baseline_training_config(rc, rc.seed + 11));
    add_row("mlp", mlp.predict_all(eval_set));
  }
  if (rc.baselines.spatial_lstm) {
    const size_t latent = rc.baselines.lstm_latent == 0 ? cube.pairs() : rc.baselines.lstm_latent;
    SpatialLstmBaseline lstm(cube.pairs(), rc.baselines.lstm_hidden, latent, rc.seed + 2);
    fit(lstm, splits.train, splits.val, baseline_training_config(rc, rc.seed + 12));
    add_row("spatial_lstm", lstm.predict_all(eval_set));
  }

  // grids are written per model before ranking reorders the rows
  std::vector<std::string> zone_ids;
  for (const auto& z : zones.zones()) zone_ids.push_back(z.id);
  fs::create_directories(ws.dir);
  for (size_t i = 0; i < rows.size(); ++i) {
    const Tensor grid = per_pair_mae_grid(predictions[i], targets, pairs, zones.size());
    write_grid_csv(ws.grid(rows[i].name), grid, zone_ids);
  }

  const auto ranked = rank_by_rmse(rows);
  write_comparison_csv(ws.metrics_csv, ranked);
  write_json_atomic(ws.metrics_json, {{"rows", comparison_json(ranked)},
                                      {"test_instances", eval_set.size()},
                                      {"restricted_to_ha_window", restricted}});

  std::printf("evaluated %zu models on %zu instances x %zu pairs\n", ranked.size(),
              eval_set.size(), cube.pairs());
  std::printf("%-14s %12s %12s %12s\n", "model", "rmse", "mae", "mape");
  for (const auto& row : ranked) {
    if (row.metrics.mape_defined)
      std::printf("%-14s %12.6g %12.6g %12.6g\n", row.name.c_str(), row.metrics.rmse,
                  row.metrics.mae, row.metrics.mape);
    else
      std::printf("%-14s %12.6g %12.6g %12s\n", row.name.c_str(), row.metrics.rmse,
                  row.metrics.mae, "n/a");
  }
  std::printf("reports -> %s, %s\n", ws.metrics_csv.string().c_str(),
              ws.metrics_json.string().c_str());
}

void cmd_predict(const RunConfig& rc, const fs::path& checkpoint_override,
                 const std::string& date_text, int64_t interval, const fs::path& out_override) {
  const ZoneTable zones = load_zones(rc);
  const ODPairIndex pairs = ODPairIndex::all_pairs(zones);
  const Workspace ws(rc.workdir);
  const DemandCube cube = load_workdir_cube(ws);
  check_pair_count(cube, pairs);
  const ODGraphSet gset = load_workdir_graphs(ws);

  const fs::path ckpt = checkpoint_override.empty() ? ws.checkpoint : checkpoint_override;
  need_file(ckpt, "checkpoint");
  Model model = load_checkpoint(ckpt);
  ForecastNet net(model, model.stack_graphs(gset));

  const auto day = parse_date(date_text);
  if (!day) throw ConfigError("not a date: \"" + date_text + "\"");
  if (interval < 0 || interval >= static_cast<int64_t>(cube.intervals()))
    throw ConfigError("interval " + std::to_string(interval) + " outside [0, " +
                      std::to_string(cube.intervals()) + ")");
  const int64_t d = *day - cube.first_day();

  const auto coords =
      window_lag_coordinates(d, interval, static_cast<int64_t>(cube.intervals()), rc.wrap_midnight);
  for (const auto& c : coords) {
    if (c.day >= 0 && c.day < static_cast<int64_t>(cube.days()) && c.interval >= 0) continue;
    // coordinates are chronological, so the first miss is the earliest
    throw DataError("lag history missing; earliest missing cell: day " +
                    civil_from_days(cube.first_day() + c.day) + " interval " +
                    std::to_string(c.interval));
  }

  TrainingInstance inst;
  inst.features = Tensor({cube.pairs(), 4});
  inst.target = Tensor({cube.pairs()});
  for (size_t i = 0; i < cube.pairs(); ++i)
    for (size_t c = 0; c < 4; ++c)
      inst.features[i * 4 + c] = cube.at(static_cast<size_t>(coords[c].day),
                                         static_cast<size_t>(coords[c].interval), i);

  const Tensor pred = net.predict({&inst});  // [1 x N]

  std::string out = "origin,destination,demand\n";
  for (size_t i = 0; i < pairs.size(); ++i) {
    const auto& [origin, dest] = pairs.pair(i);
    out += origin + "," + dest + "," + format_value(std::max(0.0, pred[i])) + "\n";
  }
  const fs::path out_path = out_override.empty() ? ws.prediction : out_override;
  fs::create_directories(out_path.parent_path().empty() ? fs::path(".") : out_path.parent_path());
  write_file_atomic(out_path, out);

  std::printf("predicted %zu OD pairs for %s interval %lld -> %s\n", pairs.size(),
              date_text.c_str(), static_cast<long long>(interval), out_path.string().c_str());
}

// -------------------------------------------------------------- gradcheck

struct CheckResult {
  std::string name;
  double max_err = 0.0;
};

/// Runs the finite-difference suite over every primitive, every layer and
/// a reduced end-to-end network. Returns true when all checks pass.
bool run_gradcheck(uint64_t seed, double tolerance) {
  Rng rng(seed);
  // keep values away from the relu kink so central differences stay clean
  const auto rand_tensor = [&rng](std::vector<size_t> shape) {
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) {
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      t[i] = sign * rng.uniform(0.2, 1.0);
    }
    return t;
  };

  std::vector<CheckResult> results;
  const auto check = [&results](const std::string& name, const std::function<Var(Tape&, Var)>& f,
                                const Tensor& x) {
    results.push_back({name, gradient_check(f, x)});
  };

  {
    const Tensor a = rand_tensor({3, 4}), b = rand_tensor({4, 5});
    check("op/matmul/left", [&](Tape& t, Var x) { return t.sum(t.matmul(x, t.leaf(b))); }, a);
    check("op/matmul/right", [&](Tape& t, Var x) { return t.sum(t.matmul(t.leaf(a), x)); }, b);
  }
  {
    const Tensor a = rand_tensor({2, 3, 4}), b = rand_tensor({2, 4, 2});
    const Tensor shared = rand_tensor({3, 4});
    check("op/batch_dot/left", [&](Tape& t, Var x) { return t.sum(t.batch_dot(x, t.leaf(b))); },
          a);
    check("op/batch_dot/right", [&](Tape& t, Var x) { return t.sum(t.batch_dot(t.leaf(a), x)); },
          b);
    check("op/batch_dot/shared_left",
          [&](Tape& t, Var x) { return t.sum(t.batch_dot(x, t.leaf(b))); }, shared);
  }
  {
    const Tensor a = rand_tensor({2, 3, 4});
    const Tensor m = rand_tensor({4, 3, 2});
    check("op/reshape",
          [&](Tape& t, Var x) {
            return t.sum(t.mul(t.reshape(x, {4, 3, 2}), t.leaf(m)));
          },
          a);
    check("op/transpose",
          [&](Tape& t, Var x) {
            return t.sum(t.mul(t.transpose(x, {2, 1, 0}), t.leaf(m)));
          },
          a);
    check("op/slice_last",
          [&](Tape& t, Var x) {
            const Tensor w = Tensor::full({2, 3, 2}, 0.7);
            return t.sum(t.mul(t.slice_last(x, 1, 2), t.leaf(w)));
          },
          a);
    const Tensor other = Tensor::full({2, 3, 2}, 0.3);
    // weight the halves differently so a swapped layout would show
    const Tensor cat_w = rand_tensor({2, 3, 6});
    check("op/concat_last",
          [&](Tape& t, Var x) {
            return t.sum(t.mul(t.concat_last(x, t.leaf(other)), t.leaf(cat_w)));
          },
          a);
    const Tensor step_w = rand_tensor({2, 4});
    check("op/step",
          [&](Tape& t, Var x) { return t.sum(t.mul(t.step(x, 1), t.leaf(step_w))); }, a);
  }
  for (const Activation act : {Activation::kRelu, Activation::kTanh, Activation::kSigmoid}) {
    const Tensor a = rand_tensor({3, 5});
    check("op/activation/" + activation_name(act),
          [&, act](Tape& t, Var x) { return t.sum(t.activation(act, x)); }, a);
  }
  {
    const Tensor x = rand_tensor({3, 4}), w = rand_tensor({4, 2}), b = rand_tensor({2});
    check("op/affine/x",
          [&](Tape& t, Var v) { return t.sum(t.affine(v, t.leaf(w), t.leaf(b))); }, x);
    check("op/affine/w",
          [&](Tape& t, Var v) { return t.sum(t.affine(t.leaf(x), v, t.leaf(b))); }, w);
    check("op/affine/b",
          [&](Tape& t, Var v) { return t.sum(t.affine(t.leaf(x), t.leaf(w), v)); }, b);
  }

  // one multi-graph convolution: gradients through both operands
  {
    const size_t n = 4, k = 2, f = 3, o = 2;
    std::vector<Tensor> mats;
    for (size_t g = 0; g < k; ++g) {
      Tensor raw({n, n});
      for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) raw[i * n + j] = raw[j * n + i] = rng.uniform();
      mats.push_back(normalize_adjacency(raw));
    }
    const Tensor gstack = stack_matrices(mats);
    const Tensor h = rand_tensor({2, n, f}), w = rand_tensor({k * f, o});
    check("layer/mgc/h",
          [&](Tape& t, Var x) {
            return t.sum(mgc_apply(t, t.leaf(gstack), x, t.leaf(w), Activation::kTanh, k));
          },
          h);
    check("layer/mgc/w",
          [&](Tape& t, Var x) {
            return t.sum(mgc_apply(t, t.leaf(gstack), t.leaf(h), x, Activation::kTanh, k));
          },
          w);
  }
  {
    const size_t b = 2, f = 3, hdim = 2;
    const Tensor x = rand_tensor({b, f}), h0 = rand_tensor({b, hdim}), c0 = rand_tensor({b, hdim});
    const Tensor wx = rand_tensor({f, 4 * hdim}), wh = rand_tensor({hdim, 4 * hdim});
    const Tensor bias = rand_tensor({4 * hdim});
    const auto cell_sum = [&](Tape& t, Var vx, Var vh, Var vc, Var vwx, Var vwh, Var vb) {
      auto [h1, c1] = lstm_cell(t, vx, vh, vc, vwx, vwh, vb);
      return t.sum(t.add(h1, c1));
    };
    check("layer/lstm/x",
          [&](Tape& t, Var v) {
            return cell_sum(t, v, t.leaf(h0), t.leaf(c0), t.leaf(wx), t.leaf(wh), t.leaf(bias));
          },
          x);
    check("layer/lstm/wx",
          [&](Tape& t, Var v) {
            return cell_sum(t, t.leaf(x), t.leaf(h0), t.leaf(c0), v, t.leaf(wh), t.leaf(bias));
          },
          wx);
    check("layer/lstm/wh",
          [&](Tape& t, Var v) {
            return cell_sum(t, t.leaf(x), t.leaf(h0), t.leaf(c0), t.leaf(wx), v, t.leaf(bias));
          },
          wh);
    check("layer/lstm/b",
          [&](Tape& t, Var v) {
            return cell_sum(t, t.leaf(x), t.leaf(h0), t.leaf(c0), t.leaf(wx), t.leaf(wh), v);
          },
          bias);
  }

  // reduced end-to-end network: every parameter plus the input window;
  // tanh keeps the landscape smooth for finite differences
  {
    ModelConfig cfg;
    cfg.n = 6;
    cfg.k = 2;
    cfg.block_widths = {2, 2, 4};
    cfg.lstm_hidden = {3, 2};
    cfg.v2 = 4;
    cfg.hidden_activation = Activation::kTanh;
    Model model(cfg);
    model.init_params(seed + 1);

    std::vector<Tensor> mats;
    for (size_t g = 0; g < cfg.k; ++g) {
      Tensor raw({cfg.n, cfg.n});
      for (size_t i = 0; i < cfg.n; ++i)
        for (size_t j = i + 1; j < cfg.n; ++j) raw[i * cfg.n + j] = raw[j * cfg.n + i] = rng.uniform();
      mats.push_back(normalize_adjacency(raw));
    }
    const Tensor gstack = stack_matrices(mats);
    const Tensor x = rand_tensor({2, cfg.n, cfg.lags});

    for (size_t p = 0; p < model.params().size(); ++p) {
      check("net/" + model.params().name(p),
            [&, p](Tape& t, Var v) {
              BoundParams bp = model.bind(t, false);
              bp.vars[p] = v;
              return t.sum(model.forward(t, bp, t.leaf(gstack), t.leaf(x)));
            },
            model.params().value(p));
    }
    check("net/input",
          [&](Tape& t, Var v) {
            const BoundParams bp = model.bind(t, false);
            return t.sum(model.forward(t, bp, t.leaf(gstack), v));
          },
          x);
  }

  double worst = 0.0;
  size_t failures = 0;
  std::printf("gradient check: seed %llu, tolerance %g\n",
              static_cast<unsigned long long>(seed), tolerance);
  for (const auto& r : results) {
    const bool ok = r.max_err < tolerance;
    worst = std::max(worst, r.max_err);
    if (!ok) ++failures;
    std::printf("  %-28s %10.3e  %s\n", r.name.c_str(), r.max_err, ok ? "ok" : "FAIL");
  }
  if (failures == 0)
    std::printf("all %zu checks passed (worst %.3e)\n", results.size(), worst);
  else
    std::printf("%zu of %zu checks FAILED (worst %.3e)\n", failures, results.size(), worst);
  return failures == 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"origin-destination demand forecasting pipeline"};
  app.require_subcommand(1);

  std::string config_path = "config.json";
  app.add_option("-c,--config", config_path, "run config file (JSON)")
      ->capture_default_str();

  Overrides flags;
  const auto add_common = [&flags](CLI::App* cmd) {
    cmd->add_option_function<std::string>(
        "--workdir", [&flags](const std::string& v) { flags.workdir = v; },
        "artifact directory (overrides config)");
    cmd->add_option_function<uint64_t>(
        "--seed", [&flags](uint64_t v) { flags.seed = v; }, "seed (overrides config)");
  };

  CLI::App* ingest = app.add_subcommand("ingest", "aggregate trip records into a demand cube");
  add_common(ingest);
  ingest->add_option_function<std::string>(
      "--trips", [&flags](const std::string& v) { flags.trips = v; }, "trip records CSV");
  ingest->add_option_function<std::string>(
      "--zones", [&flags](const std::string& v) { flags.zones = v; }, "zone metadata CSV");
  ingest->add_option_function<int>(
      "--interval-minutes", [&flags](int v) { flags.interval_minutes = v; },
      "aggregation interval length");

  CLI::App* graphs = app.add_subcommand("graphs", "build the OD-pair adjacency matrices");
  add_common(graphs);
  graphs->add_option_function<std::string>(
      "--zones", [&flags](const std::string& v) { flags.zones = v; }, "zone metadata CSV");

  CLI::App* train = app.add_subcommand("train", "fit the forecasting model");
  add_common(train);
  train->add_option_function<size_t>(
      "--epochs", [&flags](size_t v) { flags.epochs = v; }, "epoch count (overrides config)");

  CLI::App* evaluate = app.add_subcommand("evaluate", "compare the model against baselines");
  add_common(evaluate);
  std::string eval_checkpoint;
  evaluate->add_option("--checkpoint", eval_checkpoint, "checkpoint file (default: workdir)");
  evaluate->add_option_function<std::string>(
      "--zones", [&flags](const std::string& v) { flags.zones = v; }, "zone metadata CSV");
  evaluate->add_option_function<size_t>(
      "--epochs", [&flags](size_t v) { flags.epochs = v; }, "baseline epochs (overrides config)");

  CLI::App* predict = app.add_subcommand("predict", "forecast one interval");
  add_common(predict);
  std::string predict_checkpoint, predict_date, predict_out;
  int64_t predict_interval = 0;
  predict->add_option("--checkpoint", predict_checkpoint, "checkpoint file (default: workdir)");
  predict->add_option("--date", predict_date, "target date (YYYY-MM-DD)")->required();
  predict->add_option("--interval", predict_interval, "target interval index")->required();
  predict->add_option("--out", predict_out, "output CSV (default: workdir/prediction.csv)");

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "verify analytic gradients against finite differences");
  uint64_t gradcheck_seed = 42;
  double gradcheck_tolerance = 1e-4;
  gradcheck->add_option("--seed", gradcheck_seed, "fixture seed")->capture_default_str();
  gradcheck->add_option("--tolerance", gradcheck_tolerance, "max relative error")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(gradcheck)) return run_gradcheck(gradcheck_seed, gradcheck_tolerance) ? 0 : 1;

    const RunConfig rc = load_run_config(config_path, flags);
    if (app.got_subcommand(ingest)) cmd_ingest(rc);
    else if (app.got_subcommand(graphs)) cmd_graphs(rc);
    else if (app.got_subcommand(train)) cmd_train(rc);
    else if (app.got_subcommand(evaluate)) cmd_evaluate(rc, eval_checkpoint);
    else if (app.got_subcommand(predict))
      cmd_predict(rc, predict_checkpoint, predict_date, predict_interval, predict_out);
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
