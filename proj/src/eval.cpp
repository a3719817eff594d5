#include "odcast/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "odcast/errors.hpp"
#include "odcast/rng.hpp"
#include "odcast/serialize.hpp"

namespace odcast {

namespace {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void glorot_fill(ParamStore& p, uint64_t seed) {
  Rng rng(seed);
  for (size_t i = 0; i < p.size(); ++i) {
    Tensor& t = p.value(i);
    if (!p.is_weight(i)) {
      for (double& v : t.values()) v = 0.0;
      continue;
    }
    const double limit =
        std::sqrt(6.0 / (static_cast<double>(t.dim(0)) + static_cast<double>(t.dim(1))));
    for (double& v : t.values()) v = rng.uniform(-limit, limit);
  }
}

}  // namespace

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j{{"rmse", rmse},
                   {"mae", mae},
                   {"n_cells", n_cells},
                   {"n_mape_cells", n_mape_cells}};
  if (mape_defined)
    j["mape"] = mape;
  else
    j["mape"] = nullptr;
  return j;
}

MetricReport compute_metrics(const Tensor& predictions, const Tensor& targets) {
  if (!predictions.same_shape(targets))
    throw DimensionError("metrics: shape mismatch " + predictions.shape_str() + " vs " +
                         targets.shape_str());
  MetricReport r;
  r.n_cells = targets.numel();
  double sq = 0.0, abs_sum = 0.0, ratio_sum = 0.0;
  for (size_t i = 0; i < targets.numel(); ++i) {
    const double pred = std::max(0.0, predictions[i]);
    const double err = pred - targets[i];
    sq += err * err;
    abs_sum += std::abs(err);
    if (targets[i] > 1.0) {
      ratio_sum += std::abs(err) / targets[i];
      ++r.n_mape_cells;
    }
  }
  const double m = static_cast<double>(r.n_cells);
  r.rmse = std::sqrt(sq / m);
  r.mae = abs_sum / m;
  if (r.n_mape_cells > 0) {
    r.mape = ratio_sum / static_cast<double>(r.n_mape_cells);
    r.mape_defined = true;
  } else {
    r.mape = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

Tensor baseline_ha(const DemandCube& cube, size_t d, size_t t) {
  if (d < 28)
    throw ContractError("historical average needs four weeks of history, day " +
                        std::to_string(d) + " has less");
  if (d >= cube.days() || t >= cube.intervals())
    throw ContractError("historical average outside the cube");
  Tensor out({cube.pairs()});
  for (size_t i = 0; i < cube.pairs(); ++i) {
    double sum = 0.0;
    for (size_t k = 1; k <= 4; ++k) sum += cube.at(d - 7 * k, t, i);
    out[i] = sum / 4.0;
  }
  return out;
}

Tensor ha_predictions(const DemandCube& cube, const std::vector<TrainingInstance>& set) {
  if (set.empty()) throw ContractError("ha_predictions on an empty set");
  Tensor out({set.size(), cube.pairs()});
  for (size_t m = 0; m < set.size(); ++m) {
    const Tensor row = baseline_ha(cube, set[m].day, set[m].interval);
    std::copy(row.data(), row.data() + cube.pairs(), out.data() + m * cube.pairs());
  }
  return out;
}

Tensor stack_targets(const std::vector<TrainingInstance>& set) {
  if (set.empty()) throw ContractError("stack_targets on an empty set");
  const size_t n = set.front().target.dim(0);
  Tensor out({set.size(), n});
  for (size_t m = 0; m < set.size(); ++m) {
    if (set[m].target.dim(0) != n) throw DimensionError("inconsistent target widths");
    std::copy(set[m].target.data(), set[m].target.data() + n, out.data() + m * n);
  }
  return out;
}

double soft_threshold(double x, double lambda) {
  if (x > lambda) return x - lambda;
  if (x < -lambda) return x + lambda;
  return 0.0;
}

double LassoModel::predict_one(const double* features) const {
  double y = intercept;
  for (size_t j = 0; j < coef.size(); ++j) y += coef[j] * features[j];
  return y;
}

Tensor LassoModel::predict(const TrainingInstance& inst) const {
  const size_t n = inst.features.dim(0);
  if (inst.features.dim(1) != coef.size())
    throw DimensionError("instance has " + std::to_string(inst.features.dim(1)) +
                         " lag features, model expects " + std::to_string(coef.size()));
  Tensor out({n});
  for (size_t i = 0; i < n; ++i) out[i] = predict_one(inst.features.data() + i * coef.size());
  return out;
}

Tensor LassoModel::predict_all(const std::vector<TrainingInstance>& set) const {
  if (set.empty()) throw ContractError("predict_all on an empty set");
  const size_t n = set.front().features.dim(0);
  Tensor out({set.size(), n});
  for (size_t m = 0; m < set.size(); ++m) {
    const Tensor row = predict(set[m]);
    std::copy(row.data(), row.data() + n, out.data() + m * n);
  }
  return out;
}

LassoModel fit_lasso(const std::vector<TrainingInstance>& train_set, double lambda, double tol,
                     size_t max_sweeps) {
  if (train_set.empty()) throw DataError("lasso: empty training set");
  if (lambda < 0.0) throw ConfigError("lasso: lambda must be non-negative");
  const size_t f = train_set.front().features.dim(1);
  size_t samples = 0;
  for (const auto& inst : train_set) samples += inst.target.dim(0);
  const double m = static_cast<double>(samples);

  // pooled design matrix: every (instance, pair) is one sample
  std::vector<double> x(samples * f);
  std::vector<double> y(samples);
  size_t row = 0;
  for (const auto& inst : train_set) {
    const size_t n = inst.features.dim(0);
    if (inst.features.dim(1) != f) throw DimensionError("inconsistent lag widths in training set");
    for (size_t i = 0; i < n; ++i, ++row) {
      std::copy(inst.features.data() + i * f, inst.features.data() + (i + 1) * f,
                x.begin() + row * f);
      y[row] = inst.target[i];
    }
  }

  std::vector<double> x_mean(f, 0.0);
  double y_mean = 0.0;
  for (size_t s = 0; s < samples; ++s) {
    for (size_t j = 0; j < f; ++j) x_mean[j] += x[s * f + j];
    y_mean += y[s];
  }
  for (double& v : x_mean) v /= m;
  y_mean /= m;
  for (size_t s = 0; s < samples; ++s) {
    for (size_t j = 0; j < f; ++j) x[s * f + j] -= x_mean[j];
    y[s] -= y_mean;
  }

  std::vector<double> z(f, 0.0);  // per-coordinate curvature (1/m) sum x_j^2
  for (size_t s = 0; s < samples; ++s)
    for (size_t j = 0; j < f; ++j) z[j] += x[s * f + j] * x[s * f + j];
  for (double& v : z) v /= m;

  LassoModel model;
  model.coef.assign(f, 0.0);
  std::vector<double> residual = y;  // y_c - X_c * coef, kept incremental

  for (model.sweeps = 1; model.sweeps <= max_sweeps; ++model.sweeps) {
    double max_delta = 0.0;
    for (size_t j = 0; j < f; ++j) {
      if (z[j] == 0.0) continue;  // constant column stays at 0
      double rho = 0.0;
      for (size_t s = 0; s < samples; ++s)
        rho += x[s * f + j] * (residual[s] + x[s * f + j] * model.coef[j]);
      rho /= m;
      const double updated = soft_threshold(rho, lambda) / z[j];
      const double delta = updated - model.coef[j];
      if (delta != 0.0) {
        for (size_t s = 0; s < samples; ++s) residual[s] -= delta * x[s * f + j];
        model.coef[j] = updated;
      }
      max_delta = std::max(max_delta, std::abs(delta));
    }
    model.final_delta = max_delta;
    if (max_delta < tol) break;
  }
  model.converged = model.final_delta < tol;
  if (model.sweeps > max_sweeps) model.sweeps = max_sweeps;

  model.intercept = y_mean;
  for (size_t j = 0; j < f; ++j) model.intercept -= model.coef[j] * x_mean[j];
  return model;
}

MlpBaseline::MlpBaseline(size_t hidden, uint64_t seed) : hidden_(hidden) {
  if (hidden == 0) throw ConfigError("mlp baseline: hidden width must be positive");
  params_.add("w1", Tensor({4, hidden}), true);
  params_.add("b1", Tensor({hidden}), false);
  params_.add("w2", Tensor({hidden, 1}), true);
  params_.add("b2", Tensor({1}), false);
  glorot_fill(params_, seed);
}

Var MlpBaseline::forward(Tape& tape, const BoundParams& bp, Var features) const {
  const Tensor& fv = tape.value(features);  // [B x N x 4]
  const size_t b = fv.dim(0), n = fv.dim(1);
  Var flat = tape.reshape(features, {b * n, fv.dim(2)});
  Var h = tape.activation(Activation::kRelu, tape.affine(flat, bp.vars[0], bp.vars[1]));
  Var out = tape.affine(h, bp.vars[2], bp.vars[3]);
  return tape.reshape(out, {b, n, 1});
}

Var MlpBaseline::batch_objective(Tape& tape, const BoundParams& bp,
                                 const std::vector<const TrainingInstance*>& batch) {
  Var pred = forward(tape, bp, tape.leaf(batch_features(batch)));
  Var diff = tape.sub(pred, tape.leaf(batch_targets(batch)));
  return tape.sum(tape.mul(diff, diff));
}

Tensor MlpBaseline::predict(const std::vector<const TrainingInstance*>& batch) const {
  Tape tape;
  BoundParams bp;
  for (size_t i = 0; i < params_.size(); ++i) bp.vars.push_back(tape.leaf(params_.value(i)));
  const Tensor& out = tape.value(forward(tape, bp, tape.leaf(batch_features(batch))));
  return Tensor({out.dim(0), out.dim(1)}, out.values());
}

Tensor MlpBaseline::predict_all(const std::vector<TrainingInstance>& set) const {
  std::vector<const TrainingInstance*> batch;
  batch.reserve(set.size());
  for (const auto& inst : set) batch.push_back(&inst);
  return predict(batch);
}

SpatialLstmBaseline::SpatialLstmBaseline(size_t n, std::vector<size_t> hidden, size_t latent,
                                         uint64_t seed, Activation act)
    : n_(n), hidden_(std::move(hidden)), latent_(latent), act_(act) {
  if (n_ == 0 || latent_ == 0 || hidden_.empty())
    throw ConfigError("spatial lstm baseline: n, latent and hidden sizes must be positive");
  const size_t lags = 4;
  size_t in_dim = n_;
  for (size_t l = 0; l < hidden_.size(); ++l) {
    const size_t h = hidden_[l];
    if (h == 0) throw ConfigError("spatial lstm baseline: hidden sizes must be positive");
    LstmLayerSpec spec;
    spec.in_dim = in_dim;
    spec.hidden = h;
    const std::string base = "lstm/" + std::to_string(l);
    spec.wx = params_.add(base + "/wx", Tensor({in_dim, 4 * h}), true);
    spec.wh = params_.add(base + "/wh", Tensor({h, 4 * h}), true);
    spec.b = params_.add(base + "/b", Tensor({4 * h}), false);
    layers_.push_back(spec);
    in_dim = h;
  }
  to_latent_.in_dim = lags * hidden_.back();
  to_latent_.out_dim = latent_;
  to_latent_.w = params_.add("latent/w", Tensor({to_latent_.in_dim, latent_}), true);
  to_latent_.b = params_.add("latent/b", Tensor({latent_}), false);
  head_.in_dim = latent_;
  head_.out_dim = n_;
  head_.w = params_.add("head/w", Tensor({latent_, n_}), true);
  head_.b = params_.add("head/b", Tensor({n_}), false);
  glorot_fill(params_, seed);
  for (const auto& layer : layers_) {
    Tensor& b = params_.value(layer.b);
    for (size_t j = layer.hidden; j < 2 * layer.hidden; ++j) b[j] = 1.0;
  }
}

Var SpatialLstmBaseline::forward(Tape& tape, const BoundParams& bp, Var features) const {
  const Tensor& fv = tape.value(features);
  if (fv.rank() != 3 || fv.dim(1) != n_)
    throw DimensionError("spatial lstm baseline input must be [Bx" + std::to_string(n_) +
                         "x4], got " + fv.shape_str());
  const size_t b = fv.dim(0), lags = fv.dim(2);
  Var seq = tape.transpose(features, {0, 2, 1});
  std::vector<Var> steps;
  steps.reserve(lags);
  for (size_t t = 0; t < lags; ++t) steps.push_back(tape.step(seq, t));
  for (const auto& layer : layers_) {
    Var h = tape.leaf(Tensor({b, layer.hidden}));
    Var c = tape.leaf(Tensor({b, layer.hidden}));
    for (size_t t = 0; t < lags; ++t) {
      auto [hn, cn] =
          lstm_cell(tape, steps[t], h, c, bp.vars[layer.wx], bp.vars[layer.wh], bp.vars[layer.b]);
      h = hn;
      c = cn;
      steps[t] = h;
    }
  }
  Var flat = steps[0];
  for (size_t t = 1; t < lags; ++t) flat = tape.concat_last(flat, steps[t]);
  Var latent = tape.activation(act_, tape.affine(flat, bp.vars[to_latent_.w], bp.vars[to_latent_.b]));
  return tape.affine(latent, bp.vars[head_.w], bp.vars[head_.b]);  // [B x N], linear head
}

Var SpatialLstmBaseline::batch_objective(Tape& tape, const BoundParams& bp,
                                         const std::vector<const TrainingInstance*>& batch) {
  Var pred = forward(tape, bp, tape.leaf(batch_features(batch)));
  Tensor targets = batch_targets(batch);  // [B x N x 1]
  Var diff = tape.sub(pred, tape.leaf(Tensor({targets.dim(0), targets.dim(1)}, targets.values())));
  return tape.sum(tape.mul(diff, diff));
}

Tensor SpatialLstmBaseline::predict(const std::vector<const TrainingInstance*>& batch) const {
  Tape tape;
  BoundParams bp;
  for (size_t i = 0; i < params_.size(); ++i) bp.vars.push_back(tape.leaf(params_.value(i)));
  return tape.value(forward(tape, bp, tape.leaf(batch_features(batch))));
}

Tensor SpatialLstmBaseline::predict_all(const std::vector<TrainingInstance>& set) const {
  std::vector<const TrainingInstance*> batch;
  batch.reserve(set.size());
  for (const auto& inst : set) batch.push_back(&inst);
  return predict(batch);
}

std::vector<ComparisonRow> rank_by_rmse(std::vector<ComparisonRow> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
    return a.metrics.rmse < b.metrics.rmse;
  });
  return rows;
}

void write_comparison_csv(const std::filesystem::path& path,
                          const std::vector<ComparisonRow>& rows) {
  std::string out = "name,rmse,mae,mape,n_cells,n_mape_cells\n";
  for (const ComparisonRow& r : rows) {
    out += r.name + ',' + format_double(r.metrics.rmse) + ',' + format_double(r.metrics.mae) +
           ',' +
           format_double(r.metrics.mape_defined ? r.metrics.mape
                                                : std::numeric_limits<double>::quiet_NaN()) +
           ',' + std::to_string(r.metrics.n_cells) + ',' + std::to_string(r.metrics.n_mape_cells) +
           '\n';
  }
  write_file_atomic(path, out);
}

nlohmann::json comparison_json(const std::vector<ComparisonRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const ComparisonRow& r : rows) {
    nlohmann::json j = r.metrics.to_json();
    j["name"] = r.name;
    arr.push_back(std::move(j));
  }
  return arr;
}

Tensor per_pair_mae_grid(const Tensor& predictions, const Tensor& targets, const ODPairIndex& pairs,
                         size_t zone_count) {
  if (!predictions.same_shape(targets))
    throw DimensionError("grid: shape mismatch " + predictions.shape_str() + " vs " +
                         targets.shape_str());
  if (predictions.rank() != 2 || predictions.dim(1) != pairs.size())
    throw DimensionError("grid: expected [Mx" + std::to_string(pairs.size()) + "], got " +
                         predictions.shape_str());
  const size_t m = predictions.dim(0), n = pairs.size();
  Tensor grid = Tensor::full({zone_count, zone_count}, std::numeric_limits<double>::quiet_NaN());
  for (size_t i = 0; i < n; ++i) {
    double abs_sum = 0.0;
    for (size_t s = 0; s < m; ++s) {
      const double pred = std::max(0.0, predictions[s * n + i]);
      abs_sum += std::abs(pred - targets[s * n + i]);
    }
    grid[pairs.origin_index(i) * zone_count + pairs.dest_index(i)] =
        abs_sum / static_cast<double>(m);
  }
  return grid;
}

void write_grid_csv(const std::filesystem::path& path, const Tensor& grid,
                    const std::vector<std::string>& zone_ids) {
  const size_t z = zone_ids.size();
  if (grid.rank() != 2 || grid.dim(0) != z || grid.dim(1) != z)
    throw DimensionError("grid shape " + grid.shape_str() + " does not cover " +
                         std::to_string(z) + " zones");
  std::string out = "origin";
  for (const auto& id : zone_ids) out += ',' + id;
  out += '\n';
  for (size_t i = 0; i < z; ++i) {
    out += zone_ids[i];
    for (size_t j = 0; j < z; ++j) out += ',' + format_double(grid[i * z + j]);
    out += '\n';
  }
  write_file_atomic(path, out);
}

}  // namespace odcast
