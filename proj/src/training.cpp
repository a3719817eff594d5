#include "odcast/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

#include "odcast/errors.hpp"
#include "odcast/rng.hpp"
#include "odcast/serialize.hpp"

namespace odcast {

namespace {
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void TrainingConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("training: learning_rate must be positive");
  if (lr_decay < 0.0) throw ConfigError("training: lr_decay must be non-negative");
  if (batch_size == 0) throw ConfigError("training: batch_size must be at least 1");
  if (l2_weight < 0.0) throw ConfigError("training: l2_weight must be non-negative");
}

nlohmann::json TrainingConfig::to_json() const {
  return nlohmann::json{{"learning_rate", learning_rate},
                        {"lr_decay", lr_decay},
                        {"batch_size", batch_size},
                        {"epochs", epochs},
                        {"l2_weight", l2_weight},
                        {"seed", seed},
                        {"shuffle", shuffle},
                        {"sample_with_replacement", sample_with_replacement},
                        {"patience", patience}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
  TrainingConfig cfg;
  try {
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.lr_decay = j.at("lr_decay").get<double>();
    cfg.batch_size = j.at("batch_size").get<size_t>();
    cfg.epochs = j.at("epochs").get<size_t>();
    cfg.l2_weight = j.at("l2_weight").get<double>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.shuffle = j.at("shuffle").get<bool>();
    cfg.sample_with_replacement = j.at("sample_with_replacement").get<bool>();
    cfg.patience = j.at("patience").get<size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

AdamOptimizer::AdamOptimizer(const ParamStore& params, const TrainingConfig& cfg)
    : lr0_(cfg.learning_rate), decay_(cfg.lr_decay) {
  cfg.validate();
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params.value(i).shape());
    v_.emplace_back(params.value(i).shape());
  }
}

void AdamOptimizer::step(ParamStore& params, const std::vector<Tensor>& grads) {
  if (grads.size() != m_.size())
    throw ContractError("optimizer got " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(m_.size()) + " parameters");
  for (size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].same_shape(params.value(i)))
      throw ContractError("gradient shape mismatch at " + params.name(i));
    if (!grads[i].all_finite())
      throw DivergenceError("non-finite gradient for parameter " + params.name(i));
  }

  const double lr = next_lr();
  ++step_;
  const double t = static_cast<double>(step_);
  const double corr1 = 1.0 - std::pow(kBeta1, t);
  const double corr2 = 1.0 - std::pow(kBeta2, t);
  for (size_t i = 0; i < grads.size(); ++i) {
    Tensor& w = params.value(i);
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    const Tensor& g = grads[i];
    for (size_t j = 0; j < w.numel(); ++j) {
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g[j];
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g[j] * g[j];
      const double mhat = m[j] / corr1;
      const double vhat = v[j] / corr2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + kEps);
    }
  }
}

ForecastNet::ForecastNet(Model& model, Tensor graph_stack) : model_(model), graphs_(std::move(graph_stack)) {
  const size_t n = model_.config().n, k = model_.config().k;
  if (graphs_.rank() != 2 || graphs_.dim(0) != n * k || graphs_.dim(1) != n)
    throw DimensionError("graph stack must be [" + std::to_string(n * k) + "x" +
                         std::to_string(n) + "], got " + graphs_.shape_str());
}

Tensor batch_features(const std::vector<const TrainingInstance*>& batch) {
  if (batch.empty()) throw ContractError("empty batch");
  const size_t n = batch.front()->features.dim(0);
  const size_t lags = batch.front()->features.dim(1);
  Tensor out({batch.size(), n, lags});
  double* dst = out.data();
  for (const TrainingInstance* inst : batch) {
    if (inst->features.dim(0) != n || inst->features.dim(1) != lags)
      throw DimensionError("inconsistent feature shapes within a batch");
    const double* src = inst->features.data();
    std::copy(src, src + n * lags, dst);
    dst += n * lags;
  }
  return out;
}

Tensor batch_targets(const std::vector<const TrainingInstance*>& batch) {
  if (batch.empty()) throw ContractError("empty batch");
  const size_t n = batch.front()->target.dim(0);
  Tensor out({batch.size(), n, 1});
  double* dst = out.data();
  for (const TrainingInstance* inst : batch) {
    if (inst->target.dim(0) != n) throw DimensionError("inconsistent target shapes within a batch");
    const double* src = inst->target.data();
    std::copy(src, src + n, dst);
    dst += n;
  }
  return out;
}

Var ForecastNet::batch_objective(Tape& tape, const BoundParams& bp,
                             const std::vector<const TrainingInstance*>& batch) {
  Var pred = model_.forward(tape, bp, tape.leaf(graphs_), tape.leaf(batch_features(batch)));
  Var diff = tape.sub(pred, tape.leaf(batch_targets(batch)));
  return tape.sum(tape.mul(diff, diff));
}

Tensor ForecastNet::predict(const std::vector<const TrainingInstance*>& batch) const {
  Tape tape;
  BoundParams bp = model_.bind(tape, false);
  Var pred = model_.forward(tape, bp, tape.leaf(graphs_), tape.leaf(batch_features(batch)));
  const Tensor& out = tape.value(pred);  // [B x N x 1]
  return Tensor({out.dim(0), out.dim(1)}, out.values());
}

Var regularized_objective(Tape& tape, TrainableNet& net, const BoundParams& bp,
                          const std::vector<const TrainingInstance*>& batch, double alpha) {
  Var loss = net.batch_objective(tape, bp, batch);
  if (alpha == 0.0) return loss;
  const ParamStore& p = net.params();
  bool any = false;
  Var reg{};
  for (size_t i = 0; i < p.size(); ++i) {
    if (!p.is_weight(i)) continue;
    Var sq = tape.sum(tape.mul(bp.vars[i], bp.vars[i]));
    reg = any ? tape.add(reg, sq) : sq;
    any = true;
  }
  return any ? tape.add(loss, tape.scale(reg, alpha)) : loss;
}

namespace {

std::vector<std::vector<size_t>> plan_batches(size_t count, const TrainingConfig& cfg, Rng& rng) {
  std::vector<size_t> order(count);
  for (size_t i = 0; i < count; ++i) order[i] = i;
  std::vector<std::vector<size_t>> batches;
  const size_t n_batches = (count + cfg.batch_size - 1) / cfg.batch_size;
  if (cfg.sample_with_replacement) {
    for (size_t b = 0; b < n_batches; ++b) {
      std::vector<size_t> batch(cfg.batch_size);
      for (size_t& idx : batch) idx = rng.bounded(count);
      batches.push_back(std::move(batch));
    }
    return batches;
  }
  if (cfg.shuffle) rng.shuffle(order);
  for (size_t b = 0; b < n_batches; ++b) {
    const size_t lo = b * cfg.batch_size;
    const size_t hi = std::min(lo + cfg.batch_size, count);
    batches.emplace_back(order.begin() + lo, order.begin() + hi);
  }
  return batches;
}

}  // namespace

double mean_instance_sse(TrainableNet& net, const std::vector<TrainingInstance>& set,
                         size_t batch_size) {
  if (set.empty()) throw ContractError("mean_instance_sse on an empty set");
  double total = 0.0;
  for (size_t lo = 0; lo < set.size(); lo += batch_size) {
    const size_t hi = std::min(lo + batch_size, set.size());
    std::vector<const TrainingInstance*> batch;
    batch.reserve(hi - lo);
    for (size_t i = lo; i < hi; ++i) batch.push_back(&set[i]);
    Tape tape;
    BoundParams bp;
    const ParamStore& p = net.params();
    bp.vars.reserve(p.size());
    for (size_t i = 0; i < p.size(); ++i) bp.vars.push_back(tape.leaf(p.value(i)));
    total += tape.value(net.batch_objective(tape, bp, batch))[0];
  }
  return total / static_cast<double>(set.size());
}

TrainResult fit(TrainableNet& net, const std::vector<TrainingInstance>& train_set,
                const std::vector<TrainingInstance>& val_set, const TrainingConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");

  ParamStore& params = net.params();
  AdamOptimizer opt(params, cfg);
  Rng rng(cfg.seed);

  TrainResult result;
  result.best_params = params.snapshot();
  result.best_val = std::numeric_limits<double>::quiet_NaN();
  std::vector<Tensor> last_good = params.snapshot();
  size_t bad_epochs = 0;

  for (size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const double epoch_lr = opt.next_lr();
    const auto batches = plan_batches(train_set.size(), cfg, rng);

    double loss_sum = 0.0;
    for (const auto& batch_indices : batches) {
      std::vector<const TrainingInstance*> batch;
      batch.reserve(batch_indices.size());
      for (size_t idx : batch_indices) batch.push_back(&train_set[idx]);

      Tape tape;
      BoundParams bp;
      bp.vars.reserve(params.size());
      for (size_t i = 0; i < params.size(); ++i)
        bp.vars.push_back(tape.leaf(params.value(i), true));

      Var loss = regularized_objective(tape, net, bp, batch, cfg.l2_weight);
      const double loss_value = tape.value(loss)[0];
      if (!std::isfinite(loss_value)) {
        params.restore(std::move(last_good));
        throw DivergenceError("loss diverged at epoch " + std::to_string(epoch));
      }
      loss_sum += loss_value;

      tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(params.size());
      for (size_t i = 0; i < params.size(); ++i) grads.push_back(tape.grad(bp.vars[i]));
      try {
        opt.step(params, grads);
      } catch (const DivergenceError&) {
        params.restore(std::move(last_good));
        throw;
      }
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = epoch_lr;
    entry.train_loss = loss_sum / static_cast<double>(batches.size());
    entry.val_loss = std::numeric_limits<double>::quiet_NaN();

    if (!val_set.empty()) {
      entry.val_loss = mean_instance_sse(net, val_set, cfg.batch_size);
      if (!std::isfinite(entry.val_loss)) {
        params.restore(std::move(last_good));
        throw DivergenceError("validation loss diverged at epoch " + std::to_string(epoch));
      }
      if (std::isnan(result.best_val) || entry.val_loss < result.best_val) {
        result.best_val = entry.val_loss;
        result.best_epoch = epoch;
        result.best_params = params.snapshot();
        bad_epochs = 0;
      } else {
        ++bad_epochs;
      }
    } else {
      result.best_epoch = epoch;
      result.best_params = params.snapshot();
    }
    last_good = params.snapshot();

    entry.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.push_back(entry);

    if (!val_set.empty() && cfg.patience > 0 && bad_epochs >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

void write_epoch_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::string out = "epoch,lr,train_loss,val_loss,wall_seconds\n";
  for (const EpochLog& e : log) {
    out += std::to_string(e.epoch) + ',' + format_double(e.lr) + ',' +
           format_double(e.train_loss) + ',' + format_double(e.val_loss) + ',' +
           format_double(e.wall_seconds) + '\n';
  }
  write_file_atomic(path, out);
}

}  // namespace odcast
