#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "odcast/autodiff.hpp"
#include "odcast/data.hpp"
#include "odcast/model.hpp"
#include "odcast/tensor.hpp"

namespace odcast {

struct TrainingConfig {
  double learning_rate = 5e-5;
  /// Per-step decay: step t (1-based) runs at learning_rate / (1 + lr_decay * (t-1)).
  double lr_decay = 1e-6;
  size_t batch_size = 32;
  size_t epochs = 0;
  double l2_weight = 1e-4;  // applied to weight matrices only, never biases
  uint64_t seed = 0;
  bool shuffle = true;
  /// Draw batches with replacement instead of a shuffled partition.
  bool sample_with_replacement = false;
  /// Early-stopping patience in epochs; 0 disables. Only active with a
  /// validation set.
  size_t patience = 20;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainingConfig from_json(const nlohmann::json& j);
};

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8). The
/// learning rate decays per step as configured above. A non-finite
/// gradient aborts with DivergenceError naming the parameter.
class AdamOptimizer {
 public:
  AdamOptimizer(const ParamStore& params, const TrainingConfig& cfg);

  /// grads are parallel to the store's parameter order.
  void step(ParamStore& params, const std::vector<Tensor>& grads);
  size_t steps() const { return step_; }
  /// Learning rate the next step() call will use.
  double next_lr() const { return lr0_ / (1.0 + decay_ * static_cast<double>(step_)); }

 private:
  double lr0_, decay_;
  std::vector<Tensor> m_, v_;
  size_t step_ = 0;
};

/// Anything fit() can train: a parameter store plus a batch objective
/// (the data term, summed squared error over the batch). fit() adds the
/// L2 penalty over weight-flagged parameters itself.
class TrainableNet {
 public:
  virtual ~TrainableNet() = default;
  virtual ParamStore& params() = 0;
  virtual const ParamStore& params() const = 0;
  virtual Var batch_objective(Tape& tape, const BoundParams& bp,
                              const std::vector<const TrainingInstance*>& batch) = 0;
};

/// Adapter training the forecasting model against a fixed graph stack.
class ForecastNet : public TrainableNet {
 public:
  ForecastNet(Model& model, Tensor graph_stack);
  ParamStore& params() override { return model_.params(); }
  const ParamStore& params() const override { return model_.params(); }
  Var batch_objective(Tape& tape, const BoundParams& bp,
                      const std::vector<const TrainingInstance*>& batch) override;

  /// Predictions [B x N] for a set of instances, using current parameters.
  Tensor predict(const std::vector<const TrainingInstance*>& batch) const;

 private:
  Model& model_;
  Tensor graphs_;
};

struct EpochLog {
  size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;  // mean over batches of the optimized objective
  double val_loss = 0.0;    // summed squared error / instance count; NaN without a split
  double wall_seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  size_t best_epoch = 0;  // 1-based; 0 when epochs == 0
  double best_val = 0.0;
  bool early_stopped = false;
  /// Snapshot at the best validation epoch (final epoch without a split).
  std::vector<Tensor> best_params;
};

/// Full objective for one batch: the net's data term plus
/// alpha * sum of squared entries over weight-flagged parameters (biases
/// excluded).
Var regularized_objective(Tape& tape, TrainableNet& net, const BoundParams& bp,
                          const std::vector<const TrainingInstance*>& batch, double alpha);

/// Seeded epoch loop: shuffle, batch, forward, loss, backward, Adam.
/// The net is left at its FINAL parameters; best_params carries the
/// early-stopping winner. On divergence (non-finite loss or gradient)
/// parameters are restored to the last completed epoch and
/// DivergenceError is thrown.
TrainResult fit(TrainableNet& net, const std::vector<TrainingInstance>& train_set,
                const std::vector<TrainingInstance>& val_set, const TrainingConfig& cfg);

/// Stacks instance features/targets into [B x N x 4] and [B x N x 1].
Tensor batch_features(const std::vector<const TrainingInstance*>& batch);
Tensor batch_targets(const std::vector<const TrainingInstance*>& batch);

/// Summed squared error over a whole set, divided by the instance count.
double mean_instance_sse(TrainableNet& net, const std::vector<TrainingInstance>& set,
                         size_t batch_size);

/// epoch,lr,train_loss,val_loss,wall_seconds - one row per epoch.
void write_epoch_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

}  // namespace odcast
