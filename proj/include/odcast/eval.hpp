#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "odcast/data.hpp"
#include "odcast/graphs.hpp"
#include "odcast/tensor.hpp"
#include "odcast/training.hpp"

namespace odcast {

/// Micro-averaged error summary over all (instance, pair) cells.
/// Predictions are clamped to >= 0 before computing anything - negative
/// demand is never reported. MAPE averages only cells with target > 1;
/// when no cell qualifies it is undefined (NaN marker, mape_defined
/// false), never 0.
struct MetricReport {
  double rmse = 0.0;
  double mae = 0.0;
  double mape = 0.0;
  bool mape_defined = false;
  size_t n_cells = 0;
  size_t n_mape_cells = 0;

  nlohmann::json to_json() const;
};

MetricReport compute_metrics(const Tensor& predictions, const Tensor& targets);

/// Same-weekday average: mean demand at interval t over the four previous
/// weeks. Requires d >= 28.
Tensor baseline_ha(const DemandCube& cube, size_t d, size_t t);

/// HA predictions for a whole instance set, [M x N]. Every instance must
/// satisfy day >= 28.
Tensor ha_predictions(const DemandCube& cube, const std::vector<TrainingInstance>& set);

/// Targets of an instance set stacked to [M x N].
Tensor stack_targets(const std::vector<TrainingInstance>& set);

double soft_threshold(double x, double lambda);

/// Pooled linear model over the 4 lag features: one regression shared by
/// all OD pairs, minimizing (1/2m)*SSE + lambda*|coef|_1 by cyclic
/// coordinate descent on centered data.
struct LassoModel {
  std::vector<double> coef;  // one per lag feature
  double intercept = 0.0;
  bool converged = true;
  /// Max coordinate change of the final sweep (converged when < tol).
  double final_delta = 0.0;
  size_t sweeps = 0;

  double predict_one(const double* features) const;
  /// Length-N prediction for one instance.
  Tensor predict(const TrainingInstance& inst) const;
  /// [M x N] predictions for a set.
  Tensor predict_all(const std::vector<TrainingInstance>& set) const;
};

LassoModel fit_lasso(const std::vector<TrainingInstance>& train_set, double lambda,
                     double tol = 1e-8, size_t max_sweeps = 10000);

/// One-hidden-layer ReLU regressor on the 4 lag features, pooled over
/// pairs; trained with the shared Adam trainer.
class MlpBaseline : public TrainableNet {
 public:
  MlpBaseline(size_t hidden, uint64_t seed);
  ParamStore& params() override { return params_; }
  const ParamStore& params() const override { return params_; }
  Var batch_objective(Tape& tape, const BoundParams& bp,
                      const std::vector<const TrainingInstance*>& batch) override;
  /// [B x N] predictions with current parameters.
  Tensor predict(const std::vector<const TrainingInstance*>& batch) const;
  Tensor predict_all(const std::vector<TrainingInstance>& set) const;

 private:
  Var forward(Tape& tape, const BoundParams& bp, Var features) const;
  size_t hidden_;
  ParamStore params_;
};

/// The sequence-encoder baseline: the lag window as a 4-step sequence of
/// N-wide frames through an LSTM stack, flattened, projected to a latent,
/// then an affine head back to all N pairs at once.
class SpatialLstmBaseline : public TrainableNet {
 public:
  SpatialLstmBaseline(size_t n, std::vector<size_t> hidden, size_t latent, uint64_t seed,
                      Activation act = Activation::kRelu);
  ParamStore& params() override { return params_; }
  const ParamStore& params() const override { return params_; }
  Var batch_objective(Tape& tape, const BoundParams& bp,
                      const std::vector<const TrainingInstance*>& batch) override;
  Tensor predict(const std::vector<const TrainingInstance*>& batch) const;
  Tensor predict_all(const std::vector<TrainingInstance>& set) const;

 private:
  Var forward(Tape& tape, const BoundParams& bp, Var features) const;
  size_t n_;
  std::vector<size_t> hidden_;
  size_t latent_;
  Activation act_;
  ParamStore params_;
  std::vector<LstmLayerSpec> layers_;
  AffineSpec to_latent_, head_;
};

struct ComparisonRow {
  std::string name;
  MetricReport metrics;
};

/// Rows sorted by RMSE ascending (stable: ties keep input order).
std::vector<ComparisonRow> rank_by_rmse(std::vector<ComparisonRow> rows);

/// name,rmse,mae,mape,n_cells,n_mape_cells - one row per model.
void write_comparison_csv(const std::filesystem::path& path,
                          const std::vector<ComparisonRow>& rows);
nlohmann::json comparison_json(const std::vector<ComparisonRow>& rows);

/// Mean absolute error per OD pair arranged as a [z x z] grid by
/// (origin zone, destination zone) position. Pairs absent from the index
/// hold NaN. predictions/targets are [M x N].
Tensor per_pair_mae_grid(const Tensor& predictions, const Tensor& targets,
                         const ODPairIndex& pairs, size_t zone_count);

/// Grid as CSV with zone ids labeling rows and columns.
void write_grid_csv(const std::filesystem::path& path, const Tensor& grid,
                    const std::vector<std::string>& zone_ids);

}  // namespace odcast
