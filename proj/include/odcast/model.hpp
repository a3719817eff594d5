#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "odcast/autodiff.hpp"
#include "odcast/graphs.hpp"
#include "odcast/tensor.hpp"

namespace odcast {

/// Architecture description. Serialized into checkpoints so a saved model
/// can be rebuilt and validated on load.
struct ModelConfig {
  size_t n = 0;     // OD pairs
  size_t k = 7;     // adjacency matrices
  size_t lags = 4;  // feature window length
  std::vector<size_t> block_widths = {32, 32, 128};
  std::vector<size_t> lstm_hidden = {128, 64};
  size_t v1 = 0;  // spatial latent width; 0 means "track n"
  size_t v2 = 100;
  bool post_sum_activation = true;
  Activation hidden_activation = Activation::kRelu;

  size_t latent1() const { return v1 == 0 ? n : v1; }
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Named, ordered parameter set. Weight matrices (is_weight) participate
/// in L2 regularization; biases do not.
class ParamStore {
 public:
  size_t add(std::string name, Tensor value, bool is_weight);
  size_t size() const { return values_.size(); }
  const std::string& name(size_t i) const { return names_[i]; }
  Tensor& value(size_t i) { return values_[i]; }
  const Tensor& value(size_t i) const { return values_[i]; }
  bool is_weight(size_t i) const { return weight_[i]; }
  size_t index_of(const std::string& name) const;

  std::vector<Tensor> snapshot() const { return values_; }
  void restore(std::vector<Tensor> values);
  /// Total scalar count across all parameters.
  size_t scalar_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::vector<bool> weight_;
};

/// Tape leaves for every parameter, parallel to ParamStore order.
struct BoundParams {
  std::vector<Var> vars;
};

struct MgcLayerSpec {
  size_t w = 0;  // ParamStore index
  size_t in_dim = 0, out_dim = 0;
  Activation act = Activation::kLinear;
};

struct RmgcBlockSpec {
  bool convolutional = false;
  std::array<MgcLayerSpec, 3> main;
  MgcLayerSpec shortcut;  // used only when convolutional
};

struct LstmLayerSpec {
  size_t wx = 0, wh = 0, b = 0;
  size_t in_dim = 0, hidden = 0;
};

struct AffineSpec {
  size_t w = 0, b = 0;
  size_t in_dim = 0, out_dim = 0;
};

/// Stacks matrices vertically into the shared convolution operand:
/// K square [N x N] matrices become [(N*K) x N] with matrix g occupying
/// rows [g*N, (g+1)*N).
Tensor stack_matrices(const std::vector<Tensor>& mats);

/// One multi-graph convolution on explicit tensors. graphs is the stacked
/// [(N*K) x N] operand, h is [B x N x F], w is [(K*F) x O]; the K
/// per-graph results are grouped per node before the weight product.
Var mgc_apply(Tape& tape, Var graphs, Var h, Var w, Activation act, size_t k);

/// One LSTM step. x_t [B x F], state [B x H]; wx [F x 4H], wh [H x 4H],
/// b [4H] with gate order input, forget, candidate, output. Returns
/// (h_next, c_next).
std::pair<Var, Var> lstm_cell(Tape& tape, Var x_t, Var h_prev, Var c_prev, Var wx, Var wh, Var b);

/// The demand forecasting network: a graph-convolutional encoder and an
/// LSTM encoder over the lag window, fused into a latent vector that a
/// graph-convolutional decoder expands back to one value per OD pair.
class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Glorot-uniform weights, zero biases, LSTM forget-gate bias 1.
  void init_params(uint64_t seed);

  /// Validates the graph set against n/k and stacks its normalized
  /// matrices for the convolution operand.
  Tensor stack_graphs(const ODGraphSet& set) const;

  /// Registers every parameter on the tape. trainable=false binds frozen
  /// leaves for inference.
  BoundParams bind(Tape& tape, bool trainable = true) const;

  /// x [B x N x lags] -> prediction [B x N x 1].
  Var forward(Tape& tape, const BoundParams& bp, Var graphs, Var x) const;
  /// Graph-side latent [B x V1].
  Var spatial_encode(Tape& tape, const BoundParams& bp, Var graphs, Var x) const;
  /// Sequence-side latent [B x V2].
  Var temporal_encode(Tape& tape, const BoundParams& bp, Var x) const;

  Var mgc_forward(Tape& tape, const BoundParams& bp, const MgcLayerSpec& layer, Var graphs,
                  Var h) const;
  Var rmgc_forward(Tape& tape, const BoundParams& bp, const RmgcBlockSpec& block, Var graphs,
                   Var h) const;

  const RmgcBlockSpec& encoder_conv_block() const { return enc_conv_; }
  const RmgcBlockSpec& encoder_identity_block() const { return enc_ident_; }
  const std::vector<LstmLayerSpec>& lstm_layers() const { return lstm_; }

 private:
  MgcLayerSpec add_mgc(const std::string& name, size_t in_dim, size_t out_dim, Activation act);
  RmgcBlockSpec add_block(const std::string& name, size_t in_dim, bool convolutional);
  AffineSpec add_affine(const std::string& name, size_t in_dim, size_t out_dim);

  Var apply_affine(Tape& tape, const BoundParams& bp, const AffineSpec& a, Var x) const;

  ModelConfig cfg_;
  ParamStore params_;
  RmgcBlockSpec enc_conv_, enc_ident_;
  AffineSpec enc_latent_;
  std::vector<LstmLayerSpec> lstm_;
  AffineSpec tem_latent_;
  AffineSpec dec_latent_;
  RmgcBlockSpec dec_conv_, dec_ident_;
  MgcLayerSpec dec_out_;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& extra_meta = nlohmann::json::object());
/// Rebuilds the model from the stored architecture; parameter names and
/// shapes must match exactly.
Model load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra_meta = nullptr);

}  // namespace odcast
