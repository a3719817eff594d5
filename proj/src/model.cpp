#include "odcast/model.hpp"

#include <cmath>
#include <utility>

#include "odcast/errors.hpp"
#include "odcast/rng.hpp"
#include "odcast/serialize.hpp"

namespace odcast {

namespace {
constexpr char kCheckpointMagic[] = "ODCCKPT1";
}

void ModelConfig::validate() const {
  if (n == 0) throw ConfigError("model: n must be positive");
  if (k == 0) throw ConfigError("model: k must be positive");
  if (lags == 0) throw ConfigError("model: lags must be positive");
  if (block_widths.size() != 3)
    throw ConfigError("model: block_widths needs exactly 3 entries, got " +
                      std::to_string(block_widths.size()));
  for (size_t w : block_widths)
    if (w == 0) throw ConfigError("model: block widths must be positive");
  if (lstm_hidden.empty()) throw ConfigError("model: lstm_hidden must not be empty");
  for (size_t h : lstm_hidden)
    if (h == 0) throw ConfigError("model: lstm hidden sizes must be positive");
  if (v2 == 0) throw ConfigError("model: v2 must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return nlohmann::json{{"n", n},
                        {"k", k},
                        {"lags", lags},
                        {"block_widths", block_widths},
                        {"lstm_hidden", lstm_hidden},
                        {"v1", v1},
                        {"v2", v2},
                        {"post_sum_activation", post_sum_activation},
                        {"hidden_activation", activation_name(hidden_activation)}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.n = j.at("n").get<size_t>();
    cfg.k = j.at("k").get<size_t>();
    cfg.lags = j.at("lags").get<size_t>();
    cfg.block_widths = j.at("block_widths").get<std::vector<size_t>>();
    cfg.lstm_hidden = j.at("lstm_hidden").get<std::vector<size_t>>();
    cfg.v1 = j.at("v1").get<size_t>();
    cfg.v2 = j.at("v2").get<size_t>();
    cfg.post_sum_activation = j.at("post_sum_activation").get<bool>();
    cfg.hidden_activation = activation_from_name(j.at("hidden_activation").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

size_t ParamStore::add(std::string name, Tensor value, bool is_weight) {
  for (const auto& existing : names_)
    if (existing == name) throw ContractError("duplicate parameter name: " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  weight_.push_back(is_weight);
  return values_.size() - 1;
}

size_t ParamStore::index_of(const std::string& name) const {
  for (size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  throw ConfigError("unknown parameter: " + name);
}

void ParamStore::restore(std::vector<Tensor> values) {
  if (values.size() != values_.size())
    throw ContractError("parameter snapshot size mismatch: " + std::to_string(values.size()) +
                        " vs " + std::to_string(values_.size()));
  for (size_t i = 0; i < values.size(); ++i)
    if (!values[i].same_shape(values_[i]))
      throw ContractError("parameter snapshot shape mismatch at " + names_[i]);
  values_ = std::move(values);
}

size_t ParamStore::scalar_count() const {
  size_t total = 0;
  for (const auto& v : values_) total += v.numel();
  return total;
}

Tensor stack_matrices(const std::vector<Tensor>& mats) {
  if (mats.empty()) throw DimensionError("stack_matrices: empty input");
  const size_t n = mats.front().dim(0);
  for (const auto& m : mats)
    if (m.rank() != 2 || m.dim(0) != n || m.dim(1) != n)
      throw DimensionError("stack_matrices: expected [" + std::to_string(n) + "x" +
                           std::to_string(n) + "], got " + m.shape_str());
  Tensor out({n * mats.size(), n});
  double* dst = out.data();
  for (const auto& m : mats) {
    const double* src = m.data();
    std::copy(src, src + n * n, dst);
    dst += n * n;
  }
  return out;
}

Var mgc_apply(Tape& tape, Var graphs, Var h, Var w, Activation act, size_t k) {
  const Tensor& gv = tape.value(graphs);
  const Tensor& hv = tape.value(h);
  const Tensor& wv = tape.value(w);
  if (hv.rank() != 3) throw DimensionError("mgc: input must be [BxNxF], got " + hv.shape_str());
  const size_t b = hv.dim(0), n = hv.dim(1), f = hv.dim(2);
  if (gv.rank() != 2 || gv.dim(0) != n * k || gv.dim(1) != n)
    throw DimensionError("mgc: graph stack must be [" + std::to_string(n * k) + "x" +
                         std::to_string(n) + "], got " + gv.shape_str());
  if (wv.rank() != 2 || wv.dim(0) != k * f)
    throw DimensionError("mgc: weight must be [" + std::to_string(k * f) + "xO], got " +
                         wv.shape_str());
  // [ (N*K) x N ] . [B x N x F] -> [B x (N*K) x F], graph-major rows
  Var mixed = tape.batch_dot(graphs, h);
  // group the K per-graph signals per node: [B x N x (K*F)]
  Var grouped = tape.reshape(mixed, {b, k, n, f});
  grouped = tape.transpose(grouped, {0, 2, 1, 3});
  grouped = tape.reshape(grouped, {b, n, k * f});
  Var out = tape.batch_dot(grouped, w);
  return act == Activation::kLinear ? out : tape.activation(act, out);
}

std::pair<Var, Var> lstm_cell(Tape& tape, Var x_t, Var h_prev, Var c_prev, Var wx, Var wh,
                              Var b) {
  const size_t hidden = tape.value(h_prev).dim(1);
  Var z = tape.add(tape.affine(x_t, wx, b), tape.matmul(h_prev, wh));
  Var i = tape.activation(Activation::kSigmoid, tape.slice_last(z, 0, hidden));
  Var f = tape.activation(Activation::kSigmoid, tape.slice_last(z, hidden, hidden));
  Var g = tape.activation(Activation::kTanh, tape.slice_last(z, 2 * hidden, hidden));
  Var o = tape.activation(Activation::kSigmoid, tape.slice_last(z, 3 * hidden, hidden));
  Var c = tape.add(tape.mul(f, c_prev), tape.mul(i, g));
  Var h = tape.mul(o, tape.activation(Activation::kTanh, c));
  return {h, c};
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const size_t w3 = cfg_.block_widths[2];

  enc_conv_ = add_block("enc/conv", cfg_.lags, true);
  enc_ident_ = add_block("enc/ident", w3, false);
  enc_latent_ = add_affine("enc/latent", cfg_.n * w3, cfg_.latent1());

  size_t in_dim = cfg_.n;
  for (size_t l = 0; l < cfg_.lstm_hidden.size(); ++l) {
    const size_t hidden = cfg_.lstm_hidden[l];
    LstmLayerSpec spec;
    spec.in_dim = in_dim;
    spec.hidden = hidden;
    const std::string base = "lstm/" + std::to_string(l);
    spec.wx = params_.add(base + "/wx", Tensor({in_dim, 4 * hidden}), true);
    spec.wh = params_.add(base + "/wh", Tensor({hidden, 4 * hidden}), true);
    spec.b = params_.add(base + "/b", Tensor({4 * hidden}), false);
    lstm_.push_back(spec);
    in_dim = hidden;
  }
  tem_latent_ = add_affine("tem/latent", cfg_.lags * cfg_.lstm_hidden.back(), cfg_.v2);

  dec_latent_ = add_affine("dec/latent", cfg_.latent1() + cfg_.v2, cfg_.n);
  dec_conv_ = add_block("dec/conv", 1, true);
  dec_ident_ = add_block("dec/ident", w3, false);
  dec_out_ = add_mgc("dec/out", w3, 1, Activation::kLinear);
}

MgcLayerSpec Model::add_mgc(const std::string& name, size_t in_dim, size_t out_dim,
                            Activation act) {
  MgcLayerSpec spec;
  spec.in_dim = in_dim;
  spec.out_dim = out_dim;
  spec.act = act;
  spec.w = params_.add(name + "/w", Tensor({cfg_.k * in_dim, out_dim}), true);
  return spec;
}

RmgcBlockSpec Model::add_block(const std::string& name, size_t in_dim, bool convolutional) {
  const auto& widths = cfg_.block_widths;
  RmgcBlockSpec block;
  block.convolutional = convolutional;
  size_t cur = in_dim;
  for (size_t i = 0; i < 3; ++i) {
    block.main[i] = add_mgc(name + "/main" + std::to_string(i), cur, widths[i],
                            cfg_.hidden_activation);
    cur = widths[i];
  }
  if (convolutional) {
    block.shortcut = add_mgc(name + "/shortcut", in_dim, widths[2], Activation::kLinear);
  } else if (in_dim != widths[2]) {
    throw ConfigError("identity block needs matching input width: " + std::to_string(in_dim) +
                      " vs " + std::to_string(widths[2]));
  }
  return block;
}

AffineSpec Model::add_affine(const std::string& name, size_t in_dim, size_t out_dim) {
  AffineSpec spec;
  spec.in_dim = in_dim;
  spec.out_dim = out_dim;
  spec.w = params_.add(name + "/w", Tensor({in_dim, out_dim}), true);
  spec.b = params_.add(name + "/b", Tensor({out_dim}), false);
  return spec;
}

void Model::init_params(uint64_t seed) {
  Rng rng(seed);
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_.value(i);
    if (params_.is_weight(i)) {
      const double fan_in = static_cast<double>(t.dim(0));
      const double fan_out = static_cast<double>(t.dim(1));
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& v : t.values()) v = rng.uniform(-limit, limit);
    } else {
      for (double& v : t.values()) v = 0.0;
    }
  }
  // forget-gate bias starts open so early gradients reach back in time
  for (const auto& layer : lstm_) {
    Tensor& b = params_.value(layer.b);
    for (size_t j = layer.hidden; j < 2 * layer.hidden; ++j) b[j] = 1.0;
  }
}

Tensor Model::stack_graphs(const ODGraphSet& set) const {
  if (set.k() != cfg_.k)
    throw ConfigError("graph set has " + std::to_string(set.k()) + " graphs, model expects " +
                      std::to_string(cfg_.k));
  if (set.n() != cfg_.n)
    throw ConfigError("graph set covers " + std::to_string(set.n()) + " pairs, model expects " +
                      std::to_string(cfg_.n));
  return stack_matrices(set.normalized);
}

BoundParams Model::bind(Tape& tape, bool trainable) const {
  BoundParams bp;
  bp.vars.reserve(params_.size());
  for (size_t i = 0; i < params_.size(); ++i)
    bp.vars.push_back(tape.leaf(params_.value(i), trainable));
  return bp;
}

Var Model::mgc_forward(Tape& tape, const BoundParams& bp, const MgcLayerSpec& layer, Var graphs,
                       Var h) const {
  return mgc_apply(tape, graphs, h, bp.vars[layer.w], layer.act, cfg_.k);
}

Var Model::rmgc_forward(Tape& tape, const BoundParams& bp, const RmgcBlockSpec& block, Var graphs,
                        Var h) const {
  Var out = h;
  for (const auto& layer : block.main) out = mgc_forward(tape, bp, layer, graphs, out);
  Var shortcut = block.convolutional ? mgc_forward(tape, bp, block.shortcut, graphs, h) : h;
  Var sum = tape.add(out, shortcut);
  return cfg_.post_sum_activation ? tape.activation(cfg_.hidden_activation, sum) : sum;
}

Var Model::apply_affine(Tape& tape, const BoundParams& bp, const AffineSpec& a, Var x) const {
  return tape.affine(x, bp.vars[a.w], bp.vars[a.b]);
}

Var Model::spatial_encode(Tape& tape, const BoundParams& bp, Var graphs, Var x) const {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 3 || xv.dim(1) != cfg_.n || xv.dim(2) != cfg_.lags)
    throw DimensionError("spatial encoder input must be [Bx" + std::to_string(cfg_.n) + "x" +
                         std::to_string(cfg_.lags) + "], got " + xv.shape_str());
  const size_t b = xv.dim(0);
  Var h = rmgc_forward(tape, bp, enc_conv_, graphs, x);
  h = rmgc_forward(tape, bp, enc_ident_, graphs, h);
  h = tape.reshape(h, {b, cfg_.n * cfg_.block_widths[2]});
  return tape.activation(cfg_.hidden_activation, apply_affine(tape, bp, enc_latent_, h));
}

Var Model::temporal_encode(Tape& tape, const BoundParams& bp, Var x) const {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 3 || xv.dim(1) != cfg_.n || xv.dim(2) != cfg_.lags)
    throw DimensionError("temporal encoder input must be [Bx" + std::to_string(cfg_.n) + "x" +
                         std::to_string(cfg_.lags) + "], got " + xv.shape_str());
  const size_t b = xv.dim(0);
  // lag-major sequence: step t carries all N pair values at that lag
  Var seq = tape.transpose(x, {0, 2, 1});
  std::vector<Var> inputs;
  inputs.reserve(cfg_.lags);
  for (size_t t = 0; t < cfg_.lags; ++t) inputs.push_back(tape.step(seq, t));
  for (const auto& layer : lstm_) {
    Var h = tape.leaf(Tensor({b, layer.hidden}));
    Var c = tape.leaf(Tensor({b, layer.hidden}));
    for (size_t t = 0; t < cfg_.lags; ++t) {
      auto [hn, cn] = lstm_cell(tape, inputs[t], h, c, bp.vars[layer.wx], bp.vars[layer.wh],
                                bp.vars[layer.b]);
      h = hn;
      c = cn;
      inputs[t] = h;
    }
  }
  Var flat = inputs[0];
  for (size_t t = 1; t < cfg_.lags; ++t) flat = tape.concat_last(flat, inputs[t]);
  return tape.activation(cfg_.hidden_activation, apply_affine(tape, bp, tem_latent_, flat));
}

Var Model::forward(Tape& tape, const BoundParams& bp, Var graphs, Var x) const {
  const size_t b = tape.value(x).dim(0);
  Var l1 = spatial_encode(tape, bp, graphs, x);
  Var l2 = temporal_encode(tape, bp, x);
  Var latent = tape.concat_last(l1, l2);
  Var h = tape.activation(cfg_.hidden_activation, apply_affine(tape, bp, dec_latent_, latent));
  h = tape.reshape(h, {b, cfg_.n, 1});
  h = rmgc_forward(tape, bp, dec_conv_, graphs, h);
  h = rmgc_forward(tape, bp, dec_ident_, graphs, h);
  return mgc_forward(tape, bp, dec_out_, graphs, h);
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& extra_meta) {
  Container c;
  c.magic = kCheckpointMagic;
  c.meta = nlohmann::json{{"arch", model.config().to_json()}, {"extra", extra_meta}};
  const ParamStore& p = model.params();
  c.tensors.reserve(p.size());
  for (size_t i = 0; i < p.size(); ++i) c.tensors.emplace_back(p.name(i), p.value(i));
  save_container(path, c);
}

Model load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra_meta) {
  Container c = load_container(path, kCheckpointMagic);
  if (!c.meta.contains("arch")) throw DataError("checkpoint missing architecture block");
  Model model(ModelConfig::from_json(c.meta.at("arch")));
  ParamStore& p = model.params();
  if (c.tensors.size() != p.size())
    throw ConfigError("checkpoint holds " + std::to_string(c.tensors.size()) +
                      " parameters, architecture defines " + std::to_string(p.size()));
  for (size_t i = 0; i < p.size(); ++i) {
    if (!c.has(p.name(i))) throw ConfigError("checkpoint missing parameter " + p.name(i));
    const Tensor& stored = c.tensor(p.name(i));
    if (!stored.same_shape(p.value(i)))
      throw ConfigError("checkpoint parameter " + p.name(i) + " has shape " + stored.shape_str() +
                        ", architecture expects " + p.value(i).shape_str());
    p.value(i) = stored;
  }
  if (extra_meta != nullptr)
    *extra_meta = c.meta.contains("extra") ? c.meta.at("extra") : nlohmann::json::object();
  return model;
}

}  // namespace odcast
