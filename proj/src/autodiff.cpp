#include "odcast/autodiff.hpp"

#include <cmath>
#include <numeric>

#include "odcast/errors.hpp"

namespace odcast {

namespace {

// C[m x n] += A[m x k] * B[k x n]
void mm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x k] += A[m x n] * B[k x n]^T
void mm_nt(const double* a, const double* b, double* c, size_t m, size_t n, size_t k) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* crow = c + i * k;
    for (size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
void mm_tn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void ensure(std::vector<Tensor>& pass, size_t id, const std::vector<size_t>& shape) {
  if (pass[id].numel() == 0) pass[id] = Tensor(shape);
}

std::vector<size_t> strides_of(const std::vector<size_t>& shape) {
  std::vector<size_t> s(shape.size());
  size_t acc = 1;
  for (size_t i = shape.size(); i-- > 0;) {
    s[i] = acc;
    acc *= shape[i];
  }
  return s;
}

// out[j] = in[map[j]] for a permutation relayout; map built once per op
std::vector<size_t> permutation_map(const std::vector<size_t>& in_shape,
                                    const std::vector<size_t>& perm) {
  const size_t rank = in_shape.size();
  std::vector<size_t> out_shape(rank);
  for (size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[perm[i]];
  const auto in_strides = strides_of(in_shape);
  const size_t total = shape_numel(in_shape);
  std::vector<size_t> map(total);
  std::vector<size_t> idx(rank, 0);
  for (size_t flat = 0; flat < total; ++flat) {
    size_t src = 0;
    for (size_t i = 0; i < rank; ++i) src += idx[i] * in_strides[perm[i]];
    map[flat] = src;
    for (size_t i = rank; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return map;
}

double apply_activation(Activation kind, double x) {
  switch (kind) {
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kTanh: return std::tanh(x);
    case Activation::kSigmoid: return 1.0 / (1.0 + std::exp(-x));
    case Activation::kLinear: return x;
  }
  return x;
}

// derivative expressed through input x and output y
double activation_grad(Activation kind, double x, double y) {
  switch (kind) {
    case Activation::kRelu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::kTanh: return 1.0 - y * y;
    case Activation::kSigmoid: return y * (1.0 - y);
    case Activation::kLinear: return 1.0;
  }
  return 1.0;
}

}  // namespace

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "linear") return Activation::kLinear;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string activation_name(Activation kind) {
  switch (kind) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kLinear: return "linear";
  }
  return "linear";
}

Var Tape::push(Tensor value, bool requires_grad,
               std::function<void(size_t, std::vector<Tensor>&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this tape");
  return nodes_[v.id];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) {
  Node& n = nodes_.at(v.id);
  if (n.grad.numel() == 0) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad = Tensor();
}

void Tape::backward(Var loss) {
  const Node& top = node(loss);
  if (top.value.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got " + top.value.shape_str());
  }
  std::vector<Tensor> pass(nodes_.size());
  pass[loss.id] = Tensor::scalar(1.0);
  for (size_t id = loss.id + 1; id-- > 0;) {
    if (pass[id].numel() == 0) continue;
    const Node& n = nodes_[id];
    if (n.backprop) n.backprop(id, pass);
  }
  for (size_t id = 0; id <= loss.id; ++id) {
    if (pass[id].numel() == 0 || !nodes_[id].requires_grad) continue;
    Node& n = nodes_[id];
    if (n.grad.numel() == 0) {
      n.grad = std::move(pass[id]);
    } else {
      for (size_t i = 0; i < n.grad.numel(); ++i) n.grad[i] += pass[id][i];
    }
  }
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0)) {
    throw DimensionError("matmul shapes do not compose: " + ta.shape_str() + " * " + tb.shape_str());
  }
  const size_t m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
  Tensor out({m, n});
  mm_nn(ta.data(), tb.data(), out.data(), m, k, n);
  const bool req = needs_grad(a) || needs_grad(b);
  const size_t ia = a.id, ib = b.id;
  const bool ra = needs_grad(a), rb = needs_grad(b);
  return push(std::move(out), req, [this, ia, ib, ra, rb, m, k, n](size_t self, std::vector<Tensor>& pass) {
    const double* g = pass[self].data();
    if (ra) {
      ensure(pass, ia, {m, k});
      mm_nt(g, nodes_[ib].value.data(), pass[ia].data(), m, n, k);
    }
    if (rb) {
      ensure(pass, ib, {k, n});
      mm_tn(nodes_[ia].value.data(), g, pass[ib].data(), m, k, n);
    }
  });
}

Var Tape::batch_dot(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  const bool a_shared = ta.rank() == 2;
  const bool b_shared = tb.rank() == 2;
  if ((ta.rank() != 3 && !a_shared) || (tb.rank() != 3 && !b_shared) || (a_shared && b_shared)) {
    throw DimensionError("batch_dot needs at least one rank-3 operand: " + ta.shape_str() + " vs " +
                         tb.shape_str());
  }
  const size_t batches = a_shared ? tb.dim(0) : ta.dim(0);
  const size_t p = ta.dim(a_shared ? 0 : 1);
  const size_t q = ta.dim(a_shared ? 1 : 2);
  const size_t bq = tb.dim(b_shared ? 0 : 1);
  const size_t r = tb.dim(b_shared ? 1 : 2);
  if (!a_shared && !b_shared && ta.dim(0) != tb.dim(0)) {
    throw DimensionError("batch_dot batch sizes differ: " + ta.shape_str() + " vs " + tb.shape_str());
  }
  if (bq != q) {
    throw DimensionError("batch_dot inner dimensions differ: " + ta.shape_str() + " vs " + tb.shape_str());
  }
  Tensor out({batches, p, r});
  for (size_t bi = 0; bi < batches; ++bi) {
    const double* ap = ta.data() + (a_shared ? 0 : bi * p * q);
    const double* bp = tb.data() + (b_shared ? 0 : bi * q * r);
    mm_nn(ap, bp, out.data() + bi * p * r, p, q, r);
  }
  const bool req = needs_grad(a) || needs_grad(b);
  const size_t ia = a.id, ib = b.id;
  const bool ra = needs_grad(a), rb = needs_grad(b);
  return push(std::move(out), req,
              [this, ia, ib, ra, rb, a_shared, b_shared, batches, p, q, r](size_t self,
                                                                           std::vector<Tensor>& pass) {
    const double* g = pass[self].data();
    const Tensor& va = nodes_[ia].value;
    const Tensor& vb = nodes_[ib].value;
    if (ra) {
      ensure(pass, ia, va.shape());
      for (size_t bi = 0; bi < batches; ++bi) {
        const double* bp = vb.data() + (b_shared ? 0 : bi * q * r);
        double* ap = pass[ia].data() + (a_shared ? 0 : bi * p * q);
        mm_nt(g + bi * p * r, bp, ap, p, r, q);
      }
    }
    if (rb) {
      ensure(pass, ib, vb.shape());
      for (size_t bi = 0; bi < batches; ++bi) {
        const double* ap = va.data() + (a_shared ? 0 : bi * p * q);
        double* bp = pass[ib].data() + (b_shared ? 0 : bi * q * r);
        mm_tn(ap, g + bi * p * r, bp, p, q, r);
      }
    }
  });
}

Var Tape::reshape(Var a, std::vector<size_t> new_shape) {
  const Tensor& ta = value(a);
  if (shape_numel(new_shape) != ta.numel()) {
    throw DimensionError("reshape changes element count: " + ta.shape_str() + " -> " +
                         Tensor::shape_str(new_shape));
  }
  Tensor out(new_shape, ta.values());
  const size_t ia = a.id;
  const auto old_shape = ta.shape();
  return push(std::move(out), needs_grad(a), [this, ia, old_shape](size_t self, std::vector<Tensor>& pass) {
    ensure(pass, ia, old_shape);
    Tensor& dst = pass[ia];
    const Tensor& g = pass[self];
    for (size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
  });
}

Var Tape::transpose(Var a, std::vector<size_t> perm) {
  const Tensor& ta = value(a);
  const size_t rank = ta.rank();
  if (perm.size() != rank) {
    throw DimensionError("permutation rank " + std::to_string(perm.size()) +
                         " does not match tensor " + ta.shape_str());
  }
  std::vector<bool> seen(rank, false);
  for (size_t axis : perm) {
    if (axis >= rank || seen[axis]) throw DimensionError("invalid axis permutation");
    seen[axis] = true;
  }
  std::vector<size_t> out_shape(rank);
  for (size_t i = 0; i < rank; ++i) out_shape[i] = ta.shape()[perm[i]];
  const auto map = permutation_map(ta.shape(), perm);
  Tensor out(out_shape);
  for (size_t j = 0; j < map.size(); ++j) out[j] = ta[map[j]];
  const size_t ia = a.id;
  const auto in_shape = ta.shape();
  return push(std::move(out), needs_grad(a),
              [this, ia, in_shape, map](size_t self, std::vector<Tensor>& pass) {
    ensure(pass, ia, in_shape);
    Tensor& dst = pass[ia];
    const Tensor& g = pass[self];
    for (size_t j = 0; j < map.size(); ++j) dst[map[j]] += g[j];
  });
}

Var Tape::activation(Activation kind, Var x) {
  const Tensor& tx = value(x);
  Tensor out(tx.shape());
  for (size_t i = 0; i < tx.numel(); ++i) out[i] = apply_activation(kind, tx[i]);
  const size_t ix = x.id;
  return push(std::move(out), needs_grad(x), [this, ix, kind](size_t self, std::vector<Tensor>& pass) {
    ensure(pass, ix, nodes_[ix].value.shape());
    const Tensor& g = pass[self];
    const Tensor& in = nodes_[ix].value;
    const Tensor& outv = nodes_[self].value;
    Tensor& dst = pass[ix];
    for (size_t i = 0; i < g.numel(); ++i) dst[i] += g[i] * activation_grad(kind, in[i], outv[i]);
  });
}

Var Tape::affine(Var x, Var w, Var b) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  const Tensor& tb = value(b);
  if (tx.rank() < 2 || tw.rank() != 2 || tb.rank() != 1) {
    throw DimensionError("affine expects x[..xF], W[FxO], b[O]; got " + tx.shape_str() + ", " +
                         tw.shape_str() + ", " + tb.shape_str());
  }
  const size_t f = tx.shape().back();
  const size_t o = tw.dim(1);
  if (tw.dim(0) != f || tb.dim(0) != o) {
    throw DimensionError("affine shapes do not compose: " + tx.shape_str() + ", " + tw.shape_str() +
                         ", " + tb.shape_str());
  }
  const size_t rows = tx.numel() / f;
  std::vector<size_t> out_shape = tx.shape();
  out_shape.back() = o;
  Tensor out(out_shape);
  for (size_t rI = 0; rI < rows; ++rI) {
    double* orow = out.data() + rI * o;
    for (size_t j = 0; j < o; ++j) orow[j] = tb[j];
  }
  mm_nn(tx.data(), tw.data(), out.data(), rows, f, o);
  const bool req = needs_grad(x) || needs_grad(w) || needs_grad(b);
  const size_t ix = x.id, iw = w.id, ib2 = b.id;
  const bool rx = needs_grad(x), rw = needs_grad(w), rb = needs_grad(b);
  return push(std::move(out), req,
              [this, ix, iw, ib2, rx, rw, rb, rows, f, o](size_t self, std::vector<Tensor>& pass) {
    const double* g = pass[self].data();
    if (rx) {
      ensure(pass, ix, nodes_[ix].value.shape());
      mm_nt(g, nodes_[iw].value.data(), pass[ix].data(), rows, o, f);
    }
    if (rw) {
      ensure(pass, iw, nodes_[iw].value.shape());
      mm_tn(nodes_[ix].value.data(), g, pass[iw].data(), rows, f, o);
    }
    if (rb) {
      ensure(pass, ib2, nodes_[ib2].value.shape());
      Tensor& dst = pass[ib2];
      for (size_t rI = 0; rI < rows; ++rI) {
        const double* grow = g + rI * o;
        for (size_t j = 0; j < o; ++j) dst[j] += grow[j];
      }
    }
  });
}

Var Tape::add(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) {
    throw DimensionError("add shapes differ: " + ta.shape_str() + " vs " + tb.shape_str());
  }
  Tensor out(ta.shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] + tb[i];
  const size_t ia = a.id, ib = b.id;
  const bool ra = needs_grad(a), rb = needs_grad(b);
  return push(std::move(out), ra || rb, [this, ia, ib, ra, rb](size_t self, std::vector<Tensor>& pass) {
    const Tensor& g = pass[self];
    if (ra) {
      ensure(pass, ia, nodes_[ia].value.shape());
      for (size_t i = 0; i < g.numel(); ++i) pass[ia][i] += g[i];
    }
    if (rb) {
      ensure(pass, ib, nodes_[ib].value.shape());
      for (size_t i = 0; i < g.numel(); ++i) pass[ib][i] += g[i];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) {
    throw DimensionError("sub shapes differ: " + ta.shape_str() + " vs " + tb.shape_str());
  }
  Tensor out(ta.shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] - tb[i];
  const size_t ia = a.id, ib = b.id;
  const bool ra = needs_grad(a), rb = needs_grad(b);
  return push(std::move(out), ra || rb, [this, ia, ib, ra, rb](size_t self, std::vector<Tensor>& pass) {
    const Tensor& g = pass[self];
    if (ra) {
      ensure(pass, ia, nodes_[ia].value.shape());
      for (size_t i = 0; i < g.numel(); ++i) pass[ia][i] += g[i];
    }
    if (rb) {
      ensure(pass, ib, nodes_[ib].value.shape());
      for (size_t i = 0; i < g.numel(); ++i) pass[ib][i] -= g[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) {
    throw DimensionError("mul shapes differ: " + ta.shape_str() + " vs " + tb.shape_str());
  }
  Tensor out(ta.shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] * tb[i];
  const size_t ia = a.id, ib = b.id;
  const bool ra = needs_grad(a), rb = needs_grad(b);
  return push(std::move(out), ra || rb, [this, ia, ib, ra, rb](size_t self, std::vector<Tensor>& pass) {
    const Tensor& g = pass[self];
    const Tensor& va = nodes_[ia].value;
    const Tensor& vb = nodes_[ib].value;
    if (ra) {
      ensure(pass, ia, va.shape());
      for (size_t i = 0; i < g.numel(); ++i) pass[ia][i] += g[i] * vb[i];
    }
    if (rb) {
      ensure(pass, ib, vb.shape());
      for (size_t i = 0; i < g.numel(); ++i) pass[ib][i] += g[i] * va[i];
    }
  });
}

Var Tape::scale(Var a, double c) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] * c;
  const size_t ia = a.id;
  return push(std::move(out), needs_grad(a), [this, ia, c](size_t self, std::vector<Tensor>& pass) {
    ensure(pass, ia, nodes_[ia].value.shape());
    const Tensor& g = pass[self];
    for (size_t i = 0; i < g.numel(); ++i) pass[ia][i] += g[i] * c;
  });
}

Var Tape::sum(Var a) {
  const Tensor& ta = value(a);
  double acc = 0.0;
  for (size_t i = 0; i < ta.numel(); ++i) acc += ta[i];
  const size_t ia = a.id;
  return push(Tensor::scalar(acc), needs_grad(a), [this, ia](size_t self, std::vector<Tensor>& pass) {
    ensure(pass, ia, nodes_[ia].value.shape());
    const double g = pass[self][0];
    Tensor& dst = pass[ia];
    for (size_t i = 0; i < dst.numel(); ++i) dst[i] += g;
  });
}

Var Tape::concat_last(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.rank() != tb.rank() || ta.rank() == 0) {
    throw DimensionError("concat_last rank mismatch: " + ta.shape_str() + " vs " + tb.shape_str());
  }
  for (size_t i = 0; i + 1 < ta.rank(); ++i) {
    if (ta.shape()[i] != tb.shape()[i]) {
      throw DimensionError("concat_last leading dims differ: " + ta.shape_str() + " vs " + tb.shape_str());
    }
  }
  const size_t fa = ta.shape().back(), fb = tb.shape().back();
  const size_t rows = ta.numel() / fa;
  std::vector<size_t> out_shape = ta.shape();
  out_shape.back() = fa + fb;
  Tensor out(out_shape);
  for (size_t rI = 0; rI < rows; ++rI) {
    double* orow = out.data() + rI * (fa + fb);
    const double* arow = ta.data() + rI * fa;
    const double* brow = tb.data() + rI * fb;
    for (size_t i = 0; i < fa; ++i) orow[i] = arow[i];
    for (size_t i = 0; i < fb; ++i) orow[fa + i] = brow[i];
  }
  const size_t ia = a.id, ib = b.id;
  const bool ra = needs_grad(a), rb = needs_grad(b);
  return push(std::move(out), ra || rb,
              [this, ia, ib, ra, rb, rows, fa, fb](size_t self, std::vector<Tensor>& pass) {
    const double* g = pass[self].data();
    if (ra) {
      ensure(pass, ia, nodes_[ia].value.shape());
      double* dst = pass[ia].data();
      for (size_t rI = 0; rI < rows; ++rI)
        for (size_t i = 0; i < fa; ++i) dst[rI * fa + i] += g[rI * (fa + fb) + i];
    }
    if (rb) {
      ensure(pass, ib, nodes_[ib].value.shape());
      double* dst = pass[ib].data();
      for (size_t rI = 0; rI < rows; ++rI)
        for (size_t i = 0; i < fb; ++i) dst[rI * fb + i] += g[rI * (fa + fb) + fa + i];
    }
  });
}

Var Tape::slice_last(Var a, size_t start, size_t len) {
  const Tensor& ta = value(a);
  const size_t f = ta.shape().back();
  if (len == 0 || start + len > f) {
    throw DimensionError("slice_last range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of bounds for " + ta.shape_str());
  }
  const size_t rows = ta.numel() / f;
  std::vector<size_t> out_shape = ta.shape();
  out_shape.back() = len;
  Tensor out(out_shape);
  for (size_t rI = 0; rI < rows; ++rI) {
    const double* arow = ta.data() + rI * f + start;
    double* orow = out.data() + rI * len;
    for (size_t i = 0; i < len; ++i) orow[i] = arow[i];
  }
  const size_t ia = a.id;
  return push(std::move(out), needs_grad(a),
              [this, ia, rows, f, start, len](size_t self, std::vector<Tensor>& pass) {
    ensure(pass, ia, nodes_[ia].value.shape());
    const double* g = pass[self].data();
    double* dst = pass[ia].data();
    for (size_t rI = 0; rI < rows; ++rI)
      for (size_t i = 0; i < len; ++i) dst[rI * f + start + i] += g[rI * len + i];
  });
}

Var Tape::step(Var x, size_t t) {
  const Tensor& tx = value(x);
  if (tx.rank() != 3) throw DimensionError("step expects a rank-3 tensor, got " + tx.shape_str());
  const size_t batches = tx.dim(0), steps = tx.dim(1), f = tx.dim(2);
  if (t >= steps) throw DimensionError("step " + std::to_string(t) + " out of range for " + tx.shape_str());
  Tensor out({batches, f});
  for (size_t bi = 0; bi < batches; ++bi) {
    const double* src = tx.data() + (bi * steps + t) * f;
    double* dst = out.data() + bi * f;
    for (size_t i = 0; i < f; ++i) dst[i] = src[i];
  }
  const size_t ix = x.id;
  return push(std::move(out), needs_grad(x),
              [this, ix, batches, steps, t, f](size_t self, std::vector<Tensor>& pass) {
    ensure(pass, ix, nodes_[ix].value.shape());
    const double* g = pass[self].data();
    double* dst = pass[ix].data();
    for (size_t bi = 0; bi < batches; ++bi)
      for (size_t i = 0; i < f; ++i) dst[(bi * steps + t) * f + i] += g[bi * f + i];
  });
}

double eval_scalar(const std::function<Var(Tape&, Var)>& f, const Tensor& x) {
  Tape tape;
  Var in = tape.leaf(x, false);
  Var out = f(tape, in);
  const Tensor& v = tape.value(out);
  if (v.numel() != 1) throw ContractError("gradient check target must be scalar, got " + v.shape_str());
  return v[0];
}

double gradient_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h) {
  Tensor analytic;
  {
    Tape tape;
    Var in = tape.leaf(x, true);
    Var out = f(tape, in);
    if (tape.value(out).numel() != 1) {
      throw ContractError("gradient check target must be scalar");
    }
    tape.backward(out);
    analytic = tape.grad(in);
  }
  double worst = 0.0;
  Tensor probe = x;
  for (size_t i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + h;
    const double up = eval_scalar(f, probe);
    probe[i] = x[i] - h;
    const double down = eval_scalar(f, probe);
    probe[i] = x[i];
    const double numeric = (up - down) / (2.0 * h);
    // Central differences carry ~|f|*eps/h of roundoff, so components this
    // small cannot be resolved in relative terms; the floor keeps them from
    // drowning out real disagreements on the components that matter.
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-6});
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace odcast
