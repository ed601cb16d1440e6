#include "tcd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace tcd {

// ---------------------------------------------------------------------------
// ParameterStore / Gradients

std::size_t ParameterStore::add(std::string name, Tensor value) {
  if (find(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::optional<std::size_t> ParameterStore::find(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names_.begin());
}

std::size_t ParameterStore::index(const std::string& name) const {
  if (auto i = find(name)) return *i;
  throw std::out_of_range("unknown parameter '" + name + "'");
}

std::size_t ParameterStore::element_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

Gradients::Gradients(const ParameterStore& store) {
  grads_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) grads_.push_back(Tensor::zeros_like(store.value(i)));
}

void Gradients::accumulate(const Gradients& other) {
  if (other.size() != size()) throw ShapeError("gradient sets differ in size");
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    if (!grads_[i].same_shape(other.grads_[i])) throw ShapeError("gradient shape mismatch");
    grads_[i].mat() += other.grads_[i].mat();
  }
}

void Gradients::scale(double factor) {
  for (auto& g : grads_) g.mat() *= factor;
}

// ---------------------------------------------------------------------------
// Graph

const Tensor& Var::value() const {
  if (!graph_) throw GraphError("empty Var");
  return graph_->value(id_);
}

Graph::Graph(const ParameterStore* params, bool record)
    : params_(params), record_(record), param_nodes_(params ? params->size() : 0) {}

Var Graph::push(Tensor value, const char* tag, BackwardFn fn) {
  if (!value.all_finite()) {
    throw std::domain_error(std::string("non-finite value produced by ") + tag);
  }
  Node node;
  node.value = std::move(value);
  node.tag = tag;
  if (record_) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) { return push(std::move(value), "constant"); }

Var Graph::param(std::size_t index) {
  if (!params_ || index >= params_->size()) throw GraphError("parameter index out of range");
  if (auto id = param_nodes_[index]) return Var(this, *id);
  Var v = push(params_->value(index), "param");
  param_nodes_[index] = v.id();
  return v;
}

Var Graph::param(const std::string& name) {
  if (!params_) throw GraphError("graph has no parameter store");
  return param(params_->index(name));
}

Tensor& Graph::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.storage().empty() && n.value.size() != 0) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

Gradients Graph::backward(Var loss) {
  if (!record_) throw GraphError("backward on a non-recording graph");
  if (differentiated_) throw GraphError("backward called twice on the same forward pass");
  if (loss.graph() != this) throw GraphError("loss belongs to another graph");
  if (value(loss.id()).size() != 1) {
    throw GraphError("loss must be a scalar, got shape " + shape_string(value(loss.id()).shape()));
  }
  differentiated_ = true;
  grad(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.storage().empty()) continue;
    n.backward(*this, id);
  }
  Gradients out = params_ ? Gradients(*params_) : Gradients();
  for (std::size_t i = 0; i < param_nodes_.size(); ++i) {
    if (param_nodes_[i] && has_grad(*param_nodes_[i])) out[i] = nodes_[*param_nodes_[i]].grad;
  }
  return out;
}

void RowGroups::add(std::initializer_list<std::size_t> rows) {
  indices.insert(indices.end(), rows.begin(), rows.end());
  offsets.push_back(indices.size());
}

void RowGroups::add(const std::vector<std::size_t>& rows) {
  indices.insert(indices.end(), rows.begin(), rows.end());
  offsets.push_back(indices.size());
}

// ---------------------------------------------------------------------------
// Ops

namespace ad {

namespace {

Graph& same_graph(Var a, Var b) {
  if (!a.graph() || a.graph() != b.graph()) throw GraphError("operands belong to different graphs");
  return *a.graph();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

std::vector<std::size_t> matrix_shape(std::size_t rows, std::size_t cols) { return {rows, cols}; }

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  Tensor out = Tensor::uninitialized(matrix_shape(av.rows(), bv.cols()));
  out.mat().noalias() = av.mat() * bv.mat();
  const std::size_t ia = a.id(), ib = b.id();
  return g.push(std::move(out), "matmul", [ia, ib](Graph& g, std::size_t self) {
    const auto& dout = g.grad(self).mat();
    g.grad(ia).mat().noalias() += dout * g.value(ib).mat().transpose();
    g.grad(ib).mat().noalias() += g.value(ia).mat().transpose() * dout;
  });
}

Var linear(Var x, Var w, Var bias) {
  Graph& g = same_graph(x, w);
  same_graph(x, bias);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = bias.value();
  if (xv.cols() != wv.rows() || bv.size() != wv.cols()) {
    throw ShapeError("linear: x " + shape_string(xv.shape()) + ", w " + shape_string(wv.shape()) +
                     ", b " + shape_string(bv.shape()));
  }
  Tensor out = Tensor::uninitialized(matrix_shape(xv.rows(), wv.cols()));
  auto om = out.mat();
  om.noalias() = xv.mat() * wv.mat();
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data().data(), bv.size());
  const std::size_t ix = x.id(), iw = w.id(), ib = bias.id();
  return g.push(std::move(out), "linear", [ix, iw, ib](Graph& g, std::size_t self) {
    const auto& dout = g.grad(self).mat();
    g.grad(ix).mat().noalias() += dout * g.value(iw).mat().transpose();
    g.grad(iw).mat().noalias() += g.value(ix).mat().transpose() * dout;
    Tensor& gb = g.grad(ib);
    Eigen::Map<Eigen::RowVectorXd>(gb.data().data(), gb.size()) += dout.colwise().sum();
  });
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out.mat() += b.value().mat();
  const std::size_t ia = a.id(), ib = b.id();
  return g.push(std::move(out), "add", [ia, ib](Graph& g, std::size_t self) {
    const Tensor& dout = g.grad(self);
    g.grad(ia).mat() += dout.mat();
    g.grad(ib).mat() += dout.mat();
  });
}

Var add_bias(Var x, Var bias) {
  Graph& g = same_graph(x, bias);
  const Tensor& bv = bias.value();
  if (bv.size() != x.value().cols()) throw ShapeError("add_bias: width mismatch");
  Tensor out = x.value();
  out.mat().rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data().data(), bv.size());
  const std::size_t ix = x.id(), ib = bias.id();
  return g.push(std::move(out), "add_bias", [ix, ib](Graph& g, std::size_t self) {
    const auto& dout = g.grad(self).mat();
    g.grad(ix).mat() += dout;
    Tensor& gb = g.grad(ib);
    Eigen::Map<Eigen::RowVectorXd>(gb.data().data(), gb.size()) += dout.colwise().sum();
  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  out.mat().array() *= b.value().mat().array();
  const std::size_t ia = a.id(), ib = b.id();
  return g.push(std::move(out), "mul", [ia, ib](Graph& g, std::size_t self) {
    const auto dout = g.grad(self).mat().array();
    g.grad(ia).mat().array() += dout * g.value(ib).mat().array();
    g.grad(ib).mat().array() += dout * g.value(ia).mat().array();
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  out.mat() *= factor;
  const std::size_t ia = a.id();
  return a.graph()->push(std::move(out), "scale", [ia, factor](Graph& g, std::size_t self) {
    g.grad(ia).mat() += factor * g.grad(self).mat();
  });
}

Var sum(Var a) {
  const double total = a.value().mat().sum();
  const std::size_t ia = a.id();
  return a.graph()->push(Tensor::scalar(total), "sum", [ia](Graph& g, std::size_t self) {
    g.grad(ia).mat().array() += g.grad(self)[0];
  });
}

Var gelu(Var a) {
  const Tensor& x = a.value();
  Tensor out = Tensor::uninitialized(x.shape());
  Graph& g = *a.graph();
  auto cdf = std::make_shared<Storage>(g.recording() ? x.size() : 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double c = 0.5 * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
    if (!cdf->empty()) (*cdf)[i] = c;
    out[i] = x[i] * c;
  }
  if (!g.recording()) return g.push(std::move(out), "gelu");
  const std::size_t ia = a.id();
  return g.push(std::move(out), "gelu", [ia, cdf](Graph& g, std::size_t self) {
    const Tensor& x = g.value(ia);
    const Tensor& dout = g.grad(self);
    Tensor& dx = g.grad(ia);
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
      dx[i] += dout[i] * ((*cdf)[i] + x[i] * pdf);
    }
  });
}

Var tanh(Var a) {
  Tensor out = a.value();
  for (double& v : out.storage()) v = std::tanh(v);
  const std::size_t ia = a.id();
  return a.graph()->push(std::move(out), "tanh", [ia](Graph& g, std::size_t self) {
    const Tensor& y = g.value(self);
    const Tensor& dout = g.grad(self);
    Tensor& dx = g.grad(ia);
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] += dout[i] * (1.0 - y[i] * y[i]);
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Graph& g = same_graph(x, gamma);
  same_graph(x, beta);
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw ShapeError("layer_norm: affine parameters must have width " + std::to_string(d));
  }
  auto xhat = std::make_shared<Tensor>(Tensor::uninitialized(xv.shape()));
  auto inv_std = std::make_shared<std::vector<double>>(n);
  Tensor out = Tensor::uninitialized(xv.shape());
  const double* gm = gamma.value().data().data();
  const double* bt = beta.value().data().data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xv.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    double* xh = xhat->data().data() + r * d;
    double* o = out.data().data() + r * d;
    for (std::size_t c = 0; c < d; ++c) {
      xh[c] = (row[c] - mean) * is;
      o[c] = xh[c] * gm[c] + bt[c];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  if (!g.recording()) return g.push(std::move(out), "layer_norm");
  return g.push(std::move(out), "layer_norm",
                [ix, ig, ib, xhat, inv_std, n, d](Graph& g, std::size_t self) {
                  const Tensor& dout = g.grad(self);
                  const double* gm = g.value(ig).data().data();
                  Tensor& dg = g.grad(ig);
                  Tensor& db = g.grad(ib);
                  Tensor& dx = g.grad(ix);
                  std::vector<double> dxh(d);
                  for (std::size_t r = 0; r < n; ++r) {
                    const double* go = dout.data().data() + r * d;
                    const double* xh = xhat->data().data() + r * d;
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                      dg[c] += go[c] * xh[c];
                      db[c] += go[c];
                      dxh[c] = go[c] * gm[c];
                      s1 += dxh[c];
                      s2 += dxh[c] * xh[c];
                    }
                    const double inv_d = 1.0 / static_cast<double>(d);
                    double* dxr = dx.data().data() + r * d;
                    for (std::size_t c = 0; c < d; ++c) {
                      dxr[c] += (*inv_std)[r] * (dxh[c] - inv_d * s1 - xh[c] * inv_d * s2);
                    }
                  }
                });
}

Var masked_self_attention(Var q, Var k, Var v, std::shared_ptr<const AttentionLayout> layout) {
  Graph& g = same_graph(q, k);
  same_graph(q, v);
  const Tensor& qv = q.value();
  require_same_shape(qv, k.value(), "attention(q,k)");
  require_same_shape(qv, v.value(), "attention(q,v)");
  const std::size_t width = qv.cols();
  const std::size_t heads = layout->heads;
  if (heads == 0 || width % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(width) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t d = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<std::size_t> weight_offsets(layout->blocks.size() + 1, 0);
  for (std::size_t b = 0; b < layout->blocks.size(); ++b) {
    const auto& blk = layout->blocks[b];
    if (blk.offset + blk.size > qv.rows()) throw ShapeError("attention block exceeds rows");
    const BinaryMask& m = layout->masks.at(blk.mask);
    if (m.rows() != blk.size || m.cols() != blk.size) {
      throw ShapeError("attention mask " + std::to_string(m.rows()) + "x" +
                       std::to_string(m.cols()) + " does not match block of " +
                       std::to_string(blk.size) + " tokens");
    }
    weight_offsets[b + 1] = weight_offsets[b] + heads * blk.size * blk.size;
  }
  auto weights = std::make_shared<std::vector<double>>(weight_offsets.back());
  Tensor out(qv.shape());
  const double* qp = qv.data().data();
  const double* kp = k.value().data().data();
  const double* vp = v.value().data().data();
  for (std::size_t b = 0; b < layout->blocks.size(); ++b) {
    const auto& blk = layout->blocks[b];
    const BinaryMask& m = layout->masks[blk.mask];
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t base = blk.offset * width + h * d;
      kernels::attention_forward(qp + base, kp + base, vp + base, width, blk.size, blk.size, d, m,
                                 scale,
                                 weights->data() + weight_offsets[b] + h * blk.size * blk.size,
                                 out.data().data() + base, width);
    }
  }
  if (!g.recording()) return g.push(std::move(out), "masked_self_attention");
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return g.push(
      std::move(out), "masked_self_attention",
      [iq, ik, iv, layout, weights, weight_offsets, heads, d, width, scale](Graph& g,
                                                                           std::size_t self) {
        const double* qp = g.value(iq).data().data();
        const double* kp = g.value(ik).data().data();
        const double* vp = g.value(iv).data().data();
        const double* dout = g.grad(self).data().data();
        double* dq = g.grad(iq).data().data();
        double* dk = g.grad(ik).data().data();
        double* dv = g.grad(iv).data().data();
        std::vector<double> scratch;
        for (std::size_t b = 0; b < layout->blocks.size(); ++b) {
          const auto& blk = layout->blocks[b];
          scratch.resize(blk.size * blk.size);
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t base = blk.offset * width + h * d;
            kernels::attention_backward(
                qp + base, kp + base, vp + base, width, blk.size, blk.size, d,
                weights->data() + weight_offsets[b] + h * blk.size * blk.size, dout + base, width,
                scale, dq + base, dk + base, dv + base, scratch.data());
          }
        }
      });
}

Var gather_rows(Var x, std::vector<std::size_t> rows) {
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols();
  Tensor out = Tensor::uninitialized(matrix_shape(rows.size(), d));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= xv.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(xv.data().data() + rows[r] * d, d, out.data().data() + r * d);
  }
  const std::size_t ix = x.id();
  Graph& g = *x.graph();
  if (!g.recording()) return g.push(std::move(out), "gather_rows");
  return g.push(std::move(out), "gather_rows",
                [ix, rows = std::move(rows), d](Graph& g, std::size_t self) {
                  const double* dout = g.grad(self).data().data();
                  double* dx = g.grad(ix).data().data();
                  for (std::size_t r = 0; r < rows.size(); ++r) {
                    const double* src = dout + r * d;
                    double* dst = dx + rows[r] * d;
                    for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                  }
                });
}

Var mean_rows(Var x, std::shared_ptr<const RowGroups> groups) {
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols();
  const std::size_t n = groups->count();
  Tensor out(matrix_shape(n, d));
  for (std::size_t gidx = 0; gidx < n; ++gidx) {
    const std::size_t lo = groups->offsets[gidx], hi = groups->offsets[gidx + 1];
    if (hi == lo) throw ShapeError("mean_rows: empty group");
    double* o = out.data().data() + gidx * d;
    for (std::size_t p = lo; p < hi; ++p) {
      if (groups->indices[p] >= xv.rows()) throw ShapeError("mean_rows: index out of range");
      const double* src = xv.data().data() + groups->indices[p] * d;
      for (std::size_t c = 0; c < d; ++c) o[c] += src[c];
    }
    const double inv = 1.0 / static_cast<double>(hi - lo);
    for (std::size_t c = 0; c < d; ++c) o[c] *= inv;
  }
  const std::size_t ix = x.id();
  Graph& g = *x.graph();
  if (!g.recording()) return g.push(std::move(out), "mean_rows");
  return g.push(std::move(out), "mean_rows", [ix, groups, d](Graph& g, std::size_t self) {
    const double* dout = g.grad(self).data().data();
    double* dx = g.grad(ix).data().data();
    for (std::size_t gidx = 0; gidx < groups->count(); ++gidx) {
      const std::size_t lo = groups->offsets[gidx], hi = groups->offsets[gidx + 1];
      const double inv = 1.0 / static_cast<double>(hi - lo);
      const double* src = dout + gidx * d;
      for (std::size_t p = lo; p < hi; ++p) {
        double* dst = dx + groups->indices[p] * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += inv * src[c];
      }
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Graph& g = *parts.front().graph();
  const std::size_t d = parts.front().value().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.graph() != &g) throw GraphError("concat_rows: operands belong to different graphs");
    if (p.value().cols() != d) throw ShapeError("concat_rows: width mismatch");
    total += p.value().rows();
  }
  Tensor out = Tensor::uninitialized(matrix_shape(total, d));
  std::vector<std::size_t> ids;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().data() + offset);
    offset += p.value().size();
    ids.push_back(p.id());
  }
  if (!g.recording()) return g.push(std::move(out), "concat_rows");
  return g.push(std::move(out), "concat_rows", [ids](Graph& g, std::size_t self) {
    const double* dout = g.grad(self).data().data();
    std::size_t offset = 0;
    for (std::size_t id : ids) {
      Tensor& dx = g.grad(id);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dout[offset + i];
      offset += dx.size();
    }
  });
}

Var reshape(Var x, std::size_t rows, std::size_t cols) {
  const Tensor& xv = x.value();
  if (rows * cols != xv.size()) {
    throw ShapeError("reshape: " + shape_string(xv.shape()) + " to " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  Tensor out(matrix_shape(rows, cols), std::vector<double>(xv.data().begin(), xv.data().end()));
  Graph& g = *x.graph();
  if (!g.recording()) return g.push(std::move(out), "reshape");
  const std::size_t ix = x.id();
  return g.push(std::move(out), "reshape", [ix](Graph& g, std::size_t self) {
    const Tensor& dout = g.grad(self);
    Tensor& dx = g.grad(ix);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dout[i];
  });
}

Var replace_rows(Var x, Var token, std::vector<std::uint8_t> replace) {
  Graph& g = same_graph(x, token);
  const Tensor& xv = x.value();
  const Tensor& tv = token.value();
  const std::size_t d = xv.cols();
  if (tv.size() != d || replace.size() != xv.rows()) throw ShapeError("replace_rows: shape mismatch");
  Tensor out = xv;
  for (std::size_t r = 0; r < replace.size(); ++r) {
    if (replace[r]) std::copy_n(tv.data().data(), d, out.data().data() + r * d);
  }
  if (!g.recording()) return g.push(std::move(out), "replace_rows");
  const std::size_t ix = x.id(), it = token.id();
  return g.push(std::move(out), "replace_rows",
                [ix, it, d, replace = std::move(replace)](Graph& g, std::size_t self) {
                  const double* dout = g.grad(self).data().data();
                  double* dx = g.grad(ix).data().data();
                  double* dt = g.grad(it).data().data();
                  for (std::size_t r = 0; r < replace.size(); ++r) {
                    double* dst = replace[r] ? dt : dx + r * d;
                    for (std::size_t c = 0; c < d; ++c) dst[c] += dout[r * d + c];
                  }
                });
}

Var l1_loss(Var pred, const Tensor& target, double weight) {
  const Tensor& pv = pred.value();
  if (pv.size() != target.size()) {
    throw ShapeError("l1_loss: prediction " + shape_string(pv.shape()) + " vs target " +
                     shape_string(target.shape()));
  }
  double total = 0.0;
  auto sign = std::make_shared<std::vector<double>>(pv.size(), 0.0);
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (std::isnan(target[i])) continue;
    const double diff = pv[i] - target[i];
    total += std::abs(diff);
    (*sign)[i] = diff > 0.0 ? weight : (diff < 0.0 ? -weight : 0.0);
  }
  const std::size_t ip = pred.id();
  return pred.graph()->push(Tensor::scalar(weight * total), "l1_loss",
                            [ip, sign](Graph& g, std::size_t self) {
                              const double s = g.grad(self)[0];
                              Tensor& dp = g.grad(ip);
                              for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += s * (*sign)[i];
                            });
}

Var cross_entropy(Var logits, const std::vector<int>& labels, double weight) {
  const Tensor& lv = logits.value();
  const std::size_t n = lv.rows(), c = lv.cols();
  if (labels.size() != n) throw ShapeError("cross_entropy: label count mismatch");
  auto probs = std::make_shared<Tensor>(lv.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0) continue;
    if (static_cast<std::size_t>(labels[r]) >= c) throw std::out_of_range("cross_entropy: label out of range");
    const double* row = lv.data().data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    total += log_z - row[labels[r]];
    for (std::size_t j = 0; j < c; ++j) probs->at(r, j) = std::exp(row[j] - log_z);
  }
  const std::size_t il = logits.id();
  return logits.graph()->push(
      Tensor::scalar(weight * total), "cross_entropy",
      [il, probs, labels, weight, c](Graph& g, std::size_t self) {
        const double s = g.grad(self)[0] * weight;
        Tensor& dl = g.grad(il);
        for (std::size_t r = 0; r < labels.size(); ++r) {
          if (labels[r] < 0) continue;
          for (std::size_t j = 0; j < c; ++j) {
            const double target = static_cast<int>(j) == labels[r] ? 1.0 : 0.0;
            dl.at(r, j) += s * (probs->at(r, j) - target);
          }
        }
      });
}

}  // namespace ad

}  // namespace tcd
