#include "spmim/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "conv_kernels.hpp"
#include "spmim/errors.hpp"

namespace spmim {

const Tensor& Var::value() const {
  if (!valid()) throw StateError("use of an unbound Var");
  return graph->value(id);
}

const Tensor& Var::grad() const {
  if (!valid()) throw StateError("use of an unbound Var");
  return graph->grad(id);
}

namespace {

void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericalError(std::string("non-finite value produced by ") + op);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_to_string(t.shape()));
  }
}

Graph& graph_of(std::initializer_list<Var> vars) {
  Graph* g = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw StateError("use of an unbound Var");
    if (g && v.graph != g) throw StateError("Vars from different graphs combined");
    g = v.graph;
  }
  return *g;
}

const Tensor kEmptyGrad;

}  // namespace

// ---------------------------------------------------------------------------
// Graph

Var Graph::constant(Tensor value) {
  require_finite(value, "constant");
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::input(Tensor value, bool requires_grad) {
  require_finite(value, "input");
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::param(Parameter& p) {
  require_finite(p.value, "parameter");
  Node node;
  node.value = p.value;
  node.param = &p;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::record(Tensor value, std::vector<int> inputs, BackwardFn fn) {
  if (backward_done_) throw StateError("graph already differentiated; build a new one");
  require_finite(value, "forward op");
  Node node;
  node.value = std::move(value);
  for (int id : inputs) {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) throw StateError("dangling input id");
    node.requires_grad = node.requires_grad || nodes_[static_cast<std::size_t>(id)].requires_grad;
  }
  node.inputs = std::move(inputs);
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

const Tensor& Graph::grad(int id) const {
  const Node& node = nodes_.at(static_cast<std::size_t>(id));
  return node.grad.empty() ? kEmptyGrad : node.grad;
}

Tensor& Graph::grad_slot(int id) {
  Node& node = nodes_.at(static_cast<std::size_t>(id));
  if (node.grad.empty()) node.grad = Tensor::zeros(node.value.shape());
  return node.grad;
}

void Graph::backward(Var loss) {
  if (!loss.valid() || loss.graph != this) throw StateError("backward: loss does not belong to this graph");
  if (backward_done_) throw StateError("backward: tape already consumed");
  if (value(loss.id).numel() != 1) throw DimensionError("backward: loss must be a scalar");
  backward_done_ = true;

  grad_slot(loss.id).fill(1.0);
  for (int id = loss.id; id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
    node.backward(*this, id);
  }
  for (Node& node : nodes_) {
    if (node.param) node.param->zero_grad();
  }
  for (Node& node : nodes_) {
    if (!node.param || node.grad.empty()) continue;
    auto dst = node.param->grad.data();
    auto src = node.grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    require_finite(node.param->grad, "backward");
  }
}

int conv_output_extent(int input, int kernel, int stride, int padding, int padding_end) {
  if (padding_end < 0) padding_end = padding;
  if (stride <= 0 || padding < 0 || kernel <= 0) throw GeometryError("invalid convolution geometry");
  const int span = input + padding + padding_end - kernel;
  if (span < 0 || span % stride != 0) {
    throw GeometryError("convolution window (k=" + std::to_string(kernel) + ", s=" +
                        std::to_string(stride) + ", p=" + std::to_string(padding) + "/" +
                        std::to_string(padding_end) + ") does not tile input extent " + std::to_string(input));
  }
  return span / stride + 1;
}

namespace ops {

// ---------------------------------------------------------------------------
// Convolution

Var conv2d(Var input, Var weight, std::optional<Var> bias, const Conv2dOptions& opt,
           const SpatialMask* active_out) {
  Graph& graph = bias ? graph_of({input, weight, *bias}) : graph_of({input, weight});
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  if (opt.groups <= 0 || x.dim(1) % opt.groups != 0 || w.dim(0) % opt.groups != 0) {
    throw DimensionError("conv2d: channels not divisible by groups");
  }
  if (w.dim(1) != x.dim(1) / opt.groups) {
    throw DimensionError("conv2d: weight " + shape_to_string(w.shape()) + " incompatible with input " +
                         shape_to_string(x.shape()));
  }
  if (bias && (bias->value().rank() != 1 || bias->value().dim(0) != w.dim(0))) {
    throw DimensionError("conv2d: bias must have shape [Cout]");
  }

  detail::ConvGeometry geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3),
                           opt.stride, opt.padding, opt.groups, 0, 0};
  geo.out_h = conv_output_extent(geo.in_h, geo.kernel_h, opt.stride, opt.padding, opt.trailing_padding());
  geo.out_w = conv_output_extent(geo.in_w, geo.kernel_w, opt.stride, opt.padding, opt.trailing_padding());

  std::shared_ptr<const SpatialMask> mask;
  if (active_out) {
    active_out->require_compatible(geo.batch, geo.out_h, geo.out_w, "conv2d active outputs");
    mask = std::make_shared<SpatialMask>(*active_out);
  }
  auto runs = std::make_shared<RowRuns>(geo.batch, geo.out_h, geo.out_w, mask.get());

  Tensor out({geo.batch, geo.out_channels, geo.out_h, geo.out_w});
  detail::conv2d_forward(geo, x.data().data(), w.data().data(),
                         bias ? bias->value().data().data() : nullptr, *runs, out.data().data());

  std::vector<int> inputs{input.id, weight.id};
  if (bias) inputs.push_back(bias->id);
  const int bias_id = bias ? bias->id : -1;
  return graph.record(std::move(out), inputs,
                      [geo, runs, mask, in_id = input.id, w_id = weight.id, bias_id](Graph& g, int self) {
                        const Tensor& gout = g.grad(self);
                        double* gin = g.requires_grad(in_id) ? g.grad_slot(in_id).data().data() : nullptr;
                        double* gw = g.requires_grad(w_id) ? g.grad_slot(w_id).data().data() : nullptr;
                        double* gb = (bias_id >= 0 && g.requires_grad(bias_id))
                                         ? g.grad_slot(bias_id).data().data()
                                         : nullptr;
                        detail::conv2d_backward(geo, g.value(in_id).data().data(),
                                                g.value(w_id).data().data(), gout.data().data(), *runs,
                                                gin, gw, gb);
                      });
}

// ---------------------------------------------------------------------------
// Elementwise

Var relu6(Var x) {
  Graph& graph = graph_of({x});
  Tensor out = x.value();
  for (double& v : out.data()) v = std::min(std::max(v, 0.0), 6.0);
  return graph.record(std::move(out), {x.id}, [in = x.id](Graph& g, int self) {
    const Tensor& gout = g.grad(self);
    const Tensor& xv = g.value(in);
    Tensor& gin = g.grad_slot(in);
    for (std::size_t i = 0; i < gin.numel(); ++i) {
      if (xv[i] > 0.0 && xv[i] < 6.0) gin[i] += gout[i];
    }
  });
}

Var upsample_nearest2x(Var x) {
  Graph& graph = graph_of({x});
  const Tensor& xv = x.value();
  require_rank(xv, 4, "upsample_nearest2x");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out({n, c, 2 * h, 2 * w});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int r = 0; r < 2 * h; ++r)
        for (int col = 0; col < 2 * w; ++col) out.at(b, ch, r, col) = xv.at(b, ch, r / 2, col / 2);
  return graph.record(std::move(out), {x.id}, [in = x.id](Graph& g, int self) {
    const Tensor& gout = g.grad(self);
    Tensor& gin = g.grad_slot(in);
    const int n = gin.dim(0), c = gin.dim(1), h = gin.dim(2), w = gin.dim(3);
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch)
        for (int r = 0; r < h; ++r)
          for (int col = 0; col < w; ++col) {
            gin.at(b, ch, r, col) += gout.at(b, ch, 2 * r, 2 * col) + gout.at(b, ch, 2 * r, 2 * col + 1) +
                                     gout.at(b, ch, 2 * r + 1, 2 * col) +
                                     gout.at(b, ch, 2 * r + 1, 2 * col + 1);
          }
  });
}

Var add(Var a, Var b) {
  Graph& graph = graph_of({a, b});
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return graph.record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Graph& g, int self) {
    const Tensor& gout = g.grad(self);
    for (int id : {ia, ib}) {
      if (!g.requires_grad(id)) continue;
      Tensor& gin = g.grad_slot(id);
      for (std::size_t i = 0; i < gin.numel(); ++i) gin[i] += gout[i];
    }
  });
}

Var sub(Var a, Var b) {
  Graph& graph = graph_of({a, b});
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return graph.record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Graph& g, int self) {
    const Tensor& gout = g.grad(self);
    if (g.requires_grad(ia)) {
      Tensor& ga = g.grad_slot(ia);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += gout[i];
    }
    if (g.requires_grad(ib)) {
      Tensor& gb = g.grad_slot(ib);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= gout[i];
    }
  });
}

Var mul(Var a, Var b) {
  Graph& graph = graph_of({a, b});
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return graph.record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Graph& g, int self) {
    const Tensor& gout = g.grad(self);
    if (g.requires_grad(ia)) {
      Tensor& ga = g.grad_slot(ia);
      const Tensor& bv = g.value(ib);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += gout[i] * bv[i];
    }
    if (g.requires_grad(ib)) {
      Tensor& gb = g.grad_slot(ib);
      const Tensor& av = g.value(ia);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += gout[i] * av[i];
    }
  });
}

Var scale(Var x, double factor) {
  Graph& graph = graph_of({x});
  Tensor out = x.value();
  for (double& v : out.data()) v *= factor;
  return graph.record(std::move(out), {x.id}, [in = x.id, factor](Graph& g, int self) {
    const Tensor& gout = g.grad(self);
    Tensor& gin = g.grad_slot(in);
    for (std::size_t i = 0; i < gin.numel(); ++i) gin[i] += factor * gout[i];
  });
}

Var square(Var x) { return mul(x, x); }

Var sum(Var x) {
  Graph& graph = graph_of({x});
  return graph.record(Tensor::scalar(x.value().sum()), {x.id}, [in = x.id](Graph& g, int self) {
    const double gout = g.grad(self)[0];
    Tensor& gin = g.grad_slot(in);
    for (double& v : gin.data()) v += gout;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var mul_const(Var x, const Tensor& factor) {
  Graph& graph = graph_of({x});
  require_same_shape(x.value(), factor, "mul_const");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= factor[i];
  auto f = std::make_shared<const Tensor>(factor);
  return graph.record(std::move(out), {x.id}, [in = x.id, f](Graph& g, int self) {
    const Tensor& gout = g.grad(self);
    Tensor& gin = g.grad_slot(in);
    for (std::size_t i = 0; i < gin.numel(); ++i) gin[i] += gout[i] * (*f)[i];
  });
}

// ---------------------------------------------------------------------------
// Masking

Var mask_zero(Var x, const SpatialMask& mask) {
  Graph& graph = graph_of({x});
  const Tensor& xv = x.value();
  require_rank(xv, 4, "mask_zero");
  const int n = xv.dim(0), c = xv.dim(1);
  mask.require_compatible(n, xv.dim(2), xv.dim(3), "mask_zero");
  const std::size_t plane = mask.plane_size();
  Tensor out = xv;
  for (int b = 0; b < n; ++b) {
    const std::uint8_t* vis = mask.plane(b);
    for (int ch = 0; ch < c; ++ch) {
      double* p = out.data().data() + (static_cast<std::size_t>(b) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i)
        if (!vis[i]) p[i] = 0.0;
    }
  }
  auto m = std::make_shared<const SpatialMask>(mask);
  return graph.record(std::move(out), {x.id}, [in = x.id, m](Graph& g, int self) {
    const Tensor& gout = g.grad(self);
    Tensor& gin = g.grad_slot(in);
    const int n = gin.dim(0), c = gin.dim(1);
    const std::size_t plane = m->plane_size();
    for (int b = 0; b < n; ++b) {
      const std::uint8_t* vis = m->plane(b);
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i)
          if (vis[i]) gin[off + i] += gout[off + i];
      }
    }
  });
}

Var fill_masked(Var x, const SpatialMask& mask, Var fill) {
  Graph& graph = graph_of({x, fill});
  const Tensor& xv = x.value();
  require_rank(xv, 4, "fill_masked");
  const int n = xv.dim(0), c = xv.dim(1);
  if (fill.value().rank() != 1 || fill.value().dim(0) != c) {
    throw DimensionError("fill_masked: fill vector has shape " + shape_to_string(fill.value().shape()) +
                         ", features have " + std::to_string(c) + " channels");
  }
  mask.require_compatible(n, xv.dim(2), xv.dim(3), "fill_masked");
  const std::size_t plane = mask.plane_size();
  Tensor out = xv;
  for (int b = 0; b < n; ++b) {
    const std::uint8_t* vis = mask.plane(b);
    for (int ch = 0; ch < c; ++ch) {
      const double e = fill.value()[static_cast<std::size_t>(ch)];
      double* p = out.data().data() + (static_cast<std::size_t>(b) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i)
        if (!vis[i]) p[i] = e;
    }
  }
  auto m = std::make_shared<const SpatialMask>(mask);
  return graph.record(std::move(out), {x.id, fill.id}, [ix = x.id, ie = fill.id, m](Graph& g, int self) {
    const Tensor& gout = g.grad(self);
    const Shape& shape = g.value(ix).shape();
    const int n = shape[0], c = shape[1];
    const std::size_t plane = m->plane_size();
    Tensor* gx = g.requires_grad(ix) ? &g.grad_slot(ix) : nullptr;
    Tensor* ge = g.requires_grad(ie) ? &g.grad_slot(ie) : nullptr;
    for (int b = 0; b < n; ++b) {
      const std::uint8_t* vis = m->plane(b);
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          if (vis[i]) {
            if (gx) (*gx)[off + i] += gout[off + i];
          } else {
            acc += gout[off + i];
          }
        }
        if (ge) (*ge)[static_cast<std::size_t>(ch)] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Batch normalization

Var batch_norm(Var x, Var gamma, Var beta, BatchNormStats& stats, Mode mode, const SpatialMask* mask) {
  Graph& graph = graph_of({x, gamma, beta});
  const Tensor& xv = x.value();
  require_rank(xv, 4, "batch_norm");
  const int n = xv.dim(0), c = xv.dim(1);
  const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma.value(), &beta.value(), &stats.running_mean, &stats.running_var}) {
    if (t->rank() != 1 || t->dim(0) != c) throw DimensionError("batch_norm: per-channel tensor has wrong shape");
  }
  std::shared_ptr<const SpatialMask> m;
  if (mask) {
    mask->require_compatible(n, xv.dim(2), xv.dim(3), "batch_norm");
    m = std::make_shared<const SpatialMask>(*mask);
  }
  auto visible = [&m](int b, std::size_t i) { return !m || m->plane(b)[i] != 0; };

  std::size_t count = 0;
  for (int b = 0; b < n; ++b)
    for (std::size_t i = 0; i < plane; ++i) count += visible(b, i) ? 1 : 0;

  std::vector<double> mean(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
  if (mode == Mode::kTrain) {
    if (count == 0) throw ArgumentError("batch_norm: no visible positions in a training batch");
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int b = 0; b < n; ++b) {
        const double* p = xv.data().data() + (static_cast<std::size_t>(b) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i)
          if (visible(b, i)) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double v = 0.0;
      for (int b = 0; b < n; ++b) {
        const double* p = xv.data().data() + (static_cast<std::size_t>(b) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i)
          if (visible(b, i)) v += (p[i] - mu) * (p[i] - mu);
      }
      v /= static_cast<double>(count);
      mean[static_cast<std::size_t>(ch)] = mu;
      inv_std[static_cast<std::size_t>(ch)] = 1.0 / std::sqrt(v + stats.eps);
      const std::size_t k = static_cast<std::size_t>(ch);
      stats.running_mean[k] = (1.0 - stats.momentum) * stats.running_mean[k] + stats.momentum * mu;
      stats.running_var[k] = (1.0 - stats.momentum) * stats.running_var[k] + stats.momentum * v;
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t k = static_cast<std::size_t>(ch);
      mean[k] = stats.running_mean[k];
      inv_std[k] = 1.0 / std::sqrt(stats.running_var[k] + stats.eps);
    }
  }

  Tensor xhat(xv.shape());
  Tensor out(xv.shape());
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t k = static_cast<std::size_t>(ch);
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
      const double gk = gamma.value()[k], bk = beta.value()[k];
      for (std::size_t i = 0; i < plane; ++i) {
        if (!visible(b, i)) continue;
        const double h = (xv[off + i] - mean[k]) * inv_std[k];
        xhat[off + i] = h;
        out[off + i] = gk * h + bk;
      }
    }
  }

  auto saved = std::make_shared<std::pair<Tensor, std::vector<double>>>(std::move(xhat), std::move(inv_std));
  const bool train = mode == Mode::kTrain;
  return graph.record(
      std::move(out), {x.id, gamma.id, beta.id},
      [ix = x.id, ig = gamma.id, ib = beta.id, m, saved, train, count](Graph& g, int self) {
        const Tensor& gout = g.grad(self);
        const Tensor& xhat = saved->first;
        const std::vector<double>& inv_std = saved->second;
        const Shape& shape = xhat.shape();
        const int n = shape[0], c = shape[1];
        const std::size_t plane = static_cast<std::size_t>(shape[2]) * shape[3];
        auto visible = [&m](int b, std::size_t i) { return !m || m->plane(b)[i] != 0; };
        Tensor* gx = g.requires_grad(ix) ? &g.grad_slot(ix) : nullptr;
        Tensor* gg = g.requires_grad(ig) ? &g.grad_slot(ig) : nullptr;
        Tensor* gb = g.requires_grad(ib) ? &g.grad_slot(ib) : nullptr;
        const Tensor& gamma = g.value(ig);
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t k = static_cast<std::size_t>(ch);
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int b = 0; b < n; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              if (!visible(b, i)) continue;
              sum_dy += gout[off + i];
              sum_dy_xhat += gout[off + i] * xhat[off + i];
            }
          }
          if (gg) (*gg)[k] += sum_dy_xhat;
          if (gb) (*gb)[k] += sum_dy;
          if (!gx) continue;
          const double scale = gamma[k] * inv_std[k];
          const double inv_count = 1.0 / static_cast<double>(count);
          for (int b = 0; b < n; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              if (!visible(b, i)) continue;
              if (train) {
                (*gx)[off + i] +=
                    scale * (gout[off + i] - inv_count * (sum_dy + xhat[off + i] * sum_dy_xhat));
              } else {
                (*gx)[off + i] += scale * gout[off + i];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Heads and losses

Var global_avg_pool(Var x) {
  Graph& graph = graph_of({x});
  const Tensor& xv = x.value();
  require_rank(xv, 4, "global_avg_pool");
  const int n = xv.dim(0), c = xv.dim(1);
  const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  Tensor out({n, c});
  for (std::size_t k = 0; k < static_cast<std::size_t>(n) * c; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += xv[k * plane + i];
    out[k] = s / static_cast<double>(plane);
  }
  return graph.record(std::move(out), {x.id}, [in = x.id, plane](Graph& g, int self) {
    const Tensor& gout = g.grad(self);
    Tensor& gin = g.grad_slot(in);
    for (std::size_t k = 0; k < gout.numel(); ++k) {
      const double v = gout[k] / static_cast<double>(plane);
      for (std::size_t i = 0; i < plane; ++i) gin[k * plane + i] += v;
    }
  });
}

Var linear(Var x, Var weight, Var bias) {
  Graph& graph = graph_of({x, weight, bias});
  const Tensor& xv = x.value();
  const Tensor& w = weight.value();
  require_rank(xv, 2, "linear input");
  require_rank(w, 2, "linear weight");
  const int n = xv.dim(0), f = xv.dim(1), k = w.dim(0);
  if (w.dim(1) != f || bias.value().rank() != 1 || bias.value().dim(0) != k) {
    throw DimensionError("linear: incompatible shapes");
  }
  Tensor out({n, k});
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < k; ++o) {
      double s = bias.value()[static_cast<std::size_t>(o)];
      for (int i = 0; i < f; ++i)
        s += w[static_cast<std::size_t>(o) * f + i] * xv[static_cast<std::size_t>(b) * f + i];
      out[static_cast<std::size_t>(b) * k + o] = s;
    }
  return graph.record(std::move(out), {x.id, weight.id, bias.id},
                      [ix = x.id, iw = weight.id, ib = bias.id](Graph& g, int self) {
                        const Tensor& gout = g.grad(self);
                        const Tensor& xv = g.value(ix);
                        const Tensor& w = g.value(iw);
                        const int n = xv.dim(0), f = xv.dim(1), k = w.dim(0);
                        Tensor* gx = g.requires_grad(ix) ? &g.grad_slot(ix) : nullptr;
                        Tensor* gw = g.requires_grad(iw) ? &g.grad_slot(iw) : nullptr;
                        Tensor* gb = g.requires_grad(ib) ? &g.grad_slot(ib) : nullptr;
                        for (int b = 0; b < n; ++b)
                          for (int o = 0; o < k; ++o) {
                            const double go = gout[static_cast<std::size_t>(b) * k + o];
                            if (gb) (*gb)[static_cast<std::size_t>(o)] += go;
                            for (int i = 0; i < f; ++i) {
                              const std::size_t wi = static_cast<std::size_t>(o) * f + i;
                              const std::size_t xi = static_cast<std::size_t>(b) * f + i;
                              if (gw) (*gw)[wi] += go * xv[xi];
                              if (gx) (*gx)[xi] += go * w[wi];
                            }
                          }
                      });
}

Var softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
  Graph& graph = graph_of({logits});
  const Tensor& z = logits.value();
  require_rank(z, 2, "softmax_cross_entropy");
  const int n = z.dim(0), k = z.dim(1);
  if (static_cast<int>(labels.size()) != n) throw DimensionError("softmax_cross_entropy: label count");
  for (int y : labels) {
    if (y < 0 || y >= k) throw ArgumentError("softmax_cross_entropy: label out of range");
  }
  Tensor probs = softmax_rows(z);
  double loss = 0.0;
  for (int b = 0; b < n; ++b) {
    const double* row = z.data().data() + static_cast<std::size_t>(b) * k;
    const double mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    loss += (mx + std::log(s)) - row[labels[static_cast<std::size_t>(b)]];
  }
  loss /= n;
  auto saved = std::make_shared<std::pair<Tensor, std::vector<int>>>(std::move(probs), labels);
  return graph.record(Tensor::scalar(loss), {logits.id}, [in = logits.id, saved](Graph& g, int self) {
    const double gout = g.grad(self)[0];
    const Tensor& p = saved->first;
    const int n = p.dim(0), k = p.dim(1);
    Tensor& gin = g.grad_slot(in);
    for (int b = 0; b < n; ++b)
      for (int j = 0; j < k; ++j) {
        const std::size_t idx = static_cast<std::size_t>(b) * k + j;
        const double onehot = (saved->second[static_cast<std::size_t>(b)] == j) ? 1.0 : 0.0;
        gin[idx] += gout * (p[idx] - onehot) / n;
      }
  });
}

Var masked_mse(Var recon, const Tensor& target, const SpatialMask& pixel_mask) {
  Graph& graph = graph_of({recon});
  const Tensor& r = recon.value();
  require_rank(r, 4, "masked_mse");
  require_same_shape(r, target, "masked_mse");
  const int n = r.dim(0), c = r.dim(1);
  pixel_mask.require_compatible(n, r.dim(2), r.dim(3), "masked_mse");
  const std::size_t plane = pixel_mask.plane_size();

  std::size_t count = 0;
  double total = 0.0;
  for (int b = 0; b < n; ++b) {
    const std::uint8_t* vis = pixel_mask.plane(b);
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (vis[i]) continue;
        const double d = r[off + i] - target[off + i];
        total += d * d;
        ++count;
      }
    }
  }
  if (count == 0) throw ArgumentError("masked_mse: no masked pixels, loss undefined");
  const double loss = total / static_cast<double>(count);
  auto m = std::make_shared<const SpatialMask>(pixel_mask);
  auto t = std::make_shared<const Tensor>(target);
  return graph.record(Tensor::scalar(loss), {recon.id}, [in = recon.id, m, t, count](Graph& g, int self) {
    const double gout = g.grad(self)[0];
    const Tensor& r = g.value(in);
    Tensor& gin = g.grad_slot(in);
    const int n = r.dim(0), c = r.dim(1);
    const std::size_t plane = m->plane_size();
    const double k = 2.0 * gout / static_cast<double>(count);
    for (int b = 0; b < n; ++b) {
      const std::uint8_t* vis = m->plane(b);
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i)
          if (!vis[i]) gin[off + i] += k * (r[off + i] - (*t)[off + i]);
      }
    }
  });
}

}  // namespace ops

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax_rows: expected [N,K]");
  const int n = logits.dim(0), k = logits.dim(1);
  Tensor p(logits.shape());
  for (int b = 0; b < n; ++b) {
    const std::size_t off = static_cast<std::size_t>(b) * k;
    double mx = logits[off];
    for (int j = 1; j < k; ++j) mx = std::max(mx, logits[off + j]);
    double s = 0.0;
    for (int j = 0; j < k; ++j) {
      p[off + j] = std::exp(logits[off + j] - mx);
      s += p[off + j];
    }
    for (int j = 0; j < k; ++j) p[off + j] /= s;
  }
  return p;
}

}  // namespace spmim
