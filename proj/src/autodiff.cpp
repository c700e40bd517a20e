#include "sclld/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "sclld/error.hpp"
#include "sclld/kernels.hpp"

namespace sclld {

void zero_grads(std::span<Parameter* const> params) {
  for (auto* p : params) p->zero_grad();
}

std::size_t parameter_count(std::span<Parameter* const> params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->value.size();
  return n;
}

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->nodes_.at(index_)->value(); }

const Tensor& Var::grad() const {
  auto& node = *tape_->nodes_.at(index_);
  Tensor& g = node.grad();
  if (g.size() != node.value().size()) g = Tensor(node.value().dims());
  return g;
}

bool Var::requires_grad() const { return tape_->nodes_.at(index_)->requires_grad; }

Var Tape::push(std::unique_ptr<Node> node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  auto node = std::make_unique<Node>();
  node->own_value = std::move(value);
  return push(std::move(node));
}

Var Tape::constant_ref(const Tensor& value) {
  auto node = std::make_unique<Node>();
  node->bound_value = &value;
  return push(std::move(node));
}

Var Tape::variable(Tensor value) {
  Var v = constant(std::move(value));
  nodes_.back()->requires_grad = true;
  return v;
}

Var Tape::parameter(Parameter& param) {
  if (param.grad.dims() != param.value.dims()) param.grad = Tensor(param.value.dims());
  auto node = std::make_unique<Node>();
  node->bound_value = &param.value;
  node->bound_grad = &param.grad;
  node->requires_grad = true;
  return push(std::move(node));
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardRule rule) {
  auto node = std::make_unique<Node>();
  node->own_value = std::move(value);
  for (const auto& in : inputs) {
    if (in.tape_ != this) fail(ErrorKind::InvalidArgument, "op input recorded on a different tape");
    node->inputs.push_back(in.index_);
    node->requires_grad = node->requires_grad || nodes_[in.index_]->requires_grad;
  }
  if (node->requires_grad) node->rule = std::move(rule);
  return push(std::move(node));
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this || loss.index_ >= nodes_.size()) {
    fail(ErrorKind::InvalidArgument, "backward: loss is not on this tape");
  }
  if (nodes_[loss.index_]->value().size() != 1) {
    fail(ErrorKind::ShapeMismatch, "backward: loss must be a scalar, got shape " +
                                       shape_to_string(nodes_[loss.index_]->value().dims()));
  }
  // Owned gradients restart from zero; bound parameter gradients accumulate.
  for (auto& node : nodes_) {
    if (!node->requires_grad || node->bound_grad != nullptr) continue;
    if (node->own_grad.size() != node->own_value.size()) {
      node->own_grad = Tensor(node->own_value.dims());
    } else {
      node->own_grad.fill(0.0);
    }
  }
  auto& root = *nodes_[loss.index_];
  if (!root.requires_grad) return;
  root.grad()[0] += 1.0;

  for (std::size_t i = loss.index_ + 1; i-- > 0;) {
    Node& node = *nodes_[i];
    if (!node.requires_grad || !node.rule) continue;
    BackwardContext ctx{node.value(), node.grad(), {}, {}};
    for (auto in : node.inputs) {
      Node& src = *nodes_[in];
      ctx.inputs.push_back(&src.value());
      ctx.input_grads.push_back(src.requires_grad ? &src.grad() : nullptr);
    }
    node.rule(ctx);
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace ad {

namespace {

void add_into(Tensor& dst, std::span<const double> src) {
  auto d = dst.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += src[i];
}

struct ImageBatch {
  std::size_t batch, channels, h, w;
};

ImageBatch image_batch(const Tensor& x, const char* op) {
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2)};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  fail(ErrorKind::ShapeMismatch,
       std::string(op) + ": expected [C,H,W] or [N,C,H,W], got " + shape_to_string(x.dims()));
}

Shape image_shape(bool batched, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  return batched ? Shape{n, c, h, w} : Shape{c, h, w};
}

void check_stride(std::size_t stride, const char* op) {
  if (stride != 1 && stride != 2) {
    fail(ErrorKind::InvalidArgument, std::string(op) + ": stride must be 1 or 2");
  }
}

void check_kernel(const Tensor& k, const char* op) {
  if (k.rank() != 4 || k.dim(2) != kernels::kKernelSize || k.dim(3) != kernels::kKernelSize) {
    fail(ErrorKind::ShapeMismatch,
         std::string(op) + ": kernels must be [*,*,3,3], got " + shape_to_string(k.dims()));
  }
}

Var conv2d_impl(const Var& x, const Var& kernels, const Var* bias, std::size_t stride) {
  check_stride(stride, "conv2d");
  const Tensor& xv = x.value();
  const Tensor& kv = kernels.value();
  check_kernel(kv, "conv2d");
  const auto ib = image_batch(xv, "conv2d");
  if (kv.dim(1) != ib.channels) {
    fail(ErrorKind::ShapeMismatch, "conv2d: input has " + std::to_string(ib.channels) +
                                       " channels, kernels expect " + std::to_string(kv.dim(1)));
  }
  kernels::ConvGeometry g{ib.batch, ib.channels, ib.h, ib.w, kv.dim(0), stride};
  std::span<const double> bias_span;
  if (bias != nullptr) {
    if (bias->value().size() != g.out_channels) {
      fail(ErrorKind::ShapeMismatch, "conv2d: bias length does not match output channels");
    }
    bias_span = bias->value().data();
  }
  Tensor out(image_shape(xv.rank() == 4, g.batch, g.out_channels, g.out_h(), g.out_w()));
  kernels::conv2d_forward(g, xv.data(), kv.data(), bias_span, out.data());

  std::vector<Var> inputs{x, kernels};
  if (bias != nullptr) inputs.push_back(*bias);
  return x.tape().record(std::move(out), std::move(inputs), [g](BackwardContext& ctx) {
    if (ctx.input_grads[0] != nullptr) {
      kernels::conv2d_backward_input(g, ctx.grad_output.data(), ctx.inputs[1]->data(),
                                     ctx.input_grads[0]->data());
    }
    const bool want_w = ctx.input_grads[1] != nullptr;
    const bool want_b = ctx.input_grads.size() > 2 && ctx.input_grads[2] != nullptr;
    if (want_w && (want_b || ctx.input_grads.size() == 2)) {
      kernels::conv2d_backward_weight(g, ctx.inputs[0]->data(), ctx.grad_output.data(),
                                      ctx.input_grads[1]->data(),
                                      want_b ? ctx.input_grads[2]->data() : std::span<double>{});
    } else if (want_w || want_b) {
      std::vector<double> gw(g.weight_size());
      std::vector<double> gb(want_b ? g.out_channels : 0);
      kernels::conv2d_backward_weight(g, ctx.inputs[0]->data(), ctx.grad_output.data(), gw, gb);
      if (want_w) add_into(*ctx.input_grads[1], gw);
      if (want_b) add_into(*ctx.input_grads[2], gb);
    }
  });
}

Var conv2d_transpose_impl(const Var& x, const Var& kernels, std::size_t stride) {
  check_stride(stride, "conv2d_transpose");
  const Tensor& xv = x.value();
  const Tensor& kv = kernels.value();
  check_kernel(kv, "conv2d_transpose");
  const auto ib = image_batch(xv, "conv2d_transpose");
  if (kv.dim(0) != ib.channels) {
    fail(ErrorKind::ShapeMismatch, "conv2d_transpose: input has " + std::to_string(ib.channels) +
                                       " channels, kernels expect " + std::to_string(kv.dim(0)));
  }
  // The forward conv that this op is the adjoint of maps the (larger) output
  // image back onto the input grid.
  kernels::ConvGeometry g{ib.batch, kv.dim(1), ib.h * stride, ib.w * stride, ib.channels, stride};
  Tensor out(image_shape(xv.rank() == 4, g.batch, g.in_channels, g.in_h, g.in_w));
  kernels::conv2d_backward_input(g, xv.data(), kv.data(), out.data());

  return x.tape().record(std::move(out), {x, kernels}, [g](BackwardContext& ctx) {
    if (ctx.input_grads[0] != nullptr) {
      std::vector<double> gi(g.output_size());
      kernels::conv2d_forward(g, ctx.grad_output.data(), ctx.inputs[1]->data(), {}, gi);
      add_into(*ctx.input_grads[0], gi);
    }
    if (ctx.input_grads[1] != nullptr) {
      kernels::conv2d_backward_weight(g, ctx.grad_output.data(), ctx.inputs[0]->data(),
                                      ctx.input_grads[1]->data(), {});
    }
  });
}

Var channel_bias(const Var& x, const Var& bias) {
  const Tensor& xv = x.value();
  const auto ib = image_batch(xv, "channel_bias");
  if (bias.value().size() != ib.channels) {
    fail(ErrorKind::ShapeMismatch, "channel bias length does not match channels");
  }
  Tensor out = xv;
  const std::size_t plane = ib.h * ib.w;
  auto o = out.data();
  const auto b = bias.value().data();
  for (std::size_t n = 0; n < ib.batch; ++n) {
    for (std::size_t c = 0; c < ib.channels; ++c) {
      double* p = o.data() + (n * ib.channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += b[c];
    }
  }
  return x.tape().record(std::move(out), {x, bias}, [ib, plane](BackwardContext& ctx) {
    if (ctx.input_grads[0] != nullptr) add_into(*ctx.input_grads[0], ctx.grad_output.data());
    if (ctx.input_grads[1] != nullptr) {
      auto gb = ctx.input_grads[1]->data();
      const auto go = ctx.grad_output.data();
      for (std::size_t n = 0; n < ib.batch; ++n) {
        for (std::size_t c = 0; c < ib.channels; ++c) {
          const double* p = go.data() + (n * ib.channels + c) * plane;
          double s = 0.0;
          for (std::size_t i = 0; i < plane; ++i) s += p[i];
          gb[c] += s;
        }
      }
    }
  });
}

}  // namespace

Var conv2d(const Var& x, const Var& kernels, const Var& bias, std::size_t stride) {
  return conv2d_impl(x, kernels, &bias, stride);
}

Var conv2d(const Var& x, const Var& kernels, std::size_t stride) {
  return conv2d_impl(x, kernels, nullptr, stride);
}

Var conv2d_transpose(const Var& x, const Var& kernels, std::size_t stride) {
  return conv2d_transpose_impl(x, kernels, stride);
}

Var conv2d_transpose(const Var& x, const Var& kernels, const Var& bias, std::size_t stride) {
  return channel_bias(conv2d_transpose_impl(x, kernels, stride), bias);
}

Var dense(const Var& x, const Var& weights, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weights.value();
  if (wv.rank() != 2) fail(ErrorKind::ShapeMismatch, "dense: weights must be [out,in]");
  const bool batched = xv.rank() == 2;
  if (xv.rank() != 1 && !batched) {
    fail(ErrorKind::ShapeMismatch, "dense: input must be [in] or [batch,in]");
  }
  kernels::DenseGeometry g{batched ? xv.dim(0) : 1, wv.dim(1), wv.dim(0)};
  if (xv.dim(xv.rank() - 1) != g.in_features) {
    fail(ErrorKind::ShapeMismatch, "dense: input length " + std::to_string(xv.dim(xv.rank() - 1)) +
                                       " does not match weights " + shape_to_string(wv.dims()));
  }
  if (bias.value().size() != g.out_features) {
    fail(ErrorKind::ShapeMismatch, "dense: bias length does not match output features");
  }
  Tensor out(batched ? Shape{g.batch, g.out_features} : Shape{g.out_features});
  kernels::dense_forward(g, xv.data(), wv.data(), bias.value().data(), out.data());
  return x.tape().record(std::move(out), {x, weights, bias}, [g](BackwardContext& ctx) {
    if (ctx.input_grads[0] != nullptr) {
      kernels::dense_backward_input(g, ctx.grad_output.data(), ctx.inputs[1]->data(),
                                    ctx.input_grads[0]->data());
    }
    if (ctx.input_grads[1] != nullptr && ctx.input_grads[2] != nullptr) {
      kernels::dense_backward_weight(g, ctx.inputs[0]->data(), ctx.grad_output.data(),
                                     ctx.input_grads[1]->data(), ctx.input_grads[2]->data());
    } else if (ctx.input_grads[1] != nullptr || ctx.input_grads[2] != nullptr) {
      std::vector<double> gw(g.out_features * g.in_features);
      std::vector<double> gb(g.out_features);
      kernels::dense_backward_weight(g, ctx.inputs[0]->data(), ctx.grad_output.data(), gw, gb);
      if (ctx.input_grads[1] != nullptr) add_into(*ctx.input_grads[1], gw);
      if (ctx.input_grads[2] != nullptr) add_into(*ctx.input_grads[2], gb);
    }
  });
}

Var leaky_relu(const Var& x, double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) fail(ErrorKind::InvalidArgument, "leaky_relu: alpha must be in [0,1)");
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : alpha * v;
  return x.tape().record(std::move(out), {x}, [alpha](BackwardContext& ctx) {
    auto gi = ctx.input_grads[0]->data();
    const auto in = ctx.inputs[0]->data();
    const auto go = ctx.grad_output.data();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += in[i] > 0.0 ? go[i] : alpha * go[i];
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) {
    if (v >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    auto gi = ctx.input_grads[0]->data();
    const auto y = ctx.output.data();
    const auto go = ctx.grad_output.data();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i] * y[i] * (1.0 - y[i]);
  });
}

Var dropout(const Var& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) fail(ErrorKind::InvalidArgument, "dropout: rate must be in [0,1)");
  if (mode == Mode::Eval || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::bernoulli_distribution keep(1.0 - rate);
  Tensor mask(x.dims());
  for (auto& m : mask.data()) m = keep(rng) ? keep_scale : 0.0;
  Tensor out = x.value();
  auto o = out.data();
  const auto mk = mask.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= mk[i];
  return x.tape().record(std::move(out), {x}, [mask = std::move(mask)](BackwardContext& ctx) {
    auto gi = ctx.input_grads[0]->data();
    const auto go = ctx.grad_output.data();
    const auto mk = mask.data();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i] * mk[i];
  });
}

Var reshape(const Var& x, Shape dims) {
  Tensor out = x.value().reshaped(std::move(dims));
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    add_into(*ctx.input_grads[0], ctx.grad_output.data());
  });
}

Var add(const Var& a, const Var& b) {
  if (a.dims() != b.dims()) {
    fail(ErrorKind::ShapeMismatch,
         "add: " + shape_to_string(a.dims()) + " vs " + shape_to_string(b.dims()));
  }
  Tensor out = a.value();
  add_into(out, b.value().data());
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    for (auto* gi : ctx.input_grads) {
      if (gi != nullptr) add_into(*gi, ctx.grad_output.data());
    }
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = x.value();
  for (auto& v : out.data()) v *= factor;
  return x.tape().record(std::move(out), {x}, [factor](BackwardContext& ctx) {
    auto gi = ctx.input_grads[0]->data();
    const auto go = ctx.grad_output.data();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += factor * go[i];
  });
}

Var mean(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const double n = static_cast<double>(x.value().size());
  return x.tape().record(Tensor::scalar(s / n), {x}, [n](BackwardContext& ctx) {
    const double g = ctx.grad_output[0] / n;
    for (auto& v : ctx.input_grads[0]->data()) v += g;
  });
}

Var bce_loss(const Var& prediction, const Tensor& target) {
  const Tensor& p = prediction.value();
  if (p.size() != target.size()) {
    fail(ErrorKind::ShapeMismatch, "bce_loss: prediction " + shape_to_string(p.dims()) +
                                       " vs target " + shape_to_string(target.dims()));
  }
  const double lo = kBceEpsilon, hi = 1.0 - kBceEpsilon;
  const auto pv = p.data();
  const auto tv = target.data();
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double q = std::clamp(pv[i], lo, hi);
    s -= tv[i] * std::log(q) + (1.0 - tv[i]) * std::log(1.0 - q);
  }
  const double n = static_cast<double>(pv.size());
  return prediction.tape().record(
      Tensor::scalar(s / n), {prediction}, [target, n, lo, hi](BackwardContext& ctx) {
        auto gi = ctx.input_grads[0]->data();
        const auto pv = ctx.inputs[0]->data();
        const auto tv = target.data();
        const double go = ctx.grad_output[0] / n;
        for (std::size_t i = 0; i < gi.size(); ++i) {
          const double q = pv[i];
          if (q < lo || q > hi) continue;
          gi[i] += go * (-tv[i] / q + (1.0 - tv[i]) / (1.0 - q));
        }
      });
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Adam

AdamState::AdamState(std::span<Parameter* const> params, AdamConfig cfg) : config(cfg) {
  for (const auto* p : params) {
    m.emplace_back(p->value.dims());
    v.emplace_back(p->value.dims());
  }
}

void adam_step(std::span<Parameter* const> params, AdamState& state) {
  if (params.size() != state.m.size()) {
    fail(ErrorKind::ShapeMismatch, "adam_step: optimizer state does not match parameter set");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value.dims() != state.m[i].dims()) {
      fail(ErrorKind::ShapeMismatch, "adam_step: state shape mismatch for " + params[i]->name);
    }
  }
  state.step += 1;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i]->value.data();
    const auto g = params[i]->grad.data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bias1;
      const double v_hat = v[k] / bias2;
      theta[k] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace sclld
