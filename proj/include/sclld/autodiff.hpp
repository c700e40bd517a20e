#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Tape records every executed op in order. Var is a cheap handle to one
// recorded value. Parameters live outside the tape so they survive across
// training steps; Tape::parameter() binds one as a leaf, and backward()
// adds the leaf gradient into Parameter::grad (accumulating until
// zero_grad()).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sclld/tensor.hpp"

namespace sclld {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string name_, Tensor value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.dims()) {}

  void zero_grad() { grad.fill(0.0); }
};

void zero_grads(std::span<Parameter* const> params);
std::size_t parameter_count(std::span<Parameter* const> params);

enum class Mode { Train, Eval };

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  // Gradient of the last backward() target w.r.t. this value. Zero-filled
  // if the value took no part in it.
  const Tensor& grad() const;
  const Shape& dims() const { return value().dims(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

// Passed to each op's backward rule. `input_grads[i]` is null when input i
// does not require a gradient; otherwise rules add into it.
struct BackwardContext {
  const Tensor& output;
  const Tensor& grad_output;
  std::vector<const Tensor*> inputs;
  std::vector<Tensor*> input_grads;
};

using BackwardRule = std::function<void(BackwardContext&)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  // Binds param.value by reference and accumulates straight into
  // param.grad, so the parameter must outlive the tape and stay unchanged
  // until backward() has run.
  Var parameter(Parameter& param);
  // Constant bound by reference, same lifetime rule as parameter().
  Var constant_ref(const Tensor& value);

  Var record(Tensor value, std::vector<Var> inputs, BackwardRule rule);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  friend class Var;

  struct Node {
    Tensor own_value;
    Tensor own_grad;
    const Tensor* bound_value = nullptr;
    Tensor* bound_grad = nullptr;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardRule rule;

    const Tensor& value() const { return bound_value ? *bound_value : own_value; }
    Tensor& grad() { return bound_grad ? *bound_grad : own_grad; }
  };

  Var push(std::unique_ptr<Node> node);

  std::vector<std::unique_ptr<Node>> nodes_;
};

namespace ad {

// x: [C,H,W] or [N,C,H,W]; kernels: [C_out,C_in,3,3]; bias: [C_out].
Var conv2d(const Var& x, const Var& kernels, const Var& bias, std::size_t stride);
Var conv2d(const Var& x, const Var& kernels, std::size_t stride);

// Exact adjoint of conv2d at the same geometry. kernels: [C_in,C_out,3,3]
// (input channels first); output extent is input extent times stride.
Var conv2d_transpose(const Var& x, const Var& kernels, std::size_t stride);
Var conv2d_transpose(const Var& x, const Var& kernels, const Var& bias, std::size_t stride);

// x: [N_in] or [B,N_in]; weights: [N_out,N_in]; bias: [N_out].
Var dense(const Var& x, const Var& weights, const Var& bias);

Var leaky_relu(const Var& x, double alpha);
Var sigmoid(const Var& x);
Var dropout(const Var& x, double rate, Mode mode, Rng& rng);
Var reshape(const Var& x, Shape dims);
Var add(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var mean(const Var& x);

inline constexpr double kBceEpsilon = 1e-7;

// Mean binary cross-entropy; predictions clamped to [eps, 1-eps].
Var bce_loss(const Var& prediction, const Tensor& target);

}  // namespace ad

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  AdamState() = default;
  AdamState(std::span<Parameter* const> params, AdamConfig cfg);
};

// One bias-corrected Adam update from the current Parameter::grad values.
void adam_step(std::span<Parameter* const> params, AdamState& state);

}  // namespace sclld
