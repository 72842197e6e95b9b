#pragma once

// Reverse-mode differentiation over NCHW tensors.
//
// A Tape records every operation of one forward pass: its primal value, the
// ids of its inputs and a closure that pushes the node's adjoint into the
// adjoints of its inputs. backward() seeds d(loss)/d(loss) = 1 and runs the
// closures in reverse recording order.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace scanweave::autodiff {

struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

using VarId = std::size_t;

class Tape {
 public:
  using Backward = std::function<void(Tape&, VarId self)>;

  /// Leaf that never receives an adjoint.
  VarId constant(Tensor value);
  /// Leaf whose adjoint is accumulated by backward().
  VarId variable(Tensor value);
  /// Interior node; it requires a gradient when any input does.
  VarId record(Tensor value, std::span<const VarId> inputs, Backward backward);

  const Tensor& value(VarId id) const { return nodes_[id].value; }
  bool requires_grad(VarId id) const { return nodes_[id].requires_grad; }

  /// Adjoint of a node after backward(); a zero tensor when none reached it.
  const Tensor& grad(VarId id);
  /// Mutable adjoint slot, allocated on first use.
  Tensor& grad_slot(VarId id);

  /// Runs reverse accumulation from a single-element node.
  void backward(VarId loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

/// Zero-padded 2-D convolution (cross-correlation). weight is
/// {out_channels, in_channels, k, k} with odd k, bias is {1, out_channels, 1, 1}.
VarId conv2d(Tape& tape, VarId input, VarId weight, VarId bias);

VarId add(Tape& tape, VarId a, VarId b);

/// Per-channel parametric ReLU; slope is {1, C, 1, 1}.
VarId prelu(Tape& tape, VarId input, VarId slope);

VarId sigmoid(Tape& tape, VarId input);

/// z * d with d of shape {N, 1, H, W} broadcast over the channels of z.
VarId multiply_broadcast(Tape& tape, VarId z, VarId d);

/// Mean of squared differences, a single-element tensor.
VarId mse(Tape& tape, VarId a, VarId b);

/// Running statistics of one batch-normalization layer.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel batch normalization over (N, H, W). In training mode batch
/// statistics are used and the running statistics updated; otherwise the
/// frozen running statistics are applied.
VarId batch_norm(Tape& tape, VarId input, VarId gamma, VarId beta, BatchNormState& state, bool training);

}  // namespace scanweave::autodiff
