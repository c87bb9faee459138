#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pgnmt/rng.hpp"

namespace pgnmt {

using Index = std::int64_t;
using Shape = std::vector<Index>;

std::string shape_str(const Shape& s);
Index shape_numel(const Shape& s);

// Flat row-major 64-bit storage plus an optional gradient of the same length.
// The gradient vector stays empty until something accumulates into it; an
// empty grad means "zero so far".
struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;

  Index numel() const { return static_cast<Index>(values.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
};

// Shared handle to a TensorNode. Copies alias the same storage, which is what
// lets the tape hold onto intermediates without deep copies.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  Index dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  Index numel() const { return node_->numel(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  std::span<const double> values() const { return node_->values; }
  // Direct mutation is for leaves the caller owns (initialization, optimizer
  // updates); mutating an op output after recording invalidates the tape.
  std::span<double> values_mut() { return node_->values; }
  double item() const;

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode> node_;
};

// Ordered record of executed differentiable ops. Constructing a Tape makes it
// the active tape for the current thread (previous one is restored on
// destruction), so a scope with no live Tape runs ops in pure inference mode.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::shared_ptr<TensorNode> out, std::function<void()> backward);

  // Reverse pass from a scalar loss. Gradients of leaves accumulate across
  // repeated calls; intermediate (op output) gradients are reset each call.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::shared_ptr<TensorNode> out;
    std::function<void()> fn;
  };
  std::vector<Entry> entries_;
  Tape* prev_ = nullptr;
};

// ---- elementwise and structural ops ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);
Tensor concat_lastdim(std::span<const Tensor> parts);
Tensor slice_lastdim(const Tensor& a, Index offset, Index length);
Tensor masked_fill(const Tensor& a, std::span<const std::uint8_t> mask, double value);
Tensor dropout(const Tensor& a, double rate, Rng& rng, bool training);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor softmax(const Tensor& a, int axis = -1);

// ---- linear algebra (2-D, Eigen-backed) ----
Tensor matmul(const Tensor& a, const Tensor& b);
// M [r,c] + row vector b [c], broadcast over rows.
Tensor add_rowvec(const Tensor& m, const Tensor& b);
// Row t of M scaled by v[t].
Tensor scale_rows(const Tensor& m, const Tensor& v);

// ---- indexed ops ----
// out[i,:] = table[ids[i],:]
Tensor gather_rows(const Tensor& table, std::span<const Index> ids);
// out[ids[i]] += weights[i]; out has length `size`.
Tensor scatter_add(std::span<const Index> ids, const Tensor& weights, Index size);
// out[t, ids[s]] += m[t,s]; positions with mask[s]==0 are skipped entirely.
Tensor scatter_add_rows(const Tensor& m, std::span<const Index> ids, Index size,
                        std::span<const std::uint8_t> keep = {});
// out[t] = m[t, ids[t]]
Tensor pick_per_row(const Tensor& m, std::span<const Index> ids);

// Normalizes the last axis: (x - mu) / sqrt(var + eps) * gain + bias.
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// ---- initialization ----
Tensor xavier_uniform(Index rows, Index cols, Rng& rng);

// ---- optimizer ----
struct AdamState {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
};

// One update over `params` in order, reading each tensor's accumulated grad
// (empty grad counts as zero). Moment vectors are laid out as the
// concatenation of the flattened params and are sized on first use.
void adam_step(std::span<Tensor> params, AdamState& state);
void zero_grad(std::span<Tensor> params);

}  // namespace pgnmt
