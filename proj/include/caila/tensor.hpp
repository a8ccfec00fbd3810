#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "caila/error.hpp"

namespace caila {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Dense single-precision tensor with an optional same-shape gradient buffer.
/// Value-semantics handle: copies share storage. A tensor written by an op is
/// treated as immutable afterwards; only leaves (parameters, probe inputs) are
/// mutated in place, and only outside of taped forward passes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return check().shape; }
  int rank() const { return int(check().shape.size()); }
  std::size_t size() const { return check().data.size(); }
  bool is_scalar() const { return defined() && size() == 1; }

  /// Row/column counts for rank-1/rank-2 tensors ([d] reads as 1 x d).
  int rows() const;
  int cols() const;

  std::span<float> data() { return check().data; }
  std::span<const float> data() const { return check().data; }

  bool requires_grad() const { return defined() && impl_->requires_grad; }
  /// Toggles gradient tracking; allocates or drops the grad buffer.
  void set_requires_grad(bool on);
  std::span<float> grad();
  std::span<const float> grad() const;
  void zero_grad();

  float item() const;
  float at(int i) const;
  float at(int r, int c) const;

  /// Deep copy of values only (no grad, no history).
  Tensor clone() const;
  /// True when both handles reference the same storage.
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // non-empty iff requires_grad
    bool requires_grad = false;
  };
  Impl& check() const {
    if (!impl_) throw ValueError("use of undefined tensor");
    return *impl_;
  }
  std::shared_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

/// Records the forward pass of one training step. Ops append nodes in
/// execution order (inputs always precede their consumers); backward() seeds
/// the loss gradient and replays the nodes once, in reverse.
///
/// At most one tape is active per thread. With no active tape, ops run
/// forward-only (evaluation mode).
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();
  static bool recording() { return active() != nullptr; }

  /// Appends one node. `fn` reads the output grad and accumulates into the
  /// input grads; captured tensors keep the forward values alive.
  void record(const char* op, std::function<void()> fn);

  std::size_t node_count() const { return nodes_.size(); }
  std::vector<std::string> op_names() const;

  /// Populates grads of every requires_grad tensor reachable from `loss`.
  /// `loss` must be scalar.
  void backward(const Tensor& loss);

 private:
  struct Node {
    const char* op;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
  bool replayed_ = false;
};

// ---------------------------------------------------------------------------
// Ops (forward + recorded backward)
// ---------------------------------------------------------------------------
// Storage is single precision; op kernels compute in double internally and
// round once on store, so finite-difference checks see minimal noise.
// Every op validates that its output is finite.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);
/// Adds a length-d vector to every row of an [r x d] tensor.
Tensor add_rowvec(const Tensor& x, const Tensor& v);

/// Row-wise softmax of x / temperature, max-shifted. temperature > 0.
Tensor softmax(const Tensor& x, float temperature);
/// Row-wise layer normalization over the last dimension with affine params.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);
/// x * Phi(x) with the exact Gaussian CDF (erf).
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
/// Scales a rank-1 tensor to unit Euclidean norm. Zero input is an error.
Tensor l2_normalize(const Tensor& x);
/// Elementwise arithmetic mean of K same-shape tensors, K >= 1.
Tensor average(std::span<const Tensor> xs);
Tensor average(std::initializer_list<Tensor> xs);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);

/// Row `row` of a rank-2 tensor as a rank-1 tensor.
Tensor take_row(const Tensor& x, int row);
Tensor slice_cols(const Tensor& x, int start, int len);
Tensor concat_cols(std::span<const Tensor> xs);
/// Stacks rank-1 tensors of equal length into an [n x d] tensor.
Tensor stack_rows(std::span<const Tensor> xs);
/// Vertically concatenates rank-2 tensors with equal column counts.
Tensor concat_rows(std::span<const Tensor> xs);
/// Gathers rows of `table` by index; backward scatter-adds into the table.
Tensor embed_rows(const Tensor& table, std::span<const int> ids);

/// Mean cross-entropy of row-wise softmax(logits / temperature) against the
/// target column per row. Log-sum-exp is evaluated in shifted form, so the
/// result stays finite for any temperature > 0.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets, float temperature);

bool all_finite(const Tensor& t);

// ---------------------------------------------------------------------------
// Verification harness
// ---------------------------------------------------------------------------

/// Central-difference check of d f / d x. `f` must map x to a scalar tensor
/// and may capture other (fixed) tensors. Returns
///   max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
/// eps must lie in (0, 0.1].
double grad_check(const std::function<Tensor(Tensor&)>& f, Tensor x, double eps = 1e-3);

}  // namespace caila
