#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mmt/errors.hpp"
#include "mmt/rng.hpp"

namespace mmt {

class Rng;

using Shape = std::vector<std::int64_t>;
using Mask = std::vector<std::uint8_t>;

std::string shape_str(const Shape& s);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until the first accumulation
  bool requires_grad = false;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense row-major tensor of doubles. Value-semantic handle over shared
// storage so that tape closures and parameter registries alias the same
// buffers. Rank 1 tensors behave as a single row in matrix contexts.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t numel() const { return impl_->numel(); }
  std::int64_t rank() const { return static_cast<std::int64_t>(impl_->shape.size()); }
  std::int64_t rows() const;
  std::int64_t cols() const;

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& values() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }

  double& at(std::int64_t i) { return impl_->data[static_cast<std::size_t>(i)]; }
  double at(std::int64_t i) const { return impl_->data[static_cast<std::size_t>(i)]; }
  double& at(std::int64_t r, std::int64_t c) { return impl_->data[static_cast<std::size_t>(r * cols() + c)]; }
  double at(std::int64_t r, std::int64_t c) const { return impl_->data[static_cast<std::size_t>(r * cols() + c)]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool grad_allocated() const { return !impl_->grad.empty(); }
  std::vector<double>& grad() { return impl_->ensure_grad(); }
  const std::vector<double>& grad_view() const { return impl_->grad; }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  bool all_finite() const;

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Reverse-mode tape: ordered record of backward closures. Operations append
// themselves in execution order; backward() replays the record once, in
// reverse, then clears it.
class Tape {
 public:
  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients (by summation) into
  // every requires_grad tensor reachable from the loss. Clears the tape.
  void backward(const Tensor& loss);

  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

 private:
  std::vector<std::function<void()>> ops_;
};

// --- operations ---------------------------------------------------------
// All ops accept tape == nullptr for pure (gradient-free) evaluation.

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape* tape, const Tensor& a);

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor divide(Tape* tape, const Tensor& a, const Tensor& b);

// m (r x c) + v broadcast over rows (v is rank 1 of c, or 1 x c).
Tensor add_rowvec(Tape* tape, const Tensor& m, const Tensor& v);
Tensor scale(Tape* tape, const Tensor& a, double s);
Tensor add_const(Tape* tape, const Tensor& a, double c);

Tensor relu(Tape* tape, const Tensor& a);
Tensor sigmoid(Tape* tape, const Tensor& a);
Tensor tanh_op(Tape* tape, const Tensor& a);
Tensor sqrt_op(Tape* tape, const Tensor& a);

// Row-wise softmax over the last axis. Masked-false positions get exactly 0
// probability (their logits are -inf for the purpose of normalization).
// Numerically stabilized by max subtraction over unmasked entries.
Tensor softmax(Tape* tape, const Tensor& x, const Mask* mask = nullptr);

// Per-last-axis normalization to zero mean / unit variance followed by an
// affine transform. eps is added to the variance before the square root.
Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// Inverted dropout: at train time survivors are scaled by 1/(1-rate) so that
// inference is the identity.
Tensor dropout(Tape* tape, const Tensor& x, double rate, bool training, Rng* rng);

// Gather rows of table by id. pad_id rows contribute exactly zero and are
// excluded from gradient accumulation (the PAD embedding stays frozen).
Tensor embedding_lookup(Tape* tape, const Tensor& table, std::span<const std::int32_t> ids,
                        std::int32_t pad_id = 0);

Tensor concat_cols(Tape* tape, const std::vector<Tensor>& parts);
Tensor concat_rows(Tape* tape, const std::vector<Tensor>& parts);
Tensor slice_cols(Tape* tape, const Tensor& x, std::int64_t c0, std::int64_t c1);

Tensor sum_all(Tape* tape, const Tensor& x);
Tensor mean_all(Tape* tape, const Tensor& x);

// Per feature dimension softmax across k equal column slices of g
// (r x k*d): for each row and each dim j, the k entries {g[., i*d+j]} are
// normalized to sum to 1. Used by the fusional gates.
Tensor gate_softmax(Tape* tape, const Tensor& g, std::int64_t k);

// --- gradient checking ---------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::int64_t worst_index = -1;
  bool pass = true;
};

// Compares the tape gradient of f against central finite differences.
// f must be deterministic (dropout disabled). Relative error uses
// |a-b| / max(denom_floor, |a|, |b|).
GradCheckReport grad_check(const std::function<Tensor(Tape*, const Tensor&)>& f, Tensor x,
                           double h = 1e-4, double tol = 1e-4, double denom_floor = 1e-3);

// Multi-parameter variant: loss_fn evaluates the scalar loss from enclosing
// state; each listed tensor is perturbed in place for the finite-difference
// route. entry_stride > 1 checks a deterministic subsample of entries.
GradCheckReport grad_check_params(const std::function<Tensor(Tape*)>& loss_fn,
                                  const std::vector<Tensor>& params, double h = 1e-4,
                                  double tol = 1e-4, double denom_floor = 1e-3,
                                  int entry_stride = 1);

// --- test hooks -----------------------------------------------------------

namespace testhooks {

enum class BackwardFault {
  none,
  embedding_lookup,  // corrupts the embedding scatter
  sigmoid,           // corrupts the sigmoid derivative (recurrent cell path)
};

// Deliberately corrupts one backward rule so gradient-check mutation tests
// can verify that failures are detected and attributed. Never set outside
// tests.
void set_backward_fault(BackwardFault fault);
BackwardFault backward_fault();

}  // namespace testhooks

}  // namespace mmt
