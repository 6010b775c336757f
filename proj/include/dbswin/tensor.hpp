#pragma once

// Dense double-precision tensors with define-by-run reverse-mode autodiff.
//
// A Tensor is a shared handle to an immutable row-major buffer. Operations
// executed while a Tape is active (see TapeScope) and touching at least one
// tensor that requires grad are recorded on that tape; Tape::backward replays
// the records in reverse order and accumulates gradients into every tensor
// that requires grad.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dbswin {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Incompatible shapes or dimensions.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller broke an operation's precondition (not a shape problem).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
  std::int64_t node_id = -1;  // index of the producing record on the tape, -1 for leaves

  std::span<double> ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);
  // Leaf tensor that collects gradients.
  static Tensor parameter(Shape shape, std::vector<double> data);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  // Negative indices count from the back.
  std::size_t dim(int index) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Mutable access for initializers, optimizers and checkpoint loading only.
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double at(std::size_t flat_index) const { return impl_->data.at(flat_index); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() { return impl_->ensure_grad(); }
  void zero_grad();
  std::int64_t node_id() const { return impl_->node_id; }

  // Same values, no gradient tracking.
  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend class Tape;
  friend Tensor make_result(Shape shape, std::vector<double> data,
                            std::initializer_list<Tensor> inputs);

  std::shared_ptr<TensorImpl> impl_;
};

class Tape {
 public:
  using BackwardFn = std::function<void()>;

  struct Record {
    const char* op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const char* op, std::vector<std::shared_ptr<TensorImpl>> inputs,
              std::shared_ptr<TensorImpl> output, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1, runs every record in reverse order, then clears.
  void backward(const Tensor& loss);
  void clear();

  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }

 private:
  std::vector<Record> records_;
};

// Makes `tape` the thread's active tape for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Backward on the active tape.
void backward(const Tensor& loss);

// Builds an op output. The result requires grad iff a tape is active and any
// input requires grad; callers then attach the backward rule with `record_op`.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs);
void record_op(const char* op, std::initializer_list<Tensor> inputs, const Tensor& output,
               Tape::BackwardFn fn);

// Test hook for mutation testing of gradient checks: when the named op's
// backward rule runs, the incoming gradient is scaled by (1 + 1e-2). Empty
// disables.
void set_fault_injection(std::string op_name);
const std::string& fault_injection();

// ---------------------------------------------------------------------------
// Differentiable operations.

// [.., m, k] x [.., k, n] -> [.., m, n]; batch dims broadcast numpy-style.
Tensor matmul(const Tensor& a, const Tensor& b);
// x[.., in] * w[in, out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
inline Tensor broadcast_add(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor elementwise_mul(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor scale(const Tensor& x, double factor);

Tensor softmax_lastdim(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor concat_lastdim(const std::vector<Tensor>& parts);
// Elements [start, start + length) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

// Treats x as rows of its last dim: out row r = x row index[r], or zeros when
// index[r] < 0. out_shape must hold index.size() rows of that width.
Tensor gather_rows(const Tensor& x, std::shared_ptr<const std::vector<std::int64_t>> index,
                   Shape out_shape);
// Flat element gather into `out_shape`; negative indices produce zeros.
Tensor gather(const Tensor& x, Shape out_shape,
              std::shared_ptr<const std::vector<std::int64_t>> index);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over every leading dim: [.., c] -> [1, c].
Tensor mean_rows(const Tensor& x);

}  // namespace dbswin
