#include "dbswin/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dbswin {

namespace {
thread_local Tape* t_active_tape = nullptr;
std::string g_fault_op;  // NOLINT: test-only switch
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::span<double> TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not hold " +
                     std::to_string(data.size()) + " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  Tensor t = from_data(std::move(shape), std::move(data));
  t.impl_->requires_grad = true;
  return t;
}

std::size_t Tensor::dim(int index) const {
  const int r = static_cast<int>(rank());
  const int i = index < 0 ? r + index : index;
  if (i < 0 || i >= r) {
    throw ShapeError("dim " + std::to_string(index) + " out of range for " + shape_str(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(i)];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
  return impl_->data[0];
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from_data(shape(), impl_->data); }

void Tape::record(const char* op, std::vector<std::shared_ptr<TensorImpl>> inputs,
                  std::shared_ptr<TensorImpl> output, BackwardFn backward) {
  output->node_id = static_cast<std::int64_t>(records_.size());
  records_.push_back({op, std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss");
  }
  const auto& out = loss.impl();
  if (!out->requires_grad || out->node_id < 0 ||
      static_cast<std::size_t>(out->node_id) >= records_.size() ||
      records_[static_cast<std::size_t>(out->node_id)].output != out) {
    throw ContractError("backward() loss was not produced on this tape");
  }
  out->ensure_grad()[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    if (!g_fault_op.empty() && g_fault_op == it->op) {
      for (double& g : it->output->grad) g *= 1.01;
    }
    it->backward();
  }
  clear();
}

void Tape::clear() {
  for (auto& r : records_) r.output->node_id = -1;
  records_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = previous_; }

Tape* active_tape() { return t_active_tape; }

void backward(const Tensor& loss) {
  if (t_active_tape == nullptr) throw ContractError("backward() without an active tape");
  t_active_tape->backward(loss);
}

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs) {
  Tensor out = Tensor::from_data(std::move(shape), std::move(data));
  if (t_active_tape != nullptr) {
    out.impl_->requires_grad =
        std::any_of(inputs.begin(), inputs.end(),
                    [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  }
  return out;
}

void record_op(const char* op, std::initializer_list<Tensor> inputs, const Tensor& output,
               Tape::BackwardFn fn) {
  if (t_active_tape == nullptr || !output.requires_grad()) return;
  std::vector<std::shared_ptr<TensorImpl>> in;
  in.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    if (t.defined()) in.push_back(t.impl());
  }
  t_active_tape->record(op, std::move(in), output.impl(), std::move(fn));
}

void set_fault_injection(std::string op_name) { g_fault_op = std::move(op_name); }
const std::string& fault_injection() { return g_fault_op; }

}  // namespace dbswin
