#include "cvos/tensor.hpp"

#include <sstream>
#include <utility>

#include "cvos/rng.hpp"

namespace cvos {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void TensorImpl::ensure_grad() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

static void check_extents(const Shape& shape) {
  for (int64_t e : shape) {
    if (e <= 0) throw ParameterError("tensor extents must be positive, got " + shape_str(shape));
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_extents(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->values.assign(static_cast<size_t>(shape_numel(shape)), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  impl->tracked = requires_grad;
  return wrap(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  check_extents(shape);
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw DimensionError("data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  impl->tracked = requires_grad;
  return wrap(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  check_extents(shape);
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return from_data(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::normal(Shape shape, Rng& rng, double mean, double stddev, bool requires_grad) {
  check_extents(shape);
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.normal(mean, stddev);
  return from_data(std::move(shape), std::move(v), requires_grad);
}

static const TensorImpl& deref(const std::shared_ptr<TensorImpl>& impl) {
  if (!impl) throw ContractError("operation on an undefined tensor");
  return *impl;
}

const Shape& Tensor::shape() const { return deref(impl_).shape; }

int64_t Tensor::rank() const { return static_cast<int64_t>(shape().size()); }

int64_t Tensor::size() const { return static_cast<int64_t>(deref(impl_).values.size()); }

int64_t Tensor::extent(int axis) const {
  const Shape& s = shape();
  int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ParameterError("axis out of range for " + shape_str(s));
  return s[axis];
}

double* Tensor::data() { return const_cast<TensorImpl&>(deref(impl_)).values.data(); }

const double* Tensor::data() const { return deref(impl_).values.data(); }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() requires a scalar tensor, got " + shape_str(shape()));
  return data()[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size()) throw ParameterError("index rank mismatch for " + shape_str(s));
  int64_t off = 0;
  size_t d = 0;
  for (int64_t i : idx) {
    if (i < 0 || i >= s[d]) throw ParameterError("index out of bounds for " + shape_str(s));
    off = off * s[d] + i;
    ++d;
  }
  return data()[off];
}

bool Tensor::requires_grad() const { return deref(impl_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  auto& impl = const_cast<TensorImpl&>(deref(impl_));
  impl.requires_grad = v;
  if (v) impl.tracked = true;
  return *this;
}

bool Tensor::tracked() const { return deref(impl_).tracked; }

Tensor Tensor::grad() const {
  const TensorImpl& impl = deref(impl_);
  if (impl.grad.size() == impl.values.size()) return from_data(impl.shape, impl.grad);
  return zeros(impl.shape);
}

void Tensor::zero_grad() {
  auto& impl = const_cast<TensorImpl&>(deref(impl_));
  impl.grad.clear();
}

Tensor Tensor::detach() const {
  const TensorImpl& impl = deref(impl_);
  return from_data(impl.shape, impl.values);
}

Tensor Tensor::wrap(std::shared_ptr<TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> adjoint) { entries_.push_back(std::move(adjoint)); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() requires a scalar loss tensor");
  }
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

}  // namespace cvos
