#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "cvos/errors.hpp"

namespace cvos {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Rng;

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool tracked = false;
  void ensure_grad();
};

// Dense row-major 64-bit float array. Value-semantics handle onto a shared
// buffer; operations produce fresh tensors and register their adjoints on the
// active Tape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);
  static Tensor normal(Shape shape, Rng& rng, double mean, double stddev, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t rank() const;
  int64_t size() const;
  int64_t extent(int axis) const;

  double* data();
  const double* data() const;
  double item() const;  // scalar tensors only
  double at(std::initializer_list<int64_t> idx) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);
  bool tracked() const;

  Tensor grad() const;  // zeros if no gradient reached this tensor
  void zero_grad();
  Tensor detach() const;  // value copy outside the graph

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<TensorImpl> impl);

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Ordered record of executed operations; backward() replays their adjoints in
// exact reverse execution order. One tape per training step.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> adjoint);
  void backward(const Tensor& loss);
  size_t size() const { return entries_.size(); }

  static Tape* active();

 private:
  friend struct TapeScope;
  std::vector<std::function<void()>> entries_;
};

// Routes op records to a tape for the current scope.
struct TapeScope {
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace cvos
