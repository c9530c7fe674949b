#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "byov/errors.hpp"

namespace byov {

using Shape = std::vector<size_t>;

std::string shape_str(const Shape& s);
size_t shape_size(const Shape& s);

// Dense row-major f64 tensor. 64-bit everywhere: the models are desk-scale
// and double precision keeps the finite-difference gradient checks tight.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}
  Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  /// Validating constructor: size must match the shape and values be finite.
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const { return shape_; }
  size_t size() const { return data_.size(); }
  size_t rank() const { return shape_.size(); }
  bool empty() const { return data_.empty(); }
  bool is_scalar() const { return data_.size() == 1; }
  double item() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  std::string shape_string() const { return shape_str(shape_); }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// ---- value-level primitives (shared by the tape ops and gradient-free paths)

Tensor matmul(const Tensor& a, const Tensor& b);  // [..., k] x [k, n] -> [..., n]
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double c);
Tensor mul(const Tensor& a, double c);
Tensor add_rowvec(const Tensor& x, const Tensor& v);  // [..., n] + [n]
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);  // rejects non-positive input
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sum(const Tensor& x);   // -> [1]
Tensor mean(const Tensor& x);  // -> [1]
Tensor sum_lastaxis(const Tensor& x);
Tensor l2norm_lastaxis(const Tensor& x);
Tensor l2_normalize_lastaxis(const Tensor& x, double eps = 1e-12);
Tensor softmax(const Tensor& x);      // along last axis
Tensor log_softmax(const Tensor& x);  // along last axis
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps = 1e-5);
Tensor reshape(const Tensor& x, Shape new_shape);
// Non-overlapping patch extraction: [N,C,H,W] -> [N, (H/ph)*(W/pw), C*ph*pw].
Tensor patches(const Tensor& x, size_t ph, size_t pw);

// helpers used by gradients and the eval code
Tensor transpose2d(const Tensor& a);
Tensor colsum(const Tensor& x);  // [..., n] -> [n]

}  // namespace byov
