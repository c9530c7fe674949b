#include "byov/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace byov {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

size_t shape_size(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) {
    if (d == 0) throw ShapeError("tensor: zero dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match data length " +
                     std::to_string(data_.size()));
  }
  if (!all_finite()) throw ValueError("tensor: non-finite value in constructor data");
}

double Tensor::item() const {
  if (!is_scalar()) throw ShapeError("item: tensor of shape " + shape_string() + " is not scalar");
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch between " + a.shape_string() + " and " +
                     b.shape_string());
  }
}

// last-axis view: rows x n
std::pair<size_t, size_t> rows_lastaxis(const char* op, const Tensor& x) {
  if (x.rank() < 1) throw ShapeError(std::string(op) + ": rank-0 input");
  const size_t n = x.shape().back();
  return {x.size() / n, n};
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || b.rank() != 2 || a.shape().back() != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + a.shape_string() + " and " + b.shape_string());
  }
  const size_t k = b.shape()[0], n = b.shape()[1];
  const size_t m = a.size() / k;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  Tensor out(std::move(out_shape));
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (size_t i = 0; i < m; ++i) {
    const double* ai = pa + i * k;
    double* oi = po + i * n;
    for (size_t kk = 0; kk < k; ++kk) {
      const double av = ai[kk];
      if (av == 0.0) continue;
      const double* bk = pb + kk * n;
      for (size_t j = 0; j < n; ++j) oi[j] += av * bk[j];
    }
  }
  return out;
}

Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose2d: expected rank 2, got " + a.shape_string());
  const size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out(Shape{n, m});
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tensor out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

Tensor add(const Tensor& a, double c) {
  Tensor out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] + c;
  return out;
}

Tensor mul(const Tensor& a, double c) {
  Tensor out(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (v.rank() != 1 || x.rank() < 1 || x.shape().back() != v.shape()[0]) {
    throw ShapeError("add_rowvec: incompatible shapes " + x.shape_string() + " and " + v.shape_string());
  }
  const auto [rows, n] = rows_lastaxis("add_rowvec", x);
  Tensor out(x.shape());
  for (size_t r = 0; r < rows; ++r)
    for (size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] + v[j];
  return out;
}

Tensor colsum(const Tensor& x) {
  const auto [rows, n] = rows_lastaxis("colsum", x);
  Tensor out(Shape{n});
  for (size_t r = 0; r < rows; ++r)
    for (size_t j = 0; j < n; ++j) out[j] += x[r * n + j];
  return out;
}

Tensor exp(const Tensor& x) {
  Tensor out(x.shape());
  for (size_t i = 0; i < x.size(); ++i) out[i] = std::exp(x[i]);
  return out;
}

Tensor log(const Tensor& x) {
  Tensor out(x.shape());
  for (size_t i = 0; i < x.size(); ++i) {
    if (x[i] <= 0.0) throw ValueError("log: non-positive input " + std::to_string(x[i]));
    out[i] = std::log(x[i]);
  }
  return out;
}

Tensor tanh(const Tensor& x) {
  Tensor out(x.shape());
  for (size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += x[i];
  return Tensor::scalar(s);
}

Tensor mean(const Tensor& x) {
  return Tensor::scalar(sum(x).item() / static_cast<double>(x.size()));
}

Tensor sum_lastaxis(const Tensor& x) {
  const auto [rows, n] = rows_lastaxis("sum_lastaxis", x);
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(std::move(out_shape));
  for (size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (size_t j = 0; j < n; ++j) s += x[r * n + j];
    out[r] = s;
  }
  return out;
}

Tensor l2norm_lastaxis(const Tensor& x) {
  const auto [rows, n] = rows_lastaxis("l2norm_lastaxis", x);
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(std::move(out_shape));
  for (size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (size_t j = 0; j < n; ++j) s += x[r * n + j] * x[r * n + j];
    out[r] = std::sqrt(s);
  }
  return out;
}

Tensor l2_normalize_lastaxis(const Tensor& x, double eps) {
  const auto [rows, n] = rows_lastaxis("l2_normalize_lastaxis", x);
  Tensor out(x.shape());
  for (size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (size_t j = 0; j < n; ++j) s += x[r * n + j] * x[r * n + j];
    const double inv = 1.0 / (std::sqrt(s) + eps);
    for (size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] * inv;
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  const auto [rows, n] = rows_lastaxis("softmax", x);
  Tensor out(x.shape());
  for (size_t r = 0; r < rows; ++r) {
    const double* xi = x.data() + r * n;
    double* oi = out.data() + r * n;
    double mx = xi[0];
    for (size_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (size_t j = 0; j < n; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      z += oi[j];
    }
    for (size_t j = 0; j < n; ++j) oi[j] /= z;
  }
  return out;
}

Tensor log_softmax(const Tensor& x) {
  const auto [rows, n] = rows_lastaxis("log_softmax", x);
  Tensor out(x.shape());
  for (size_t r = 0; r < rows; ++r) {
    const double* xi = x.data() + r * n;
    double* oi = out.data() + r * n;
    double mx = xi[0];
    for (size_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (size_t j = 0; j < n; ++j) z += std::exp(xi[j] - mx);
    const double lse = mx + std::log(z);
    for (size_t j = 0; j < n; ++j) oi[j] = xi[j] - lse;
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps) {
  const auto [rows, n] = rows_lastaxis("layer_norm", x);
  if (gain.rank() != 1 || gain.shape()[0] != n || !gain.same_shape(offset)) {
    throw ShapeError("layer_norm: incompatible shapes " + x.shape_string() + ", " +
                     gain.shape_string() + ", " + offset.shape_string());
  }
  Tensor out(x.shape());
  for (size_t r = 0; r < rows; ++r) {
    const double* xi = x.data() + r * n;
    double* oi = out.data() + r * n;
    double mu = 0.0;
    for (size_t j = 0; j < n; ++j) mu += xi[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (size_t j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (size_t j = 0; j < n; ++j) oi[j] = (xi[j] - mu) * inv * gain[j] + offset[j];
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_size(new_shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + x.shape_string() + " as " + shape_str(new_shape));
  }
  Tensor out(std::move(new_shape));
  std::copy(x.data(), x.data() + x.size(), out.data());
  return out;
}

Tensor patches(const Tensor& x, size_t ph, size_t pw) {
  if (x.rank() != 4) throw ShapeError("patches: expected [N,C,H,W], got " + x.shape_string());
  const size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0) {
    throw ShapeError("patches: patch " + std::to_string(ph) + "x" + std::to_string(pw) +
                     " does not tile image " + x.shape_string());
  }
  const size_t gh = h / ph, gw = w / pw;
  Tensor out(Shape{n, gh * gw, c * ph * pw});
  double* po = out.data();
  for (size_t i = 0; i < n; ++i) {
    for (size_t gy = 0; gy < gh; ++gy) {
      for (size_t gx = 0; gx < gw; ++gx) {
        for (size_t ch = 0; ch < c; ++ch) {
          for (size_t py = 0; py < ph; ++py) {
            const double* src = x.data() + ((i * c + ch) * h + gy * ph + py) * w + gx * pw;
            for (size_t px = 0; px < pw; ++px) *po++ = src[px];
          }
        }
      }
    }
  }
  return out;
}

}  // namespace byov
