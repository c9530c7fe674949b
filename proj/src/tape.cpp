#include "byov/tape.hpp"

#include <cmath>

namespace byov {

namespace {

Tape* common_tape(const char* op, std::initializer_list<const Var*> vars) {
  Tape* t = nullptr;
  for (const Var* v : vars) {
    if (!v->valid()) throw ValueError(std::string(op) + ": unbound Var");
    if (t && v->tape() != t) throw ValueError(std::string(op) + ": Vars from different tapes");
    t = v->tape();
  }
  return t;
}

}  // namespace

const Tensor& Var::value() const {
  if (!tape_) throw ValueError("Var::value: unbound Var");
  return tape_->value(id_);
}

const Tensor& Var::grad() const {
  if (!tape_) throw ValueError("Var::grad: unbound Var");
  return tape_->grad(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->node_requires_grad(id_); }

Var Tape::param(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, {}, nullptr, "param", true});
  return Var(this, static_cast<uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, {}, nullptr, "constant", false});
  return Var(this, static_cast<uint32_t>(nodes_.size() - 1));
}

Var Tape::emit(const char* op, Tensor value, std::vector<uint32_t> parents, BackFn back) {
  bool rg = false;
  for (uint32_t p : parents) rg = rg || nodes_[p].requires_grad;
  nodes_.push_back(
      Node{std::move(value), Tensor{}, std::move(parents), rg ? std::move(back) : nullptr, op, rg});
  return Var(this, static_cast<uint32_t>(nodes_.size() - 1));
}

void Tape::accum(uint32_t id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  for (size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

const Tensor& Tape::grad(uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (nodes_.empty()) throw ValueError("backward: empty tape");
  if (loss.tape() != this) throw ValueError("backward: loss from a different tape");
  const Node& ln = nodes_[loss.id()];
  if (!ln.value.is_scalar()) {
    throw ShapeError("backward: loss must be scalar, got shape " + ln.value.shape_string());
  }
  // Interior grads carry one pass only; leaf grads accumulate across passes.
  for (Node& n : nodes_) {
    if (n.back) n.grad = Tensor{};
  }
  accum(loss.id(), Tensor::scalar(1.0));
  for (uint32_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.back || n.grad.empty()) continue;
    n.back(*this, id);
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad = Tensor{};
}

std::optional<std::pair<std::string, uint32_t>> Tape::first_nonfinite() const {
  for (uint32_t id = 0; id < nodes_.size(); ++id) {
    if (!nodes_[id].value.all_finite()) return std::make_pair(std::string(nodes_[id].op), id);
  }
  return std::nullopt;
}

// ---- primitives
//
// Each op evaluates eagerly through the tensor.cpp routine and records a
// closure that scatters the node gradient into its parents. Parent ids are
// captured by value; parent tensors are read back from the tape.

Var matmul(const Var& a, const Var& b) {
  Tape* t = common_tape("matmul", {&a, &b});
  Tensor out = matmul(a.value(), b.value());
  const uint32_t pa = a.id(), pb = b.id();
  return t->emit("matmul", std::move(out), {pa, pb}, [pa, pb](Tape& tp, uint32_t id) {
    const Tensor& g = tp.grad(id);
    const Tensor& A = tp.value(pa);
    const Tensor& B = tp.value(pb);
    const size_t k = B.shape()[0], n = B.shape()[1];
    const size_t m = A.size() / k;
    Tensor g2d = reshape(g, {m, n});
    tp.accum(pa, reshape(matmul(g2d, transpose2d(B)), A.shape()));
    tp.accum(pb, matmul(transpose2d(reshape(A, {m, k})), g2d));
  });
}

Var add(const Var& a, const Var& b) {
  Tape* t = common_tape("add", {&a, &b});
  Tensor out = add(a.value(), b.value());
  const uint32_t pa = a.id(), pb = b.id();
  return t->emit("add", std::move(out), {pa, pb}, [pa, pb](Tape& tp, uint32_t id) {
    tp.accum(pa, tp.grad(id));
    tp.accum(pb, tp.grad(id));
  });
}

Var sub(const Var& a, const Var& b) {
  Tape* t = common_tape("sub", {&a, &b});
  Tensor out = sub(a.value(), b.value());
  const uint32_t pa = a.id(), pb = b.id();
  return t->emit("sub", std::move(out), {pa, pb}, [pa, pb](Tape& tp, uint32_t id) {
    tp.accum(pa, tp.grad(id));
    tp.accum(pb, mul(tp.grad(id), -1.0));
  });
}

Var mul(const Var& a, const Var& b) {
  Tape* t = common_tape("mul", {&a, &b});
  Tensor out = mul(a.value(), b.value());
  const uint32_t pa = a.id(), pb = b.id();
  return t->emit("mul", std::move(out), {pa, pb}, [pa, pb](Tape& tp, uint32_t id) {
    const Tensor& g = tp.grad(id);
    tp.accum(pa, mul(g, tp.value(pb)));
    tp.accum(pb, mul(g, tp.value(pa)));
  });
}

Var add(const Var& a, double c) {
  Tape* t = common_tape("add_scalar", {&a});
  const uint32_t pa = a.id();
  return t->emit("add_scalar", add(a.value(), c), {pa},
                 [pa](Tape& tp, uint32_t id) { tp.accum(pa, tp.grad(id)); });
}

Var mul(const Var& a, double c) {
  Tape* t = common_tape("mul_scalar", {&a});
  const uint32_t pa = a.id();
  return t->emit("mul_scalar", mul(a.value(), c), {pa},
                 [pa, c](Tape& tp, uint32_t id) { tp.accum(pa, mul(tp.grad(id), c)); });
}

Var add_rowvec(const Var& x, const Var& v) {
  Tape* t = common_tape("add_rowvec", {&x, &v});
  Tensor out = add_rowvec(x.value(), v.value());
  const uint32_t px = x.id(), pv = v.id();
  return t->emit("add_rowvec", std::move(out), {px, pv}, [px, pv](Tape& tp, uint32_t id) {
    const Tensor& g = tp.grad(id);
    tp.accum(px, g);
    tp.accum(pv, colsum(g));
  });
}

Var exp(const Var& x) {
  Tape* t = common_tape("exp", {&x});
  Tensor out = exp(x.value());
  const uint32_t px = x.id();
  return t->emit("exp", std::move(out), {px}, [px](Tape& tp, uint32_t id) {
    tp.accum(px, mul(tp.grad(id), tp.value(id)));
  });
}

Var log(const Var& x) {
  Tape* t = common_tape("log", {&x});
  Tensor out = log(x.value());
  const uint32_t px = x.id();
  return t->emit("log", std::move(out), {px}, [px](Tape& tp, uint32_t id) {
    const Tensor& g = tp.grad(id);
    const Tensor& xv = tp.value(px);
    Tensor gx(xv.shape());
    for (size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] / xv[i];
    tp.accum(px, gx);
  });
}

Var tanh(const Var& x) {
  Tape* t = common_tape("tanh", {&x});
  Tensor out = tanh(x.value());
  const uint32_t px = x.id();
  return t->emit("tanh", std::move(out), {px}, [px](Tape& tp, uint32_t id) {
    const Tensor& g = tp.grad(id);
    const Tensor& y = tp.value(id);
    Tensor gx(y.shape());
    for (size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * (1.0 - y[i] * y[i]);
    tp.accum(px, gx);
  });
}

Var relu(const Var& x) {
  Tape* t = common_tape("relu", {&x});
  Tensor out = relu(x.value());
  const uint32_t px = x.id();
  return t->emit("relu", std::move(out), {px}, [px](Tape& tp, uint32_t id) {
    const Tensor& g = tp.grad(id);
    const Tensor& xv = tp.value(px);
    Tensor gx(xv.shape());
    for (size_t i = 0; i < gx.size(); ++i) gx[i] = xv[i] > 0.0 ? g[i] : 0.0;
    tp.accum(px, gx);
  });
}

Var sum(const Var& x) {
  Tape* t = common_tape("sum", {&x});
  Tensor out = sum(x.value());
  const uint32_t px = x.id();
  return t->emit("sum", std::move(out), {px}, [px](Tape& tp, uint32_t id) {
    const double g = tp.grad(id).item();
    tp.accum(px, Tensor(tp.value(px).shape(), g));
  });
}

Var mean(const Var& x) {
  Tape* t = common_tape("mean", {&x});
  Tensor out = mean(x.value());
  const uint32_t px = x.id();
  return t->emit("mean", std::move(out), {px}, [px](Tape& tp, uint32_t id) {
    const Tensor& xv = tp.value(px);
    const double g = tp.grad(id).item() / static_cast<double>(xv.size());
    tp.accum(px, Tensor(xv.shape(), g));
  });
}

Var sum_lastaxis(const Var& x) {
  Tape* t = common_tape("sum_lastaxis", {&x});
  Tensor out = sum_lastaxis(x.value());
  const uint32_t px = x.id();
  return t->emit("sum_lastaxis", std::move(out), {px}, [px](Tape& tp, uint32_t id) {
    const Tensor& g = tp.grad(id);
    const Tensor& xv = tp.value(px);
    const size_t n = xv.shape().back();
    const size_t rows = xv.size() / n;
    Tensor gx(xv.shape());
    for (size_t r = 0; r < rows; ++r)
      for (size_t j = 0; j < n; ++j) gx[r * n + j] = g[r];
    tp.accum(px, gx);
  });
}

Var l2norm_lastaxis(const Var& x) {
  Tape* t = common_tape("l2norm_lastaxis", {&x});
  Tensor out = l2norm_lastaxis(x.value());
  const uint32_t px = x.id();
  return t->emit("l2norm_lastaxis", std::move(out), {px}, [px](Tape& tp, uint32_t id) {
    const Tensor& g = tp.grad(id);
    const Tensor& r = tp.value(id);
    const Tensor& xv = tp.value(px);
    const size_t n = xv.shape().back();
    const size_t rows = xv.size() / n;
    Tensor gx(xv.shape());
    for (size_t i = 0; i < rows; ++i) {
      const double scale = r[i] > 0.0 ? g[i] / r[i] : 0.0;
      for (size_t j = 0; j < n; ++j) gx[i * n + j] = scale * xv[i * n + j];
    }
    tp.accum(px, gx);
  });
}

Var l2_normalize_lastaxis(const Var& x, double eps) {
  Tape* t = common_tape("l2_normalize", {&x});
  Tensor out = l2_normalize_lastaxis(x.value(), eps);
  const uint32_t px = x.id();
  return t->emit("l2_normalize", std::move(out), {px}, [px, eps](Tape& tp, uint32_t id) {
    const Tensor& g = tp.grad(id);
    const Tensor& xv = tp.value(px);
    const size_t n = xv.shape().back();
    const size_t rows = xv.size() / n;
    Tensor gx(xv.shape());
    for (size_t i = 0; i < rows; ++i) {
      const double* xr = xv.data() + i * n;
      const double* gr = g.data() + i * n;
      double ss = 0.0, gdotx = 0.0;
      for (size_t j = 0; j < n; ++j) {
        ss += xr[j] * xr[j];
        gdotx += gr[j] * xr[j];
      }
      const double r = std::sqrt(ss);
      const double inv = 1.0 / (r + eps);
      const double coef = r > 0.0 ? gdotx / (r * (r + eps) * (r + eps)) : 0.0;
      for (size_t j = 0; j < n; ++j) gx[i * n + j] = gr[j] * inv - coef * xr[j];
    }
    tp.accum(px, gx);
  });
}

Var softmax(const Var& x) {
  Tape* t = common_tape("softmax", {&x});
  Tensor out = softmax(x.value());
  const uint32_t px = x.id();
  return t->emit("softmax", std::move(out), {px}, [px](Tape& tp, uint32_t id) {
    const Tensor& g = tp.grad(id);
    const Tensor& y = tp.value(id);
    const size_t n = y.shape().back();
    const size_t rows = y.size() / n;
    Tensor gx(y.shape());
    for (size_t i = 0; i < rows; ++i) {
      const double* yr = y.data() + i * n;
      const double* gr = g.data() + i * n;
      double dot = 0.0;
      for (size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
      for (size_t j = 0; j < n; ++j) gx[i * n + j] = yr[j] * (gr[j] - dot);
    }
    tp.accum(px, gx);
  });
}

Var log_softmax(const Var& x) {
  Tape* t = common_tape("log_softmax", {&x});
  Tensor out = log_softmax(x.value());
  const uint32_t px = x.id();
  return t->emit("log_softmax", std::move(out), {px}, [px](Tape& tp, uint32_t id) {
    const Tensor& g = tp.grad(id);
    const Tensor& y = tp.value(id);  // log-probabilities
    const size_t n = y.shape().back();
    const size_t rows = y.size() / n;
    Tensor gx(y.shape());
    for (size_t i = 0; i < rows; ++i) {
      const double* yr = y.data() + i * n;
      const double* gr = g.data() + i * n;
      double gsum = 0.0;
      for (size_t j = 0; j < n; ++j) gsum += gr[j];
      for (size_t j = 0; j < n; ++j) gx[i * n + j] = gr[j] - std::exp(yr[j]) * gsum;
    }
    tp.accum(px, gx);
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& offset, double eps) {
  Tape* t = common_tape("layer_norm", {&x, &gain, &offset});
  Tensor out = layer_norm(x.value(), gain.value(), offset.value(), eps);
  const uint32_t px = x.id(), pg = gain.id(), po = offset.id();
  return t->emit("layer_norm", std::move(out), {px, pg, po}, [px, pg, po, eps](Tape& tp, uint32_t id) {
    const Tensor& g = tp.grad(id);
    const Tensor& xv = tp.value(px);
    const Tensor& gamma = tp.value(pg);
    const size_t n = xv.shape().back();
    const size_t rows = xv.size() / n;
    Tensor gx(xv.shape());
    Tensor ggain(gamma.shape());
    Tensor goff(gamma.shape());
    std::vector<double> xhat(n);
    for (size_t i = 0; i < rows; ++i) {
      const double* xr = xv.data() + i * n;
      const double* gr = g.data() + i * n;
      double mu = 0.0;
      for (size_t j = 0; j < n; ++j) mu += xr[j];
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
      var /= static_cast<double>(n);
      const double inv = 1.0 / std::sqrt(var + eps);
      double m1 = 0.0, m2 = 0.0;  // mean(ghat), mean(ghat*xhat)
      for (size_t j = 0; j < n; ++j) {
        xhat[j] = (xr[j] - mu) * inv;
        const double gh = gr[j] * gamma[j];
        m1 += gh;
        m2 += gh * xhat[j];
        ggain[j] += gr[j] * xhat[j];
        goff[j] += gr[j];
      }
      m1 /= static_cast<double>(n);
      m2 /= static_cast<double>(n);
      for (size_t j = 0; j < n; ++j) {
        gx[i * n + j] = inv * (gr[j] * gamma[j] - m1 - xhat[j] * m2);
      }
    }
    tp.accum(px, gx);
    tp.accum(pg, ggain);
    tp.accum(po, goff);
  });
}

Var reshape(const Var& x, Shape new_shape) {
  Tape* t = common_tape("reshape", {&x});
  Tensor out = reshape(x.value(), new_shape);
  const uint32_t px = x.id();
  return t->emit("reshape", std::move(out), {px}, [px](Tape& tp, uint32_t id) {
    tp.accum(px, reshape(tp.grad(id), tp.value(px).shape()));
  });
}

Var patches(const Var& x, size_t ph, size_t pw) {
  Tape* t = common_tape("patches", {&x});
  Tensor out = patches(x.value(), ph, pw);
  const uint32_t px = x.id();
  return t->emit("patches", std::move(out), {px}, [px, ph, pw](Tape& tp, uint32_t id) {
    const Tensor& g = tp.grad(id);
    const Tensor& xv = tp.value(px);
    const size_t n = xv.shape()[0], c = xv.shape()[1], h = xv.shape()[2], w = xv.shape()[3];
    const size_t gh = h / ph, gw = w / pw;
    Tensor gx(xv.shape());
    const double* pg = g.data();
    for (size_t i = 0; i < n; ++i)
      for (size_t gy = 0; gy < gh; ++gy)
        for (size_t gx_ = 0; gx_ < gw; ++gx_)
          for (size_t ch = 0; ch < c; ++ch)
            for (size_t py = 0; py < ph; ++py) {
              double* dst = gx.data() + ((i * c + ch) * h + gy * ph + py) * w + gx_ * pw;
              for (size_t qx = 0; qx < pw; ++qx) dst[qx] += *pg++;
            }
    tp.accum(px, gx);
  });
}

}  // namespace byov
