#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "byov/tensor.hpp"

namespace byov {

class Tape;

// Handle to a node on a tape. Cheap to copy; owns nothing.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  /// Accumulated gradient; zero-filled if backward never reached this node.
  const Tensor& grad() const;
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, uint32_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  uint32_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order by construction; backward walks the list once in
// reverse. Accumulation contract: leaf gradients accumulate across
// backward() calls until zero_grad(); interior gradients hold the most
// recent pass only. Single writer per tape.
class Tape {
 public:
  using BackFn = std::function<void(Tape&, uint32_t)>;

  Var param(Tensor value);     // leaf that receives gradients
  Var constant(Tensor value);  // leaf outside differentiation

  /// Propagate d(loss)/d(node) to every reachable node. loss must be scalar.
  void backward(const Var& loss);
  void zero_grad();

  size_t size() const { return nodes_.size(); }
  const Tensor& value(uint32_t id) const { return nodes_[id].value; }
  const Tensor& grad(uint32_t id);
  bool node_requires_grad(uint32_t id) const { return nodes_[id].requires_grad; }

  /// First node (in evaluation order) holding a NaN/Inf, as (op, node id).
  std::optional<std::pair<std::string, uint32_t>> first_nonfinite() const;

  Var emit(const char* op, Tensor value, std::vector<uint32_t> parents, BackFn back);
  void accum(uint32_t id, const Tensor& g);

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated on first contribution
    std::vector<uint32_t> parents;
    BackFn back;
    const char* op;
    bool requires_grad;
  };
  std::vector<Node> nodes_;
};

// ---- differentiable primitives

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add(const Var& a, double c);
Var mul(const Var& a, double c);
Var add_rowvec(const Var& x, const Var& v);
Var exp(const Var& x);
Var log(const Var& x);
Var tanh(const Var& x);
Var relu(const Var& x);
Var sum(const Var& x);
Var mean(const Var& x);
Var sum_lastaxis(const Var& x);
Var l2norm_lastaxis(const Var& x);
Var l2_normalize_lastaxis(const Var& x, double eps = 1e-12);
Var softmax(const Var& x);
Var log_softmax(const Var& x);
Var layer_norm(const Var& x, const Var& gain, const Var& offset, double eps = 1e-5);
Var reshape(const Var& x, Shape new_shape);
Var patches(const Var& x, size_t ph, size_t pw);

}  // namespace byov
