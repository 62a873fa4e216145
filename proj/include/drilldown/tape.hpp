#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "drilldown/ops.hpp"
#include "drilldown/params.hpp"
#include "drilldown/tensor.hpp"

namespace dd::grad {

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  bool requires_grad() const;
};

// Reverse-mode tape. Nodes are appended in execution order, so the node list
// is already topologically sorted; backward walks it in reverse.
class Tape {
 public:
  // Receives the output gradient and one accumulator per parent; an
  // accumulator is null when that parent does not require a gradient.
  using Backward = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grads_in)>;

  struct NoGrad {};
  static constexpr NoGrad no_grad{};

  Tape() = default;
  explicit Tape(NoGrad) : grad_enabled_(false) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);
  // Binds a named parameter once per tape; later calls return the same node.
  Var param(const ParamStore& store, const std::string& name);

  Var record(Tensor value, std::vector<Var> parents, Backward backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void backward(Var loss);
  // Zero tensor when v received no gradient.
  Tensor grad(Var v) const;
  // Gradients for every bound parameter, zero-filled where unused.
  GradMap param_grads() const;

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    Backward backward;
  };

  Var push(Node node);

  bool grad_enabled_ = true;
  std::deque<Node> nodes_;  // stable addresses: value() references outlive later records
  std::vector<Tensor> grads_;
  std::map<std::string, std::size_t> bound_;
};

Var matmul(Var a, Var b);
Var matmul_bt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_row(Var a, Var bias);
Var activate(Var x, Activation kind);
Var softmax_rows(Var x, double lambda);
Var log_softmax_rows(Var x);
Var l2_normalize_rows(Var x, double eps = kNormEps);
Var sum_rows(Var x);
Var sum_all(Var x);
Var reshape(Var x, std::size_t rows, std::size_t cols);
Var concat_cols(Var a, Var b);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var gather_cols(Var table, std::span<const std::size_t> ids);
Var pick_rows(std::span<const Var> sources, std::span<const std::size_t> which);
Var gather_elements(Var x, std::span<const std::size_t> cols);
// Detached copy: same value, no gradient path.
Var detach(Var x);

}  // namespace dd::grad
