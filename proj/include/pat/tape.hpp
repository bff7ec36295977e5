#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "pat/param_set.hpp"
#include "pat/tensor.hpp"

namespace pat::nn {

class Tape;

// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  bool valid() const { return tape != nullptr; }
  const Tensor& value() const;
  const Tensor& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Reverse-mode recorder. One tape is built per training computation and
// discarded afterwards; nothing persists between steps. Every recorded value
// is treated as a matrix (rank 1 values are 1 x n rows).
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  // Leaf whose gradient is kept on the tape (gradient probes w.r.t. inputs).
  Var input(Tensor value);
  // Leaf bound to a parameter entry. backward() adds into entry.grad when
  // trainable; a frozen binding behaves like a constant.
  Var param(ParamEntry& entry, bool trainable = true);
  std::vector<Var> params(ParamSet& set, bool trainable = true);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  // Zero tensor when no gradient reached the node.
  const Tensor& grad(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and propagates. loss must be a single value.
  // A tape can be run backward once.
  void backward(Var loss);

  // Used by op implementations.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn);
  Tensor& grad_ref(std::size_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool is_input = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    ParamEntry* param = nullptr;
  };

  bool grad_enabled_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
};

// ---- ops -------------------------------------------------------------------
Var matmul(Var a, Var b);     // (m x k)(k x n)
Var matmul_bt(Var a, Var b);  // (m x k)(n x k)^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);        // elementwise
Var add_row(Var a, Var row);  // broadcast a 1 x n row over every row of a
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var tanh(Var a);
Var sigmoid(Var a);
Var softmax_rows(Var a);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t start, std::size_t len);
Var slice_rows(Var a, std::size_t start, std::size_t len);
Var reshape(Var a, std::size_t rows, std::size_t cols);
Var row_sum(Var a);  // (m x n) -> (m x 1)
Var sum(Var a);      // -> 1 x 1
Var mean(Var a);     // -> 1 x 1

// softmax((logits + noise) / temperature), noise held constant.
Var gumbel_softmax(Var logits, const Tensor& noise, double temperature);

}  // namespace pat::nn
