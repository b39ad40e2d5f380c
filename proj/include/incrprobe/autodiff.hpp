#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "incrprobe/matrix.hpp"
#include "incrprobe/parameter.hpp"

namespace incrprobe::ad {

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

/// Reverse-mode tape over matrix-valued nodes.
///
/// Nodes are appended in evaluation order, so parents always precede their
/// children and the tape is acyclic by construction. A tape built with
/// record_gradients = false keeps forward values only (inference).
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Leaf bound to a Parameter; repeated calls return the same node.
  Var param(Parameter& p);
  /// Constant leaf holding a parameter's current value; no gradient flows
  /// back to the parameter. Repeated calls return the same node.
  Var param_value(const Parameter& p);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool recording() const noexcept { return recording_; }

  /// Gradient of the last backward() root w.r.t. v (zeros if unreachable).
  Matrix grad(Var v) const;

  /// Propagates d(root)/d(node) through the tape and adds the result into
  /// Parameter::grad of every bound parameter. root must be 1×1.
  void backward(Var root);

  // Op construction (used by the op functions below).
  Var push(Matrix value, std::vector<std::size_t> parents, BackwardFn fn);
  const Matrix& value_at(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad_at(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad_at(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient accumulator of node id, allocated (zeroed) on first use.
  Matrix& grad_ref(std::size_t id);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  bool recording_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  std::unordered_map<const Parameter*, std::size_t> value_nodes_;
};

// Differentiable operations. All operands must live on the same tape.

Var matmul(Var a, Var b);
/// a + b; b may also be a 1×n row broadcast over the rows of a.
Var add(Var a, Var b);
/// Elementwise sum of same-shaped nodes.
Var add_n(std::span<const Var> terms);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var tanh(Var a);
Var sigmoid(Var a);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
/// Row-wise softmax. If mask is non-empty (same shape, entries 0/1), masked
/// entries are excluded from the normalization and come out exactly 0.
Var softmax_rows(Var a, const Matrix& mask = {});
/// Σ_r w_r · (−ln max(p[r, target_r], 1e-12)), as a 1×1 node.
/// Rows with weight 0 are ignored entirely.
Var cross_entropy(Var probs, std::span<const std::size_t> targets, std::span<const double> weights);
/// Frobenius norm as a 1×1 node.
Var l2_norm(Var a);
/// Sum of all entries as a 1×1 node.
Var sum(Var a);
/// Row lookup: out.row(r) = table.row(indices[r]).
Var gather_rows(Var table, std::span<const std::size_t> indices);
/// out.row(r) = take_first[r] ? a.row(r) : b.row(r).
Var blend_rows(Var a, Var b, std::span<const char> take_first);
/// Dot-product energies e[r, t] = <query.row(r), keys[t].row(r)>, shape B×T.
Var dot_energies(Var query, std::span<const Var> keys);
/// out.row(r) = Σ_t weights[r, t] · values[t].row(r).
Var weighted_sum(Var weights, std::span<const Var> values);

}  // namespace incrprobe::ad
