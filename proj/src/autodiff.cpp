#include "incrprobe/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "incrprobe/error.hpp"
#include "incrprobe/kernels.hpp"

namespace incrprobe::ad {

namespace {

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw UsageError("operation on an unbound Var");
  return *a.tape;
}

Tape& common_tape(Var a, Var b) {
  if (a.tape != b.tape) throw UsageError("operands live on different tapes");
  return tape_of(a);
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

void add_into(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var Tape::constant(Matrix value) { return push(std::move(value), {}, nullptr); }

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  Node node;
  node.value = p.value;
  node.param = &p;
  node.requires_grad = recording_;
  nodes_.push_back(std::move(node));
  const std::size_t id = nodes_.size() - 1;
  param_nodes_.emplace(&p, id);
  return {this, id};
}

Var Tape::param_value(const Parameter& p) {
  if (auto it = value_nodes_.find(&p); it != value_nodes_.end()) return {this, it->second};
  const Var v = constant(p.value);
  value_nodes_.emplace(&p, v.id);
  return v;
}

Var Tape::push(Matrix value, std::vector<std::size_t> parents, BackwardFn fn) {
  const std::size_t id = nodes_.size();
  Node node;
  node.value = std::move(value);
  if (recording_ && fn) {
    for (std::size_t p : parents) {
      if (p >= id) throw UsageError("tape parent does not precede its child (cycle)");
      node.requires_grad = node.requires_grad || nodes_[p].requires_grad;
    }
    if (node.requires_grad) {
      node.parents = std::move(parents);
      node.backward = std::move(fn);
    }
  }
  nodes_.push_back(std::move(node));
  return {this, id};
}

Matrix& Tape::grad_ref(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw UsageError("backward: root belongs to another tape");
  if (!recording_) throw UsageError("backward on a tape that does not record gradients");
  const Node& r = nodes_.at(root.id);
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw UsageError("backward: root must be a scalar, got " + r.value.shape_string());
  }
  for (Node& n : nodes_) n.grad = Matrix();
  grad_ref(root.id)[0] = 1.0;
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) add_into(n.param->grad, n.grad);
  }
}

Var matmul(Var a, Var b) {
  Tape& t = common_tape(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul shape mismatch: " + av.shape_string() + " * " +
                         bv.shape_string());
  }
  Matrix out(av.rows(), bv.cols());
  kernels::omp::gemm(av, bv, out, false);
  return t.push(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& tp, std::size_t self) {
    const Matrix& dy = tp.grad_at(self);
    if (tp.needs_grad_at(ai)) kernels::omp::gemm_a_bt(dy, tp.value_at(bi), tp.grad_ref(ai), true);
    if (tp.needs_grad_at(bi)) kernels::omp::gemm_at_b(tp.value_at(ai), dy, tp.grad_ref(bi), true);
  });
}

Var add(Var a, Var b) {
  Tape& t = common_tape(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  const bool broadcast = !av.same_shape(bv) && bv.rows() == 1 && bv.cols() == av.cols();
  if (!broadcast) require_same_shape(av, bv, "add");
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    auto brow = broadcast ? bv.row(0) : bv.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += brow[c];
  }
  return t.push(std::move(out), {a.id, b.id},
                [ai = a.id, bi = b.id, broadcast](Tape& tp, std::size_t self) {
                  const Matrix& dy = tp.grad_at(self);
                  if (tp.needs_grad_at(ai)) add_into(tp.grad_ref(ai), dy);
                  if (!tp.needs_grad_at(bi)) return;
                  Matrix& db = tp.grad_ref(bi);
                  if (!broadcast) {
                    add_into(db, dy);
                    return;
                  }
                  for (std::size_t r = 0; r < dy.rows(); ++r)
                    for (std::size_t c = 0; c < dy.cols(); ++c) db[c] += dy(r, c);
                });
}

Var add_n(std::span<const Var> terms) {
  if (terms.empty()) throw UsageError("add_n of no terms");
  Tape& t = tape_of(terms[0]);
  Matrix out = t.value(terms[0]);
  std::vector<std::size_t> parents{terms[0].id};
  for (std::size_t i = 1; i < terms.size(); ++i) {
    if (terms[i].tape != &t) throw UsageError("operands live on different tapes");
    const Matrix& v = t.value(terms[i]);
    require_same_shape(out, v, "add_n");
    add_into(out, v);
    parents.push_back(terms[i].id);
  }
  return t.push(std::move(out), parents, [parents](Tape& tp, std::size_t self) {
    const Matrix& dy = tp.grad_at(self);
    for (std::size_t p : parents)
      if (tp.needs_grad_at(p)) add_into(tp.grad_ref(p), dy);
  });
}

Var mul(Var a, Var b) {
  Tape& t = common_tape(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require_same_shape(av, bv, "mul");
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return t.push(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& tp, std::size_t self) {
    const Matrix& dy = tp.grad_at(self);
    if (tp.needs_grad_at(ai)) {
      Matrix& da = tp.grad_ref(ai);
      const Matrix& bv = tp.value_at(bi);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (tp.needs_grad_at(bi)) {
      Matrix& db = tp.grad_ref(bi);
      const Matrix& av = tp.value_at(ai);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  Matrix out = t.value(a);
  for (double& v : out.values()) v *= s;
  return t.push(std::move(out), {a.id}, [ai = a.id, s](Tape& tp, std::size_t self) {
    const Matrix& dy = tp.grad_at(self);
    Matrix& da = tp.grad_ref(ai);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += s * dy[i];
  });
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  Matrix out = t.value(a);
  for (double& v : out.values()) v = std::tanh(v);
  return t.push(std::move(out), {a.id}, [ai = a.id](Tape& tp, std::size_t self) {
    const Matrix& dy = tp.grad_at(self);
    const Matrix& y = tp.value_at(self);
    Matrix& da = tp.grad_ref(ai);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * (1.0 - y[i] * y[i]);
  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Matrix out = t.value(a);
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return t.push(std::move(out), {a.id}, [ai = a.id](Tape& tp, std::size_t self) {
    const Matrix& dy = tp.grad_at(self);
    const Matrix& y = tp.value_at(self);
    Matrix& da = tp.grad_ref(ai);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * y[i] * (1.0 - y[i]);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_cols of no parts");
  Tape& t = tape_of(parts[0]);
  const std::size_t rows = t.value(parts[0]).rows();
  std::size_t cols = 0;
  std::vector<std::size_t> parents;
  std::vector<std::size_t> offsets;
  for (Var p : parts) {
    if (p.tape != &t) throw UsageError("operands live on different tapes");
    const Matrix& v = t.value(p);
    if (v.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + t.value(parts[0]).shape_string() +
                           " vs " + v.shape_string());
    }
    offsets.push_back(cols);
    cols += v.cols();
    parents.push_back(p.id);
  }
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Matrix& v = t.value(parts[k]);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(v.row(r).begin(), v.row(r).end(), out.row(r).begin() + offsets[k]);
  }
  return t.push(std::move(out), parents, [parents, offsets](Tape& tp, std::size_t self) {
    const Matrix& dy = tp.grad_at(self);
    for (std::size_t k = 0; k < parents.size(); ++k) {
      if (!tp.needs_grad_at(parents[k])) continue;
      Matrix& d = tp.grad_ref(parents[k]);
      for (std::size_t r = 0; r < d.rows(); ++r)
        for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) += dy(r, offsets[k] + c);
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  const Matrix& av = t.value(a);
  if (begin + count > av.cols()) {
    std::ostringstream msg;
    msg << "slice_cols [" << begin << ", " << begin + count << ") out of range for "
        << av.shape_string();
    throw DimensionError(msg.str());
  }
  Matrix out(av.rows(), count);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = av(r, begin + c);
  return t.push(std::move(out), {a.id}, [ai = a.id, begin](Tape& tp, std::size_t self) {
    const Matrix& dy = tp.grad_at(self);
    Matrix& da = tp.grad_ref(ai);
    for (std::size_t r = 0; r < dy.rows(); ++r)
      for (std::size_t c = 0; c < dy.cols(); ++c) da(r, begin + c) += dy(r, c);
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  const Matrix& av = t.value(a);
  if (begin + count > av.rows()) {
    std::ostringstream msg;
    msg << "slice_rows [" << begin << ", " << begin + count << ") out of range for "
        << av.shape_string();
    throw DimensionError(msg.str());
  }
  const std::size_t w = av.cols();
  std::vector<double> data(av.data() + begin * w, av.data() + (begin + count) * w);
  return t.push(Matrix(count, w, std::move(data)), {a.id},
                [ai = a.id, begin](Tape& tp, std::size_t self) {
                  const Matrix& dy = tp.grad_at(self);
                  Matrix& da = tp.grad_ref(ai);
                  double* dst = da.data() + begin * dy.cols();
                  for (std::size_t i = 0; i < dy.size(); ++i) dst[i] += dy[i];
                });
}

Var softmax_rows(Var a, const Matrix& mask) {
  Tape& t = tape_of(a);
  const Matrix& av = t.value(a);
  const bool masked = !mask.empty();
  if (masked) require_same_shape(av, mask, "softmax_rows mask");
  if (av.cols() == 0) throw DomainError("softmax of empty vector");
  Matrix out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double mx = -INFINITY;
    std::size_t kept = 0;
    for (std::size_t c = 0; c < av.cols(); ++c) {
      if (masked && mask(r, c) == 0.0) continue;
      if (!std::isfinite(av(r, c))) throw NumericError("softmax_rows: non-finite input");
      mx = std::max(mx, av(r, c));
      ++kept;
    }
    if (kept == 0) throw InternalError("softmax_rows: every position of a row is masked");
    double total = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) {
      if (masked && mask(r, c) == 0.0) continue;
      out(r, c) = std::exp(av(r, c) - mx);
      total += out(r, c);
    }
    for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) /= total;
  }
  return t.push(std::move(out), {a.id}, [ai = a.id](Tape& tp, std::size_t self) {
    // Masked entries have y = 0, so they receive no gradient.
    const Matrix& dy = tp.grad_at(self);
    const Matrix& y = tp.value_at(self);
    Matrix& da = tp.grad_ref(ai);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double inner = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) inner += y(r, c) * dy(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) da(r, c) += y(r, c) * (dy(r, c) - inner);
    }
  });
}

Var cross_entropy(Var probs, std::span<const std::size_t> targets,
                  std::span<const double> weights) {
  Tape& t = tape_of(probs);
  const Matrix& p = t.value(probs);
  if (targets.size() != p.rows() || weights.size() != p.rows()) {
    throw DimensionError("cross_entropy: targets/weights length does not match " +
                         p.shape_string());
  }
  double loss = 0.0;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    if (weights[r] == 0.0) continue;
    loss += weights[r] * incrprobe::cross_entropy(p.row(r), targets[r]);
  }
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  return t.push(Matrix(1, 1, loss), {probs.id},
                [pi = probs.id, tg = std::move(tg), w = std::move(w)](Tape& tp, std::size_t self) {
                  const double dy = tp.grad_at(self)[0];
                  const Matrix& p = tp.value_at(pi);
                  Matrix& dp = tp.grad_ref(pi);
                  for (std::size_t r = 0; r < p.rows(); ++r) {
                    if (w[r] == 0.0) continue;
                    const double pt = p(r, tg[r]);
                    if (pt >= kLogClamp) dp(r, tg[r]) -= dy * w[r] / pt;
                  }
                });
}

Var l2_norm(Var a) {
  Tape& t = tape_of(a);
  const double n = incrprobe::l2_norm(t.value(a).values());
  return t.push(Matrix(1, 1, n), {a.id}, [ai = a.id](Tape& tp, std::size_t self) {
    const double norm = tp.value_at(self)[0];
    if (norm == 0.0) return;
    const double dy = tp.grad_at(self)[0];
    const Matrix& av = tp.value_at(ai);
    Matrix& da = tp.grad_ref(ai);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy * av[i] / norm;
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : t.value(a).values()) s += v;
  return t.push(Matrix(1, 1, s), {a.id}, [ai = a.id](Tape& tp, std::size_t self) {
    const double dy = tp.grad_at(self)[0];
    for (double& g : tp.grad_ref(ai).values()) g += dy;
  });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  Tape& t = tape_of(table);
  const Matrix& tv = t.value(table);
  Matrix out(indices.size(), tv.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= tv.rows()) {
      std::ostringstream msg;
      msg << "gather_rows: index " << indices[r] << " out of range for " << tv.shape_string();
      throw VocabularyError(msg.str());
    }
    std::copy(tv.row(indices[r]).begin(), tv.row(indices[r]).end(), out.row(r).begin());
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return t.push(std::move(out), {table.id},
                [ti = table.id, idx = std::move(idx)](Tape& tp, std::size_t self) {
                  const Matrix& dy = tp.grad_at(self);
                  Matrix& dt = tp.grad_ref(ti);
                  for (std::size_t r = 0; r < idx.size(); ++r) {
                    auto src = dy.row(r);
                    auto dst = dt.row(idx[r]);
                    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                  }
                });
}

Var blend_rows(Var a, Var b, std::span<const char> take_first) {
  Tape& t = common_tape(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require_same_shape(av, bv, "blend_rows");
  if (take_first.size() != av.rows()) throw DimensionError("blend_rows: mask length mismatch");
  Matrix out = bv;
  for (std::size_t r = 0; r < av.rows(); ++r)
    if (take_first[r]) std::copy(av.row(r).begin(), av.row(r).end(), out.row(r).begin());
  std::vector<char> sel(take_first.begin(), take_first.end());
  return t.push(std::move(out), {a.id, b.id},
                [ai = a.id, bi = b.id, sel = std::move(sel)](Tape& tp, std::size_t self) {
                  const Matrix& dy = tp.grad_at(self);
                  for (std::size_t r = 0; r < dy.rows(); ++r) {
                    const std::size_t target = sel[r] ? ai : bi;
                    if (!tp.needs_grad_at(target)) continue;
                    auto dst = tp.grad_ref(target).row(r);
                    auto src = dy.row(r);
                    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                  }
                });
}

Var dot_energies(Var query, std::span<const Var> keys) {
  Tape& t = tape_of(query);
  const Matrix& q = t.value(query);
  Matrix out(q.rows(), keys.size());
  std::vector<std::size_t> parents{query.id};
  for (std::size_t k = 0; k < keys.size(); ++k) {
    if (keys[k].tape != &t) throw UsageError("operands live on different tapes");
    const Matrix& kv = t.value(keys[k]);
    require_same_shape(q, kv, "dot_energies");
    for (std::size_t r = 0; r < q.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < q.cols(); ++c) s += q(r, c) * kv(r, c);
      out(r, k) = s;
    }
    parents.push_back(keys[k].id);
  }
  return t.push(std::move(out), parents, [parents](Tape& tp, std::size_t self) {
    const Matrix& dy = tp.grad_at(self);
    const std::size_t qi = parents[0];
    const Matrix& q = tp.value_at(qi);
    for (std::size_t k = 0; k + 1 < parents.size(); ++k) {
      const std::size_t ki = parents[k + 1];
      const Matrix& kv = tp.value_at(ki);
      if (tp.needs_grad_at(qi)) {
        Matrix& dq = tp.grad_ref(qi);
        for (std::size_t r = 0; r < q.rows(); ++r)
          for (std::size_t c = 0; c < q.cols(); ++c) dq(r, c) += dy(r, k) * kv(r, c);
      }
      if (tp.needs_grad_at(ki)) {
        Matrix& dk = tp.grad_ref(ki);
        for (std::size_t r = 0; r < q.rows(); ++r)
          for (std::size_t c = 0; c < q.cols(); ++c) dk(r, c) += dy(r, k) * q(r, c);
      }
    }
  });
}

Var weighted_sum(Var weights, std::span<const Var> values) {
  Tape& t = tape_of(weights);
  const Matrix& w = t.value(weights);
  if (values.empty() || w.cols() != values.size()) {
    throw DimensionError("weighted_sum: weight columns do not match value count");
  }
  const Matrix& first = t.value(values[0]);
  if (first.rows() != w.rows()) throw DimensionError("weighted_sum: row mismatch");
  Matrix out(first.rows(), first.cols());
  std::vector<std::size_t> parents{weights.id};
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (values[k].tape != &t) throw UsageError("operands live on different tapes");
    const Matrix& v = t.value(values[k]);
    require_same_shape(first, v, "weighted_sum");
    for (std::size_t r = 0; r < v.rows(); ++r) {
      const double wk = w(r, k);
      if (wk == 0.0) continue;
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, c) += wk * v(r, c);
    }
    parents.push_back(values[k].id);
  }
  return t.push(std::move(out), parents, [parents](Tape& tp, std::size_t self) {
    const Matrix& dy = tp.grad_at(self);
    const std::size_t wi = parents[0];
    const Matrix& w = tp.value_at(wi);
    for (std::size_t k = 0; k + 1 < parents.size(); ++k) {
      const std::size_t vi = parents[k + 1];
      const Matrix& v = tp.value_at(vi);
      if (tp.needs_grad_at(wi)) {
        Matrix& dw = tp.grad_ref(wi);
        for (std::size_t r = 0; r < v.rows(); ++r) {
          double s = 0.0;
          for (std::size_t c = 0; c < v.cols(); ++c) s += dy(r, c) * v(r, c);
          dw(r, k) += s;
        }
      }
      if (tp.needs_grad_at(vi)) {
        Matrix& dv = tp.grad_ref(vi);
        for (std::size_t r = 0; r < v.rows(); ++r)
          for (std::size_t c = 0; c < v.cols(); ++c) dv(r, c) += w(r, k) * dy(r, c);
      }
    }
  });
}

}  // namespace incrprobe::ad
