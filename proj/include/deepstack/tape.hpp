#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "deepstack/tensor.hpp"

namespace deepstack {

// Handle to a node on a Tape.
struct Value {
  std::uint32_t idx = 0;
};

// Reverse-mode differentiation record. A tape owns the forward values of
// every node it creates; parameters are held by reference and registered
// so their gradients can be read back after backward().
//
// One tape covers one forward computation (here: one sentence). Node order
// is creation order, which is a topological order by construction, and
// backward walks it exactly once in reverse. Identical tapes therefore
// produce bit-identical gradients.
class Tape {
 public:
  using value_type = Value;

  // Owning constant node.
  Value leaf(Tensor v) { return push(Op::kLeaf, std::move(v)); }

  // Parameter node. The tensor is held by reference and must outlive the
  // tape; the node is added to the parameter-slot registry.
  Value param(const Tensor& t) {
    Value v = push_ref(Op::kParam, &t);
    params_.push_back(v.idx);
    return v;
  }

  std::size_t param_count() const { return params_.size(); }
  Value param_at(std::size_t slot) const { return Value{params_[slot]}; }

  Value matmul(Value a, Value b) {
    Tensor out = ops::matmul(val(a), val(b));
    return push(Op::kMatmul, std::move(out), a.idx, b.idx);
  }
  Value add(Value a, Value b) {
    return push(Op::kAdd, ops::add(val(a), val(b)), a.idx, b.idx);
  }
  Value sub(Value a, Value b) {
    return push(Op::kSub, ops::sub(val(a), val(b)), a.idx, b.idx);
  }
  Value mul(Value a, Value b) {
    return push(Op::kMul, ops::mul(val(a), val(b)), a.idx, b.idx);
  }
  Value div(Value a, Value b) {
    return push(Op::kDiv, ops::div(val(a), val(b)), a.idx, b.idx);
  }
  Value tanh(Value x) { return push(Op::kTanh, ops::tanh(val(x)), x.idx); }
  Value sigmoid(Value x) { return push(Op::kSigmoid, ops::sigmoid(val(x)), x.idx); }
  Value exp(Value x) { return push(Op::kExp, ops::exp(val(x)), x.idx); }
  Value softmax(Value x) { return push(Op::kSoftmax, ops::softmax(val(x)), x.idx); }
  Value log_softmax(Value x) {
    return push(Op::kLogSoftmax, ops::log_softmax(val(x)), x.idx);
  }

  Value concat(std::span<const Value> parts) {
    std::vector<Tensor> vals;
    vals.reserve(parts.size());
    for (Value p : parts) vals.push_back(val(p));
    Tensor out = ops::concat(vals);
    Node n;
    n.op = Op::kConcat;
    n.value = std::move(out);
    n.vararg_off = static_cast<std::uint32_t>(varargs_.size());
    n.vararg_len = static_cast<std::uint32_t>(parts.size());
    for (Value p : parts) varargs_.push_back(p.idx);
    nodes_.push_back(std::move(n));
    return Value{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }
  Value concat2(Value a, Value b) {
    const Value parts[] = {a, b};
    return concat(parts);
  }
  Value concat3(Value a, Value b, Value c) {
    const Value parts[] = {a, b, c};
    return concat(parts);
  }

  Value slice(Value x, std::size_t start, std::size_t len) {
    Value v = push(Op::kSlice, ops::slice(val(x), start, len), x.idx);
    nodes_[v.idx].aux = start;
    return v;
  }
  Value row(Value table, std::size_t i) {
    Value v = push(Op::kRow, ops::row(val(table), i), table.idx);
    nodes_[v.idx].aux = i;
    return v;
  }
  Value sum(Value x) { return push(Op::kSum, ops::sum(val(x)), x.idx); }
  Value pick(Value x, std::size_t i) {
    Value v = push(Op::kPick, ops::pick(val(x), i), x.idx);
    nodes_[v.idx].aux = i;
    return v;
  }
  Value scale(Value x, double c) {
    Value v = push(Op::kScale, ops::scale(val(x), c), x.idx);
    nodes_[v.idx].scalar = c;
    return v;
  }

  const Tensor& val(Value v) const {
    const Node& n = nodes_[v.idx];
    return n.ref ? *n.ref : n.value;
  }

  // Gradient of the last backward() loss with respect to node v.
  const Tensor& grad(Value v) const {
    if (!grads_valid_) throw ContractError("grad: backward has not been run");
    return nodes_[v.idx].grad;
  }

  std::size_t node_count() const { return nodes_.size(); }

  // Accumulates dloss/dnode for every node at or below the loss node.
  // Nodes not on any path to the loss keep a zero gradient.
  void backward(Value loss) {
    if (val(loss).size() != 1) {
      throw ContractError("backward: loss must be a scalar, got shape " +
                          val(loss).shape_string());
    }
    for (Node& n : nodes_) {
      n.grad = Tensor(n.ref ? n.ref->shape() : n.value.shape());
    }
    nodes_[loss.idx].grad[0] = 1.0;
    for (std::uint32_t i = loss.idx + 1; i-- > 0;) {
      step_backward(nodes_[i]);
    }
    grads_valid_ = true;
  }

 private:
  enum class Op : std::uint8_t {
    kLeaf,
    kParam,
    kMatmul,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kTanh,
    kSigmoid,
    kExp,
    kSoftmax,
    kLogSoftmax,
    kConcat,
    kSlice,
    kRow,
    kSum,
    kPick,
    kScale,
  };

  struct Node {
    Op op = Op::kLeaf;
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    std::uint32_t vararg_off = 0;
    std::uint32_t vararg_len = 0;
    std::size_t aux = 0;
    double scalar = 0.0;
    const Tensor* ref = nullptr;
    Tensor value;
    Tensor grad;
  };

  Value push(Op op, Tensor out, std::uint32_t a = 0, std::uint32_t b = 0) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = std::move(out);
    nodes_.push_back(std::move(n));
    return Value{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  Value push_ref(Op op, const Tensor* ref) {
    Node n;
    n.op = op;
    n.ref = ref;
    nodes_.push_back(std::move(n));
    return Value{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  const Tensor& node_val(std::uint32_t i) const {
    const Node& n = nodes_[i];
    return n.ref ? *n.ref : n.value;
  }

  void step_backward(Node& n) {
    const Tensor& dc = n.grad;
    switch (n.op) {
      case Op::kLeaf:
      case Op::kParam:
        break;
      case Op::kMatmul: {
        const Tensor& a = node_val(n.a);
        const Tensor& b = node_val(n.b);
        Tensor& da = nodes_[n.a].grad;
        Tensor& db = nodes_[n.b].grad;
        const std::size_t m = a.rows(), k = a.cols();
        if (b.rank() == 1) {
          // c[m] = a[m,k] * b[k]
          for (std::size_t i = 0; i < m; ++i) {
            const double g = dc[i];
            const double* arow = a.data() + i * k;
            double* darow = da.data() + i * k;
            for (std::size_t j = 0; j < k; ++j) {
              darow[j] += g * b[j];
              db[j] += g * arow[j];
            }
          }
        } else {
          const std::size_t nn = b.cols();
          // da = dc * b^T
          for (std::size_t i = 0; i < m; ++i) {
            const double* dcrow = dc.data() + i * nn;
            double* darow = da.data() + i * k;
            for (std::size_t p = 0; p < k; ++p) {
              darow[p] += detail::dot(dcrow, b.data() + p * nn, nn);
            }
          }
          // db = a^T * dc
          for (std::size_t i = 0; i < m; ++i) {
            const double* arow = a.data() + i * k;
            const double* dcrow = dc.data() + i * nn;
            for (std::size_t p = 0; p < k; ++p) {
              const double av = arow[p];
              double* dbrow = db.data() + p * nn;
              for (std::size_t j = 0; j < nn; ++j) dbrow[j] += av * dcrow[j];
            }
          }
        }
        break;
      }
      case Op::kAdd: {
        Tensor& da = nodes_[n.a].grad;
        Tensor& db = nodes_[n.b].grad;
        for (std::size_t i = 0; i < dc.size(); ++i) {
          da[i] += dc[i];
          db[i] += dc[i];
        }
        break;
      }
      case Op::kSub: {
        Tensor& da = nodes_[n.a].grad;
        Tensor& db = nodes_[n.b].grad;
        for (std::size_t i = 0; i < dc.size(); ++i) {
          da[i] += dc[i];
          db[i] -= dc[i];
        }
        break;
      }
      case Op::kMul: {
        const Tensor& a = node_val(n.a);
        const Tensor& b = node_val(n.b);
        Tensor& da = nodes_[n.a].grad;
        Tensor& db = nodes_[n.b].grad;
        for (std::size_t i = 0; i < dc.size(); ++i) {
          da[i] += dc[i] * b[i];
          db[i] += dc[i] * a[i];
        }
        break;
      }
      case Op::kDiv: {
        const Tensor& b = node_val(n.b);
        const Tensor& c = n.value;
        Tensor& da = nodes_[n.a].grad;
        Tensor& db = nodes_[n.b].grad;
        for (std::size_t i = 0; i < dc.size(); ++i) {
          da[i] += dc[i] / b[i];
          db[i] -= dc[i] * c[i] / b[i];
        }
        break;
      }
      case Op::kTanh: {
        Tensor& dx = nodes_[n.a].grad;
        const Tensor& y = n.value;
        for (std::size_t i = 0; i < dc.size(); ++i) dx[i] += dc[i] * (1.0 - y[i] * y[i]);
        break;
      }
      case Op::kSigmoid: {
        Tensor& dx = nodes_[n.a].grad;
        const Tensor& y = n.value;
        for (std::size_t i = 0; i < dc.size(); ++i) dx[i] += dc[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case Op::kExp: {
        Tensor& dx = nodes_[n.a].grad;
        const Tensor& y = n.value;
        for (std::size_t i = 0; i < dc.size(); ++i) dx[i] += dc[i] * y[i];
        break;
      }
      case Op::kSoftmax: {
        Tensor& dx = nodes_[n.a].grad;
        const Tensor& y = n.value;
        double s = 0.0;
        for (std::size_t i = 0; i < dc.size(); ++i) s += dc[i] * y[i];
        for (std::size_t i = 0; i < dc.size(); ++i) dx[i] += y[i] * (dc[i] - s);
        break;
      }
      case Op::kLogSoftmax: {
        Tensor& dx = nodes_[n.a].grad;
        const Tensor& l = n.value;
        double s = 0.0;
        for (std::size_t i = 0; i < dc.size(); ++i) s += dc[i];
        for (std::size_t i = 0; i < dc.size(); ++i) dx[i] += dc[i] - std::exp(l[i]) * s;
        break;
      }
      case Op::kConcat: {
        std::size_t off = 0;
        for (std::uint32_t t = 0; t < n.vararg_len; ++t) {
          Tensor& dp = nodes_[varargs_[n.vararg_off + t]].grad;
          for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += dc[off + i];
          off += dp.size();
        }
        break;
      }
      case Op::kSlice: {
        Tensor& dx = nodes_[n.a].grad;
        for (std::size_t i = 0; i < dc.size(); ++i) dx[n.aux + i] += dc[i];
        break;
      }
      case Op::kRow: {
        Tensor& dt = nodes_[n.a].grad;
        const std::size_t cols = node_val(n.a).cols();
        double* drow = dt.data() + n.aux * cols;
        for (std::size_t i = 0; i < dc.size(); ++i) drow[i] += dc[i];
        break;
      }
      case Op::kSum: {
        Tensor& dx = nodes_[n.a].grad;
        const double g = dc[0];
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
        break;
      }
      case Op::kPick: {
        nodes_[n.a].grad[n.aux] += dc[0];
        break;
      }
      case Op::kScale: {
        Tensor& dx = nodes_[n.a].grad;
        for (std::size_t i = 0; i < dc.size(); ++i) dx[i] += n.scalar * dc[i];
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> varargs_;
  std::vector<std::uint32_t> params_;
  bool grads_valid_ = false;
};

// Binds model parameters onto a tape and remembers which external tensor
// each slot came from, so gradient accumulation can be driven generically.
class ParamBinder {
 public:
  explicit ParamBinder(Tape& tape) : tape_(&tape) {}

  Value operator()(const Tensor& t) {
    sources_.push_back(&t);
    return tape_->param(t);
  }

  std::size_t size() const { return sources_.size(); }
  const Tensor& source(std::size_t i) const { return *sources_[i]; }

  // Adds each slot's gradient into the matching accumulator tensor.
  void accumulate(const Tape& tape, std::vector<Tensor>& acc) const {
    if (acc.size() != sources_.size()) {
      acc.clear();
      acc.reserve(sources_.size());
      for (const Tensor* s : sources_) acc.emplace_back(s->shape());
    }
    for (std::size_t i = 0; i < sources_.size(); ++i) {
      const Tensor& g = tape.grad(tape.param_at(i));
      Tensor& a = acc[i];
      for (std::size_t j = 0; j < a.size(); ++j) a[j] += g[j];
    }
  }

 private:
  Tape* tape_;
  std::vector<const Tensor*> sources_;
};

}  // namespace deepstack
