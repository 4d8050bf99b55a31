#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "deepstack/tape.hpp"
#include "deepstack/tensor.hpp"

namespace deepstack {

// Weight matrices and embeddings start at N(0, 0.01^2); biases start at zero.
inline constexpr double kInitStd = 0.01;

inline Tensor init_weight(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, kInitStd);
  return t;
}

inline Tensor init_bias(std::size_t n) { return Tensor({n}); }

// ---------------------------------------------------------------------------
// Parameter containers
// ---------------------------------------------------------------------------

struct EmbeddingTable {
  std::size_t vocab_size = 0;
  std::size_t dim = 0;
  Tensor rows;  // [vocab_size x dim]

  static EmbeddingTable init(std::size_t vocab_size, std::size_t dim, Rng& rng) {
    return {vocab_size, dim, init_weight(vocab_size, dim, rng)};
  }
};

// One direction of an LSTM: candidate, input, forget and output gates.
struct LstmParams {
  Tensor w_gx, w_gh, b_g;
  Tensor w_ix, w_ih, b_i;
  Tensor w_fx, w_fh, b_f;
  Tensor w_ox, w_oh, b_o;

  std::size_t input_dim() const { return w_gx.cols(); }
  std::size_t hidden_dim() const { return w_gx.rows(); }

  static LstmParams init(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
    LstmParams p;
    p.w_gx = init_weight(hidden_dim, input_dim, rng);
    p.w_gh = init_weight(hidden_dim, hidden_dim, rng);
    p.b_g = init_bias(hidden_dim);
    p.w_ix = init_weight(hidden_dim, input_dim, rng);
    p.w_ih = init_weight(hidden_dim, hidden_dim, rng);
    p.b_i = init_bias(hidden_dim);
    p.w_fx = init_weight(hidden_dim, input_dim, rng);
    p.w_fh = init_weight(hidden_dim, hidden_dim, rng);
    p.b_f = init_bias(hidden_dim);
    p.w_ox = init_weight(hidden_dim, input_dim, rng);
    p.w_oh = init_weight(hidden_dim, hidden_dim, rng);
    p.b_o = init_bias(hidden_dim);
    return p;
  }

  static LstmParams zeros(std::size_t input_dim, std::size_t hidden_dim) {
    LstmParams p;
    p.w_gx = Tensor({hidden_dim, input_dim});
    p.w_gh = Tensor({hidden_dim, hidden_dim});
    p.b_g = Tensor({hidden_dim});
    p.w_ix = Tensor({hidden_dim, input_dim});
    p.w_ih = Tensor({hidden_dim, hidden_dim});
    p.b_i = Tensor({hidden_dim});
    p.w_fx = Tensor({hidden_dim, input_dim});
    p.w_fh = Tensor({hidden_dim, hidden_dim});
    p.b_f = Tensor({hidden_dim});
    p.w_ox = Tensor({hidden_dim, input_dim});
    p.w_oh = Tensor({hidden_dim, hidden_dim});
    p.b_o = Tensor({hidden_dim});
    return p;
  }

  // Fixed traversal order; serialization, binding and optimizer slots all
  // rely on it.
  template <class F>
  void for_each(F&& f) {
    f("w_gx", w_gx); f("w_gh", w_gh); f("b_g", b_g);
    f("w_ix", w_ix); f("w_ih", w_ih); f("b_i", b_i);
    f("w_fx", w_fx); f("w_fh", w_fh); f("b_f", b_f);
    f("w_ox", w_ox); f("w_oh", w_oh); f("b_o", b_o);
  }
  template <class F>
  void for_each(F&& f) const {
    f("w_gx", w_gx); f("w_gh", w_gh); f("b_g", b_g);
    f("w_ix", w_ix); f("w_ih", w_ih); f("b_i", b_i);
    f("w_fx", w_fx); f("w_fh", w_fh); f("b_f", b_f);
    f("w_ox", w_ox); f("w_oh", w_oh); f("b_o", b_o);
  }
};

// Gated recursive cell combining a left and right child of dimension d.
// U weighs the update gates over [h'; left; right], W produces the
// candidate from the reset-gated children, G produces the reset gates.
struct TreeCellParams {
  Tensor u;  // [3d x 3d]
  Tensor w;  // [d x 2d]
  Tensor g;  // [2d x 2d]

  std::size_t dim() const { return w.rows(); }

  static TreeCellParams init(std::size_t d, Rng& rng) {
    return {init_weight(3 * d, 3 * d, rng), init_weight(d, 2 * d, rng),
            init_weight(2 * d, 2 * d, rng)};
  }

  static TreeCellParams zeros(std::size_t d) {
    return {Tensor({3 * d, 3 * d}), Tensor({d, 2 * d}), Tensor({2 * d, 2 * d})};
  }

  template <class F>
  void for_each(F&& f) {
    f("u", u); f("w", w); f("g", g);
  }
  template <class F>
  void for_each(F&& f) const {
    f("u", u); f("w", w); f("g", g);
  }
};

// ---------------------------------------------------------------------------
// Context-bound views of the parameter containers. `Bind` maps a parameter
// tensor to the context's value type: Tape::param for training, a plain
// copy for eager evaluation.
// ---------------------------------------------------------------------------

template <class Ctx>
struct LstmVars {
  using V = typename Ctx::value_type;
  V w_gx, w_gh, b_g;
  V w_ix, w_ih, b_i;
  V w_fx, w_fh, b_f;
  V w_ox, w_oh, b_o;
  std::size_t hidden_dim = 0;
};

template <class Ctx, class Bind>
LstmVars<Ctx> bind_lstm(const LstmParams& p, Bind&& bind) {
  LstmVars<Ctx> v{bind(p.w_gx), bind(p.w_gh), bind(p.b_g),
                  bind(p.w_ix), bind(p.w_ih), bind(p.b_i),
                  bind(p.w_fx), bind(p.w_fh), bind(p.b_f),
                  bind(p.w_ox), bind(p.w_oh), bind(p.b_o),
                  p.hidden_dim()};
  return v;
}

template <class Ctx>
struct TreeCellVars {
  using V = typename Ctx::value_type;
  V u, w, g;
  std::size_t dim = 0;
};

template <class Ctx, class Bind>
TreeCellVars<Ctx> bind_tree_cell(const TreeCellParams& p, Bind&& bind) {
  return TreeCellVars<Ctx>{bind(p.u), bind(p.w), bind(p.g), p.dim()};
}

// ---------------------------------------------------------------------------
// Layer forward passes
// ---------------------------------------------------------------------------

template <class Ctx>
typename Ctx::value_type affine(Ctx& cx, const typename Ctx::value_type& w,
                                const typename Ctx::value_type& b,
                                const typename Ctx::value_type& x) {
  return cx.add(cx.matmul(w, x), b);
}

template <class Ctx>
struct LstmState {
  typename Ctx::value_type h, s;
};

// One LSTM step:
//   g = tanh(w_gx x + w_gh h + b_g)         candidate
//   i, f, o = sigmoid(...)                  gates
//   s = g (*) i + s_prev (*) f              cell state
//   h = tanh(s (*) o)                       emitted output
template <class Ctx>
LstmState<Ctx> lstm_step(Ctx& cx, const LstmVars<Ctx>& p,
                         const typename Ctx::value_type& x,
                         const typename Ctx::value_type& h_prev,
                         const typename Ctx::value_type& s_prev) {
  auto g = cx.tanh(cx.add(cx.add(cx.matmul(p.w_gx, x), cx.matmul(p.w_gh, h_prev)), p.b_g));
  auto i =
      cx.sigmoid(cx.add(cx.add(cx.matmul(p.w_ix, x), cx.matmul(p.w_ih, h_prev)), p.b_i));
  auto f =
      cx.sigmoid(cx.add(cx.add(cx.matmul(p.w_fx, x), cx.matmul(p.w_fh, h_prev)), p.b_f));
  auto o =
      cx.sigmoid(cx.add(cx.add(cx.matmul(p.w_ox, x), cx.matmul(p.w_oh, h_prev)), p.b_o));
  auto s = cx.add(cx.mul(g, i), cx.mul(s_prev, f));
  auto h = cx.tanh(cx.mul(s, o));
  return {h, s};
}

// Runs the sequence left-to-right and right-to-left from zero initial
// states; position t yields [fwd_h_t ; bwd_h_t].
template <class Ctx>
std::vector<typename Ctx::value_type> bilstm(
    Ctx& cx, const LstmVars<Ctx>& fwd, const LstmVars<Ctx>& bwd,
    std::span<const typename Ctx::value_type> xs) {
  using V = typename Ctx::value_type;
  if (xs.empty()) throw ContractError("bilstm: empty input sequence");
  const std::size_t n = xs.size();

  V fh = cx.leaf(Tensor({fwd.hidden_dim}));
  V fs = cx.leaf(Tensor({fwd.hidden_dim}));
  std::vector<V> fhs;
  fhs.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    LstmState<Ctx> st = lstm_step(cx, fwd, xs[t], fh, fs);
    fh = st.h;
    fs = st.s;
    fhs.push_back(fh);
  }

  V bh = cx.leaf(Tensor({bwd.hidden_dim}));
  V bs = cx.leaf(Tensor({bwd.hidden_dim}));
  std::vector<V> bhs(n, bh);
  for (std::size_t t = n; t-- > 0;) {
    LstmState<Ctx> st = lstm_step(cx, bwd, xs[t], bh, bs);
    bh = st.h;
    bs = st.s;
    bhs[t] = bh;
  }

  std::vector<V> out;
  out.reserve(n);
  for (std::size_t t = 0; t < n; ++t) out.push_back(cx.concat2(fhs[t], bhs[t]));
  return out;
}

// Gated recursive composition of two children:
//   [r_L; r_R] = sigmoid(G [left; right])
//   h'         = tanh(W [r_L (*) left ; r_R (*) right])
//   [z_N; z_L; z_R] = sigmoid(U [h'; left; right])
//   out        = z_N (*) h' + z_L (*) left + z_R (*) right
template <class Ctx>
typename Ctx::value_type tree_cell(Ctx& cx, const TreeCellVars<Ctx>& p,
                                   const typename Ctx::value_type& left,
                                   const typename Ctx::value_type& right) {
  const std::size_t d = p.dim;
  auto r = cx.sigmoid(cx.matmul(p.g, cx.concat2(left, right)));
  auto r_l = cx.slice(r, 0, d);
  auto r_r = cx.slice(r, d, d);
  auto hp = cx.tanh(cx.matmul(p.w, cx.concat2(cx.mul(r_l, left), cx.mul(r_r, right))));
  auto z = cx.sigmoid(cx.matmul(p.u, cx.concat3(hp, left, right)));
  auto z_n = cx.slice(z, 0, d);
  auto z_l = cx.slice(z, d, d);
  auto z_r = cx.slice(z, 2 * d, d);
  return cx.add(cx.add(cx.mul(z_n, hp), cx.mul(z_l, left)), cx.mul(z_r, right));
}

// Copies a tensor into an eager context value; binder counterpart of
// Tape::param for EvalCtx.
struct EvalBind {
  Tensor operator()(const Tensor& t) const { return t; }
};

}  // namespace deepstack
