#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "deepstack/layers.hpp"
#include "deepstack/segmenter.hpp"
#include "deepstack/tensor.hpp"

namespace deepstack {

enum class StackerVariant { kGaussian, kConcatenate, kSequence, kTree, kBagging };

inline std::string variant_name(StackerVariant v) {
  switch (v) {
    case StackerVariant::kGaussian: return "gaussian";
    case StackerVariant::kConcatenate: return "concatenate";
    case StackerVariant::kSequence: return "sequence";
    case StackerVariant::kTree: return "tree";
    case StackerVariant::kBagging: return "bagging";
  }
  throw ConfigError("unknown stacker variant");
}

inline StackerVariant parse_variant(std::string_view name) {
  if (name == "gaussian") return StackerVariant::kGaussian;
  if (name == "concatenate") return StackerVariant::kConcatenate;
  if (name == "sequence") return StackerVariant::kSequence;
  if (name == "tree") return StackerVariant::kTree;
  if (name == "bagging") return StackerVariant::kBagging;
  throw ConfigError("unknown stacker variant: " + std::string(name));
}

struct StackerConfig {
  StackerVariant variant = StackerVariant::kBagging;
  std::size_t model_count = 1;
  std::size_t target_index = 0;         // which model is the target-domain model
  double sigma = 1.0;                   // gaussian kernel width
  std::size_t seq_hidden = 16;          // hidden size of the weighting Bi-LSTM
  std::vector<std::size_t> model_order; // empty means identity
  std::vector<double> sigma_grid = {0.1, 0.5, 1.0, 2.0, 5.0};

  std::vector<std::size_t> order() const {
    if (!model_order.empty()) return model_order;
    std::vector<std::size_t> id(model_count);
    std::iota(id.begin(), id.end(), 0);
    return id;
  }

  void validate() const {
    if (model_count == 0) throw ConfigError("stacker config: model_count must be positive");
    if (target_index >= model_count) {
      throw ConfigError("stacker config: target_index " + std::to_string(target_index) +
                        " out of range for " + std::to_string(model_count) + " models");
    }
    if (sigma <= 0.0) throw ConfigError("stacker config: sigma must be positive");
    if (seq_hidden == 0) throw ConfigError("stacker config: seq_hidden must be positive");
    if (!model_order.empty()) {
      if (model_order.size() != model_count) {
        throw ConfigError("stacker config: model_order must list every model once");
      }
      std::vector<char> seen(model_count, 0);
      for (std::size_t i : model_order) {
        if (i >= model_count || seen[i]) {
          throw ConfigError("stacker config: model_order is not a permutation");
        }
        seen[i] = 1;
      }
    }
    if (variant == StackerVariant::kGaussian && sigma_grid.empty()) {
      throw ConfigError("stacker config: sigma grid must not be empty");
    }
    for (double s : sigma_grid) {
      if (s <= 0.0) throw ConfigError("stacker config: sigma grid values must be positive");
    }
  }
};

// ---------------------------------------------------------------------------
// Learned parameters per variant
// ---------------------------------------------------------------------------

struct ConcatStackParams {
  Tensor w1;   // [d x 2d]
  Tensor w2;   // [d x md]
  Tensor w_g;  // [d x d], output layer g
  Tensor b_g;  // [d]

  static ConcatStackParams init(std::size_t m, std::size_t d, Rng& rng) {
    return {init_weight(d, 2 * d, rng), init_weight(d, m * d, rng), init_weight(d, d, rng),
            init_bias(d)};
  }
  static ConcatStackParams zeros(std::size_t m, std::size_t d) {
    return {Tensor({d, 2 * d}), Tensor({d, m * d}), Tensor({d, d}), Tensor({d})};
  }

  template <class F>
  void for_each(F&& f) {
    f("w1", w1); f("w2", w2); f("w_g", w_g); f("b_g", b_g);
  }
  template <class F>
  void for_each(F&& f) const {
    f("w1", w1); f("w2", w2); f("w_g", w_g); f("b_g", b_g);
  }
};

struct SequenceStackParams {
  LstmParams fwd, bwd;  // input d, hidden seq_hidden
  Tensor proj_w;        // [d x 2*seq_hidden]
  Tensor proj_b;        // [d]

  static SequenceStackParams init(std::size_t d, std::size_t seq_hidden, Rng& rng) {
    SequenceStackParams p;
    p.fwd = LstmParams::init(d, seq_hidden, rng);
    p.bwd = LstmParams::init(d, seq_hidden, rng);
    p.proj_w = init_weight(d, 2 * seq_hidden, rng);
    p.proj_b = init_bias(d);
    return p;
  }
  static SequenceStackParams zeros(std::size_t d, std::size_t seq_hidden) {
    SequenceStackParams p;
    p.fwd = LstmParams::zeros(d, seq_hidden);
    p.bwd = LstmParams::zeros(d, seq_hidden);
    p.proj_w = Tensor({d, 2 * seq_hidden});
    p.proj_b = Tensor({d});
    return p;
  }

  template <class F>
  void for_each(F&& f) {
    fwd.for_each([&](const char* n, Tensor& t) { f((std::string("fwd.") + n).c_str(), t); });
    bwd.for_each([&](const char* n, Tensor& t) { f((std::string("bwd.") + n).c_str(), t); });
    f("proj_w", proj_w);
    f("proj_b", proj_b);
  }
  template <class F>
  void for_each(F&& f) const {
    fwd.for_each([&](const char* n, const Tensor& t) {
      f((std::string("fwd.") + n).c_str(), t);
    });
    bwd.for_each([&](const char* n, const Tensor& t) {
      f((std::string("bwd.") + n).c_str(), t);
    });
    f("proj_w", proj_w);
    f("proj_b", proj_b);
  }
};

// One cell per recursive layer; cells within a layer share parameters.
struct TreeStackParams {
  std::vector<TreeCellParams> layers;  // m - 1 entries

  static TreeStackParams init(std::size_t m, std::size_t d, Rng& rng) {
    TreeStackParams p;
    for (std::size_t l = 0; l + 1 < m; ++l) p.layers.push_back(TreeCellParams::init(d, rng));
    return p;
  }
  static TreeStackParams zeros(std::size_t m, std::size_t d) {
    TreeStackParams p;
    for (std::size_t l = 0; l + 1 < m; ++l) p.layers.push_back(TreeCellParams::zeros(d));
    return p;
  }

  template <class F>
  void for_each(F&& f) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      std::string prefix = "layer" + std::to_string(l) + ".";
      layers[l].for_each([&](const char* n, Tensor& t) { f((prefix + n).c_str(), t); });
    }
  }
  template <class F>
  void for_each(F&& f) const {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      std::string prefix = "layer" + std::to_string(l) + ".";
      layers[l].for_each([&](const char* n, const Tensor& t) { f((prefix + n).c_str(), t); });
    }
  }
};

using StackerParams =
    std::variant<std::monostate, ConcatStackParams, SequenceStackParams, TreeStackParams>;

// A trained stacker: configuration plus variant-specific parameters.
// Gaussian and bagging variants carry no parameters.
struct Stacker {
  StackerConfig config;
  StackerParams params;

  static Stacker init(StackerConfig config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    Stacker s;
    switch (config.variant) {
      case StackerVariant::kConcatenate:
        s.params = ConcatStackParams::init(config.model_count, kNumTags, rng);
        break;
      case StackerVariant::kSequence:
        s.params = SequenceStackParams::init(kNumTags, config.seq_hidden, rng);
        break;
      case StackerVariant::kTree:
        s.params = TreeStackParams::init(config.model_count, kNumTags, rng);
        break;
      case StackerVariant::kGaussian:
      case StackerVariant::kBagging:
        break;
    }
    s.config = std::move(config);
    return s;
  }

  template <class F>
  void for_each_param(F&& f) {
    if (auto* c = std::get_if<ConcatStackParams>(&params)) c->for_each(f);
    if (auto* q = std::get_if<SequenceStackParams>(&params)) q->for_each(f);
    if (auto* t = std::get_if<TreeStackParams>(&params)) t->for_each(f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    if (const auto* c = std::get_if<ConcatStackParams>(&params)) c->for_each(f);
    if (const auto* q = std::get_if<SequenceStackParams>(&params)) q->for_each(f);
    if (const auto* t = std::get_if<TreeStackParams>(&params)) t->for_each(f);
  }
};

// ---------------------------------------------------------------------------
// Context-bound views
// ---------------------------------------------------------------------------

template <class Ctx>
struct ConcatStackVars {
  using V = typename Ctx::value_type;
  V w1, w2, w_g, b_g;
};

template <class Ctx>
struct SequenceStackVars {
  LstmVars<Ctx> fwd, bwd;
  typename Ctx::value_type proj_w, proj_b;
};

template <class Ctx>
struct TreeStackVars {
  std::vector<TreeCellVars<Ctx>> layers;
};

template <class Ctx>
using StackVars = std::variant<std::monostate, ConcatStackVars<Ctx>, SequenceStackVars<Ctx>,
                               TreeStackVars<Ctx>>;

template <class Ctx, class Bind>
StackVars<Ctx> bind_stacker(const Stacker& s, Bind&& bind) {
  if (const auto* c = std::get_if<ConcatStackParams>(&s.params)) {
    return ConcatStackVars<Ctx>{bind(c->w1), bind(c->w2), bind(c->w_g), bind(c->b_g)};
  }
  if (const auto* q = std::get_if<SequenceStackParams>(&s.params)) {
    return SequenceStackVars<Ctx>{bind_lstm<Ctx>(q->fwd, bind), bind_lstm<Ctx>(q->bwd, bind),
                                  bind(q->proj_w), bind(q->proj_b)};
  }
  if (const auto* t = std::get_if<TreeStackParams>(&s.params)) {
    TreeStackVars<Ctx> v;
    for (const TreeCellParams& cell : t->layers) {
      v.layers.push_back(bind_tree_cell<Ctx>(cell, bind));
    }
    return v;
  }
  return std::monostate{};
}

// ---------------------------------------------------------------------------
// Weighting building blocks
// ---------------------------------------------------------------------------

// Softmax across the list index, taken independently for every vector
// dimension. The per-dimension maximum is subtracted as a detached shift;
// softmax is invariant under uniform shifts so gradients are unaffected.
template <class Ctx>
std::vector<typename Ctx::value_type> per_dim_softmax(
    Ctx& cx, std::span<const typename Ctx::value_type> es) {
  using V = typename Ctx::value_type;
  if (es.empty()) throw DimensionError("per_dim_softmax: empty list");
  Tensor mx = cx.val(es[0]);
  for (std::size_t j = 1; j < es.size(); ++j) {
    const Tensor& e = cx.val(es[j]);
    for (std::size_t k = 0; k < mx.size(); ++k) mx[k] = std::max(mx[k], e[k]);
  }
  V shift = cx.leaf(mx);
  std::vector<V> ex;
  ex.reserve(es.size());
  for (const V& e : es) ex.push_back(cx.exp(cx.sub(e, shift)));
  V denom = ex[0];
  for (std::size_t j = 1; j < ex.size(); ++j) denom = cx.add(denom, ex[j]);
  std::vector<V> alpha;
  alpha.reserve(es.size());
  for (const V& x : ex) alpha.push_back(cx.div(x, denom));
  return alpha;
}

template <class Ctx>
typename Ctx::value_type weighted_vote(Ctx& cx,
                                       std::span<const typename Ctx::value_type> alpha,
                                       std::span<const typename Ctx::value_type> hs) {
  auto z = cx.mul(alpha[0], hs[0]);
  for (std::size_t j = 1; j < hs.size(); ++j) z = cx.add(z, cx.mul(alpha[j], hs[j]));
  return z;
}

// Normalized similarity weights between every model output and the target
// model's output:
//   w_j = exp(-||h_j - h_t|| / (2 sigma^2)) / Z
// The norm is unsquared. The target's distance is zero, so Z >= 1 and the
// target weight is always the maximum.
inline std::vector<double> gaussian_weights(std::span<const Tensor> h,
                                            std::size_t target_index, double sigma) {
  if (h.empty()) throw ContractError("gaussian_weights: need at least one model output");
  if (sigma <= 0.0) throw ConfigError("gaussian_weights: sigma must be positive");
  if (target_index >= h.size()) {
    throw ConfigError("gaussian_weights: target index out of range");
  }
  const Tensor& target = h[target_index];
  std::vector<double> w(h.size());
  double z = 0.0;
  for (std::size_t j = 0; j < h.size(); ++j) {
    double dist = ops::euclidean_norm(ops::sub(h[j], target));
    w[j] = std::exp(-dist / (2.0 * sigma * sigma));
    z += w[j];
  }
  for (double& x : w) x /= z;
  return w;
}

// ---------------------------------------------------------------------------
// Variant forward passes. Each returns the pre-softmax combination z; the
// emitted distribution is softmax(z).
// ---------------------------------------------------------------------------

namespace detail {

template <class Ctx>
typename Ctx::value_type gaussian_logits(Ctx& cx, const StackerConfig& config,
                                         std::span<const typename Ctx::value_type> hs) {
  std::vector<Tensor> plain;
  plain.reserve(hs.size());
  for (const auto& h : hs) plain.push_back(cx.val(h));
  // Weights are similarity constants, not differentiated through.
  std::vector<double> w = gaussian_weights(plain, config.target_index, config.sigma);
  auto z = cx.scale(hs[0], w[0]);
  for (std::size_t j = 1; j < hs.size(); ++j) z = cx.add(z, cx.scale(hs[j], w[j]));
  return z;
}

template <class Ctx>
typename Ctx::value_type bagging_logits(Ctx& cx,
                                        std::span<const typename Ctx::value_type> hs) {
  auto z = hs[0];
  for (std::size_t j = 1; j < hs.size(); ++j) z = cx.add(z, hs[j]);
  return cx.scale(z, 1.0 / static_cast<double>(hs.size()));
}

template <class Ctx>
typename Ctx::value_type concat_logits(Ctx& cx, const ConcatStackVars<Ctx>& p,
                                       std::span<const typename Ctx::value_type> hs) {
  using V = typename Ctx::value_type;
  V hcat = cx.concat(hs);
  V mixed = cx.matmul(p.w2, hcat);
  std::vector<V> es;
  es.reserve(hs.size());
  for (const V& h : hs) es.push_back(cx.tanh(cx.matmul(p.w1, cx.concat2(mixed, h))));
  std::vector<V> alpha = per_dim_softmax(cx, std::span<const V>(es));
  V s = weighted_vote(cx, std::span<const V>(alpha), hs);
  return cx.tanh(affine(cx, p.w_g, p.b_g, s));
}

template <class Ctx>
typename Ctx::value_type sequence_logits(Ctx& cx, const SequenceStackVars<Ctx>& p,
                                         std::span<const typename Ctx::value_type> hs) {
  using V = typename Ctx::value_type;
  std::vector<V> states = bilstm(cx, p.fwd, p.bwd, hs);
  std::vector<V> es;
  es.reserve(hs.size());
  for (const V& st : states) es.push_back(affine(cx, p.proj_w, p.proj_b, st));
  std::vector<V> alpha = per_dim_softmax(cx, std::span<const V>(es));
  return weighted_vote(cx, std::span<const V>(alpha), hs);
}

template <class Ctx>
typename Ctx::value_type tree_logits(Ctx& cx, const TreeStackVars<Ctx>& p,
                                     std::span<const typename Ctx::value_type> hs) {
  using V = typename Ctx::value_type;
  if (p.layers.size() + 1 != hs.size()) {
    throw DimensionError("tree stacker: expected " + std::to_string(hs.size() - 1) +
                         " layers, got " + std::to_string(p.layers.size()));
  }
  std::vector<V> level(hs.begin(), hs.end());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    std::vector<V> next;
    next.reserve(level.size() - 1);
    for (std::size_t j = 0; j + 1 < level.size(); ++j) {
      next.push_back(tree_cell(cx, p.layers[l], level[j], level[j + 1]));
    }
    level = std::move(next);
  }
  return level[0];
}

}  // namespace detail

// Pre-softmax combination of the m model outputs for one character.
// With a single model every variant degenerates to the model itself, so the
// output distribution is exactly softmax(h_1).
template <class Ctx>
typename Ctx::value_type stack_logits(Ctx& cx, const StackerConfig& config,
                                      const StackVars<Ctx>& vars,
                                      std::span<const typename Ctx::value_type> hs) {
  using V = typename Ctx::value_type;
  if (hs.size() != config.model_count) {
    throw DimensionError("stack_logits: expected " + std::to_string(config.model_count) +
                         " model outputs, got " + std::to_string(hs.size()));
  }
  if (hs.size() == 1) return hs[0];
  switch (config.variant) {
    case StackerVariant::kGaussian:
      return detail::gaussian_logits(cx, config, hs);
    case StackerVariant::kBagging:
      return detail::bagging_logits(cx, hs);
    case StackerVariant::kConcatenate:
      return detail::concat_logits(cx, std::get<ConcatStackVars<Ctx>>(vars), hs);
    case StackerVariant::kSequence: {
      std::vector<V> ordered;
      ordered.reserve(hs.size());
      for (std::size_t i : config.order()) ordered.push_back(hs[i]);
      return detail::sequence_logits(cx, std::get<SequenceStackVars<Ctx>>(vars),
                                     std::span<const V>(ordered));
    }
    case StackerVariant::kTree: {
      std::vector<V> ordered;
      ordered.reserve(hs.size());
      for (std::size_t i : config.order()) ordered.push_back(hs[i]);
      return detail::tree_logits(cx, std::get<TreeStackVars<Ctx>>(vars),
                                 std::span<const V>(ordered));
    }
  }
  throw ConfigError("unknown stacker variant");
}

// ---------------------------------------------------------------------------
// Plain (eager) entry points
// ---------------------------------------------------------------------------

inline Tensor stack_combined(const Stacker& s, std::span<const Tensor> h) {
  EvalCtx cx;
  StackVars<EvalCtx> vars = bind_stacker<EvalCtx>(s, EvalBind{});
  return stack_logits(cx, s.config, vars, h);
}

inline Tensor stack_distribution(const Stacker& s, std::span<const Tensor> h) {
  return ops::softmax(stack_combined(s, h));
}

inline Tensor gaussian_stack(std::span<const Tensor> h, const StackerConfig& config) {
  Stacker s;
  s.config = config;
  s.config.variant = StackerVariant::kGaussian;
  s.config.model_count = h.size();
  return stack_distribution(s, h);
}

inline Tensor bagging_stack(std::span<const Tensor> h) {
  Stacker s;
  s.config.variant = StackerVariant::kBagging;
  s.config.model_count = h.size();
  return stack_distribution(s, h);
}

inline Tensor concat_stack(std::span<const Tensor> h, const ConcatStackParams& params) {
  Stacker s;
  s.config.variant = StackerVariant::kConcatenate;
  s.config.model_count = h.size();
  s.params = params;
  return stack_distribution(s, h);
}

inline Tensor sequence_stack(std::span<const Tensor> h, const SequenceStackParams& params,
                             const StackerConfig& config) {
  Stacker s;
  s.config = config;
  s.config.variant = StackerVariant::kSequence;
  s.config.model_count = h.size();
  s.config.validate();
  s.params = params;
  return stack_distribution(s, h);
}

inline Tensor tree_stack(std::span<const Tensor> h, const TreeStackParams& params,
                         const StackerConfig& config) {
  Stacker s;
  s.config = config;
  s.config.variant = StackerVariant::kTree;
  s.config.model_count = h.size();
  s.config.validate();
  s.params = params;
  return stack_distribution(s, h);
}

// ---------------------------------------------------------------------------
// A stacker together with its frozen domain models, usable as a segmenter.
// ---------------------------------------------------------------------------

struct StackedModel {
  std::vector<DomainModel> models;
  Stacker stacker;
};

// Holds the bound views once so corpus-scale scoring does not rebind per
// sentence.
class StackedScorer {
 public:
  explicit StackedScorer(const StackedModel& sm) : sm_(&sm) {
    for (const DomainModel& m : sm.models) {
      model_vars_.push_back(bind_domain_model<EvalCtx>(m, EvalBind{}));
    }
    stack_vars_ = bind_stacker<EvalCtx>(sm.stacker, EvalBind{});
  }

  // Combined pre-softmax logits per character of a preprocessed sentence.
  std::vector<Tensor> operator()(const std::u32string& processed) const {
    EvalCtx cx;
    const std::size_t m = sm_->models.size();
    std::vector<std::vector<Tensor>> per_model(m);
    for (std::size_t j = 0; j < m; ++j) {
      per_model[j] =
          forward_logits(cx, model_vars_[j], sm_->models[j].ids_for(processed));
    }
    std::vector<Tensor> out;
    out.reserve(processed.size());
    std::vector<Tensor> hs(m);
    for (std::size_t t = 0; t < processed.size(); ++t) {
      for (std::size_t j = 0; j < m; ++j) hs[j] = per_model[j][t];
      out.push_back(stack_logits(cx, sm_->stacker.config, stack_vars_, hs));
    }
    return out;
  }

 private:
  const StackedModel* sm_;
  std::vector<DomainModelVars<EvalCtx>> model_vars_;
  StackVars<EvalCtx> stack_vars_;
};

inline std::vector<std::u32string> segment(const StackedModel& sm, std::u32string_view text) {
  StackedScorer scorer(sm);
  return segment_with(scorer, text);
}

// ---------------------------------------------------------------------------
// Corpus-level scoring shared by training dev selection and the CLI.
// ---------------------------------------------------------------------------

template <class LogitsFn>
Scores evaluate_segmentation(const LogitsFn& fn, const Corpus& gold) {
  std::vector<std::vector<Span>> predicted;
  predicted.reserve(gold.size());
  for (const SegmentedSentence& s : gold) {
    std::vector<std::u32string> words = segment_with(fn, s.chars);
    std::vector<Span> spans;
    spans.reserve(words.size());
    std::size_t pos = 0;
    for (const std::u32string& w : words) {
      spans.emplace_back(pos, pos + w.size());
      pos += w.size();
    }
    predicted.push_back(std::move(spans));
  }
  return f1_score_spans(gold, predicted);
}

inline Scores evaluate(const DomainModel& m, const Corpus& gold) {
  EvalCtx cx;
  auto vars = bind_domain_model<EvalCtx>(m, EvalBind{});
  return evaluate_segmentation(
      [&](const std::u32string& processed) {
        return forward_logits(cx, vars, m.ids_for(processed));
      },
      gold);
}

inline Scores evaluate(const StackedModel& sm, const Corpus& gold) {
  StackedScorer scorer(sm);
  return evaluate_segmentation(scorer, gold);
}

}  // namespace deepstack
