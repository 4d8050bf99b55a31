#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deepstack/data.hpp"
#include "deepstack/segmenter.hpp"
#include "deepstack/stacking.hpp"
#include "deepstack/tape.hpp"

namespace deepstack {

// ---------------------------------------------------------------------------
// Optimizer. The update deviates from standard Adam: the numerator uses the
// raw gradient, and the denominator is sqrt(v_t - m_t^2) + mu. v - m^2 is
// clamped at zero before the root; with beta1 == beta2 it is provably
// non-negative, the clamp guards other settings.
// ---------------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.95;
  double beta2 = 0.95;
  double epsilon = 1e-2;  // step scale
  double mu = 1e-6;       // denominator smoothing
};

struct AdamState {
  Tensor m, v;
  std::size_t t = 0;

  static AdamState for_param(const Tensor& p) {
    return AdamState{Tensor(p.shape()), Tensor(p.shape()), 0};
  }
};

inline void adam_step(AdamState& state, Tensor& param, const Tensor& grad,
                      const AdamConfig& cfg = {}) {
  if (!param.same_shape(grad) || !state.m.same_shape(param)) {
    throw ContractError("adam_step: parameter, gradient and state shapes must match");
  }
  ++state.t;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    state.m[i] = m;
    state.v[i] = v;
    double moment_gap = v - m * m;
    if (moment_gap < 0.0) moment_gap = 0.0;
    param[i] -= cfg.epsilon * g / (std::sqrt(moment_gap) + cfg.mu);
  }
  ops::ensure_finite(param, "adam_step");
}

class Adam {
 public:
  explicit Adam(std::vector<Tensor*> params, AdamConfig cfg = {})
      : cfg_(cfg), params_(std::move(params)) {
    states_.reserve(params_.size());
    for (Tensor* p : params_) states_.push_back(AdamState::for_param(*p));
  }

  void step(std::span<const Tensor> grads) {
    if (grads.size() != params_.size()) {
      throw ContractError("Adam::step: gradient count does not match parameter count");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      adam_step(states_[i], *params_[i], grads[i], cfg_);
    }
  }

  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor*> params_;
  std::vector<AdamState> states_;
};

// ---------------------------------------------------------------------------
// Negative log-likelihood over one sentence, computed from tag logits via
// log-sum-exp.
// ---------------------------------------------------------------------------

inline double nll_loss(std::span<const Tensor> logits, std::span<const Tag> gold) {
  if (logits.size() != gold.size()) {
    throw ContractError("nll_loss: " + std::to_string(logits.size()) + " positions vs " +
                        std::to_string(gold.size()) + " gold tags");
  }
  double acc = 0.0;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    acc -= ops::log_softmax(logits[t])[static_cast<std::size_t>(gold[t])];
  }
  return acc;
}

inline Value nll_loss_node(Tape& tape, std::span<const Value> logits,
                           std::span<const Tag> gold) {
  if (logits.size() != gold.size()) {
    throw ContractError("nll_loss: " + std::to_string(logits.size()) + " positions vs " +
                        std::to_string(gold.size()) + " gold tags");
  }
  Value acc = tape.leaf(Tensor::scalar(0.0));
  for (std::size_t t = 0; t < logits.size(); ++t) {
    acc = tape.sub(acc,
                   tape.pick(tape.log_softmax(logits[t]), static_cast<std::size_t>(gold[t])));
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Training configuration and the per-epoch metrics record
// ---------------------------------------------------------------------------

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean per-sentence NLL over the epoch
  bool has_dev = false;
  Scores dev;
};

inline std::string format_epoch_line(const EpochStats& s) {
  char buf[160];
  if (s.has_dev) {
    std::snprintf(buf, sizeof(buf), "epoch %zu loss %.6f dev_p %.4f dev_r %.4f dev_f1 %.4f",
                  s.epoch, s.train_loss, s.dev.precision, s.dev.recall, s.dev.f1);
  } else {
    std::snprintf(buf, sizeof(buf), "epoch %zu loss %.6f", s.epoch, s.train_loss);
  }
  return buf;
}

struct TrainConfig {
  std::size_t batch_size = 15;
  std::size_t max_epochs = 30;
  double dev_fraction = 0.10;
  std::uint64_t seed = 42;
  std::size_t embed_dim = 100;
  std::size_t hidden_dim = 100;
  AdamConfig adam;
  std::function<void(const EpochStats&)> on_epoch;

  void validate() const {
    if (batch_size == 0) throw ConfigError("train config: batch_size must be positive");
    if (max_epochs == 0) throw ConfigError("train config: max_epochs must be positive");
    if (dev_fraction <= 0.0 || dev_fraction >= 1.0) {
      throw ConfigError("train config: dev_fraction must lie in (0, 1)");
    }
    if (embed_dim == 0 || hidden_dim == 0) {
      throw ConfigError("train config: model dimensions must be positive");
    }
  }
};

namespace detail {

// Seeded shuffle, then the leading floor(dev_fraction * n) sentences become
// the development set.
inline std::pair<Corpus, Corpus> dev_split(const Corpus& corpus, double dev_fraction,
                                           Rng& rng) {
  Corpus shuffled = corpus;
  rng.shuffle(shuffled);
  const auto dev_n =
      static_cast<std::size_t>(dev_fraction * static_cast<double>(shuffled.size()));
  Corpus dev(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(dev_n));
  Corpus train(shuffled.begin() + static_cast<std::ptrdiff_t>(dev_n), shuffled.end());
  return {std::move(train), std::move(dev)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Domain-model pre-training
// ---------------------------------------------------------------------------

inline DomainModel train_domain(const Corpus& corpus, const TrainConfig& config,
                                std::string domain_name = "domain") {
  config.validate();
  if (corpus.empty()) throw DataError("train_domain: empty corpus");

  const Corpus processed = preprocess(corpus);
  Rng rng(config.seed);
  auto [train, dev] = detail::dev_split(processed, config.dev_fraction, rng);
  if (train.empty()) throw DataError("train_domain: no training sentences after dev split");

  CharVocab vocab = CharVocab::build(train);
  DomainModel model =
      DomainModel::init(std::move(domain_name), vocab, config.embed_dim, config.hidden_dim, rng);

  std::vector<std::vector<int>> ids;
  std::vector<std::vector<Tag>> tags;
  ids.reserve(train.size());
  tags.reserve(train.size());
  for (const SegmentedSentence& s : train) {
    ids.push_back(model.ids_for(s.chars));
    tags.push_back(gold_tags(s));
  }

  std::vector<Tensor*> params;
  model.for_each_param([&](const char*, Tensor& t) { params.push_back(&t); });
  Adam adam(params, config.adam);

  DomainModel best = model;
  double best_f1 = -1.0;
  const bool have_dev = !dev.empty();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<Tensor> grad_acc;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t idx = order[k];
        Tape tape;
        ParamBinder binder(tape);
        auto vars = bind_domain_model<Tape>(model, binder);
        auto logits = forward_logits(tape, vars, ids[idx]);
        Value loss = nll_loss_node(tape, std::span<const Value>(logits), tags[idx]);
        tape.backward(loss);
        loss_sum += tape.val(loss)[0];
        binder.accumulate(tape, grad_acc);
      }
      // The loss is the batch mean of per-sentence sums.
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (Tensor& g : grad_acc) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= inv;
      }
      adam.step(grad_acc);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(train.size());
    if (have_dev) {
      stats.has_dev = true;
      stats.dev = evaluate(model, dev);
      if (stats.dev.f1 > best_f1) {
        best_f1 = stats.dev.f1;
        best = model;
      }
    }
    if (config.on_epoch) config.on_epoch(stats);
  }

  // Without a dev set (tiny corpora) the final parameters are returned.
  return have_dev ? best : model;
}

// ---------------------------------------------------------------------------
// Stacker training over frozen domain models
// ---------------------------------------------------------------------------

namespace detail {

// cache[sentence][model][position] = frozen tag logits.
using FrozenLogits = std::vector<std::vector<std::vector<Tensor>>>;

inline FrozenLogits freeze_logits(const std::vector<DomainModel>& models, const Corpus& part) {
  EvalCtx cx;
  std::vector<DomainModelVars<EvalCtx>> vars;
  vars.reserve(models.size());
  for (const DomainModel& m : models) {
    vars.push_back(bind_domain_model<EvalCtx>(m, EvalBind{}));
  }
  FrozenLogits cache(part.size());
  for (std::size_t k = 0; k < part.size(); ++k) {
    cache[k].resize(models.size());
    for (std::size_t j = 0; j < models.size(); ++j) {
      cache[k][j] = forward_logits(cx, vars[j], models[j].ids_for(part[k].chars));
    }
  }
  return cache;
}

inline Scores eval_stacker_cached(const Stacker& stacker, const FrozenLogits& cache,
                                  const Corpus& part) {
  EvalCtx cx;
  StackVars<EvalCtx> vars = bind_stacker<EvalCtx>(stacker, EvalBind{});
  std::vector<std::vector<Span>> predicted(part.size());
  const std::size_t m = stacker.config.model_count;
  std::vector<Tensor> hs(m);
  for (std::size_t k = 0; k < part.size(); ++k) {
    std::vector<Tag> tags;
    tags.reserve(part[k].size());
    for (std::size_t t = 0; t < part[k].size(); ++t) {
      for (std::size_t j = 0; j < m; ++j) hs[j] = cache[k][j][t];
      tags.push_back(argmax_tag(stack_logits(cx, stacker.config, vars, hs)));
    }
    predicted[k] = bmes_decode(tags);
  }
  return f1_score_spans(part, predicted);
}

}  // namespace detail

inline Stacker train_stack(const std::vector<DomainModel>& models, const Corpus& target_corpus,
                           StackerConfig stacker_config, const TrainConfig& config) {
  if (models.empty()) throw ConfigError("train_stack: need at least one domain model");
  for (const DomainModel& m : models) {
    if (m.out_b.size() != kNumTags) {
      throw ConfigError("train_stack: model '" + m.domain_name +
                        "' does not emit the shared tagset");
    }
  }
  stacker_config.model_count = models.size();
  stacker_config.validate();
  config.validate();
  if (target_corpus.empty()) throw DataError("train_stack: empty target corpus");

  const Corpus processed = preprocess(target_corpus);
  Rng rng(config.seed);
  auto [train, dev] = detail::dev_split(processed, config.dev_fraction, rng);
  if (train.empty()) throw DataError("train_stack: no training sentences after dev split");
  const bool have_dev = !dev.empty();

  Stacker stacker = Stacker::init(stacker_config, rng.next_u64());

  // The voting-only variant needs no training at all.
  if (stacker_config.variant == StackerVariant::kBagging) return stacker;

  // Domain models are frozen, so their per-position logits are constants;
  // compute them once.
  detail::FrozenLogits dev_cache = detail::freeze_logits(models, dev);

  if (stacker_config.variant == StackerVariant::kGaussian) {
    // Non-parametric: pick sigma from the grid by dev F1 (first best wins).
    double best_f1 = -1.0;
    double best_sigma = stacker_config.sigma_grid.front();
    for (double sigma : stacker_config.sigma_grid) {
      Stacker candidate = stacker;
      candidate.config.sigma = sigma;
      double f1 = have_dev
                      ? detail::eval_stacker_cached(candidate, dev_cache, dev).f1
                      : 0.0;
      if (f1 > best_f1) {
        best_f1 = f1;
        best_sigma = sigma;
      }
    }
    stacker.config.sigma = best_sigma;
    return stacker;
  }

  detail::FrozenLogits train_cache = detail::freeze_logits(models, train);
  std::vector<std::vector<Tag>> tags;
  tags.reserve(train.size());
  for (const SegmentedSentence& s : train) tags.push_back(gold_tags(s));

  std::vector<Tensor*> params;
  stacker.for_each_param([&](const char*, Tensor& t) { params.push_back(&t); });
  Adam adam(params, config.adam);

  Stacker best = stacker;
  double best_f1 = -1.0;

  const std::size_t m = models.size();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<Tensor> grad_acc;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t idx = order[k];
        Tape tape;
        ParamBinder binder(tape);
        StackVars<Tape> vars = bind_stacker<Tape>(stacker, binder);
        std::vector<Value> position_logits;
        position_logits.reserve(train[idx].size());
        std::vector<Value> hs(m);
        for (std::size_t t = 0; t < train[idx].size(); ++t) {
          for (std::size_t j = 0; j < m; ++j) hs[j] = tape.leaf(train_cache[idx][j][t]);
          position_logits.push_back(
              stack_logits(tape, stacker.config, vars, std::span<const Value>(hs)));
        }
        Value loss =
            nll_loss_node(tape, std::span<const Value>(position_logits), tags[idx]);
        tape.backward(loss);
        loss_sum += tape.val(loss)[0];
        binder.accumulate(tape, grad_acc);
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (Tensor& g : grad_acc) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= inv;
      }
      adam.step(grad_acc);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(train.size());
    if (have_dev) {
      stats.has_dev = true;
      stats.dev = detail::eval_stacker_cached(stacker, dev_cache, dev);
      if (stats.dev.f1 > best_f1) {
        best_f1 = stats.dev.f1;
        best = stacker;
      }
    }
    if (config.on_epoch) config.on_epoch(stats);
  }

  return have_dev ? best : stacker;
}

}  // namespace deepstack
