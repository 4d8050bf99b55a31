#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "deepstack/data.hpp"
#include "deepstack/layers.hpp"
#include "deepstack/tape.hpp"
#include "deepstack/tensor.hpp"

namespace deepstack {

// Position tags: begin / middle / end of a multi-character word, or a
// single-character word.
enum class Tag : int { kB = 0, kM = 1, kE = 2, kS = 3 };
inline constexpr std::size_t kNumTags = 4;

inline char tag_letter(Tag t) { return "BMES"[static_cast<int>(t)]; }

// Substitute characters for collapsed digit and Latin-letter runs.
inline constexpr char32_t kNumFlag = 0xE000;
inline constexpr char32_t kLatinFlag = 0xE001;

inline bool is_ascii_digit(char32_t c) { return c >= U'0' && c <= U'9'; }
inline bool is_latin_letter(char32_t c) {
  return (c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z');
}

// ---------------------------------------------------------------------------
// Preprocessing: every maximal run of decimal digits becomes kNumFlag and
// every maximal run of Latin letters becomes kLatinFlag; everything else
// passes through.
// ---------------------------------------------------------------------------

// One output character together with the input range it covers.
struct PreprocessUnit {
  char32_t ch;
  std::size_t begin;
  std::size_t end;
};

inline std::vector<PreprocessUnit> preprocess_units(std::u32string_view text) {
  std::vector<PreprocessUnit> units;
  units.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_ascii_digit(text[i])) {
      std::size_t j = i;
      while (j < text.size() && is_ascii_digit(text[j])) ++j;
      units.push_back({kNumFlag, i, j});
      i = j;
    } else if (is_latin_letter(text[i])) {
      std::size_t j = i;
      while (j < text.size() && is_latin_letter(text[j])) ++j;
      units.push_back({kLatinFlag, i, j});
      i = j;
    } else {
      units.push_back({text[i], i, i + 1});
      ++i;
    }
  }
  return units;
}

inline std::u32string preprocess(std::u32string_view text) {
  std::u32string out;
  for (const PreprocessUnit& u : preprocess_units(text)) out.push_back(u.ch);
  return out;
}

// Boundary-aware variant for gold-segmented text: runs are cut at word
// boundaries first, so a replacement never crosses a gold boundary.
inline SegmentedSentence preprocess(const SegmentedSentence& s) {
  std::vector<std::u32string> words;
  words.reserve(s.spans.size());
  for (const Span& sp : s.spans) {
    words.push_back(preprocess(std::u32string_view(s.chars).substr(sp.first, sp.second - sp.first)));
  }
  return SegmentedSentence::from_words(words);
}

inline Corpus preprocess(const Corpus& corpus) {
  Corpus out;
  out.reserve(corpus.size());
  for (const SegmentedSentence& s : corpus) out.push_back(preprocess(s));
  return out;
}

// ---------------------------------------------------------------------------
// BMES encoding and decoding
// ---------------------------------------------------------------------------

inline std::vector<Tag> bmes_encode(std::span<const std::size_t> word_lengths) {
  std::vector<Tag> tags;
  for (std::size_t len : word_lengths) {
    if (len == 0) throw ContractError("bmes_encode: word lengths must be positive");
    if (len == 1) {
      tags.push_back(Tag::kS);
    } else {
      tags.push_back(Tag::kB);
      for (std::size_t i = 0; i + 2 < len; ++i) tags.push_back(Tag::kM);
      tags.push_back(Tag::kE);
    }
  }
  return tags;
}

// Total over arbitrary tag sequences: a word starts at position 0 and at
// every B or S; words are the maximal runs in between.
inline std::vector<Span> bmes_decode(std::span<const Tag> tags) {
  std::vector<Span> spans;
  if (tags.empty()) return spans;
  std::size_t start = 0;
  for (std::size_t i = 1; i < tags.size(); ++i) {
    if (tags[i] == Tag::kB || tags[i] == Tag::kS) {
      spans.emplace_back(start, i);
      start = i;
    }
  }
  spans.emplace_back(start, tags.size());
  return spans;
}

inline std::vector<Tag> gold_tags(const SegmentedSentence& s) {
  return bmes_encode(s.word_lengths());
}

// ---------------------------------------------------------------------------
// Character vocabulary with reserved ids
// ---------------------------------------------------------------------------

class CharVocab {
 public:
  static constexpr int kUnkId = 0;
  static constexpr int kNumId = 1;
  static constexpr int kLatinId = 2;
  static constexpr char32_t kUnkChar = 0xFFFD;

  CharVocab() {
    chars_ = {kUnkChar, kNumFlag, kLatinFlag};
    map_[kNumFlag] = kNumId;
    map_[kLatinFlag] = kLatinId;
  }

  int add(char32_t c) {
    auto [it, inserted] = map_.try_emplace(c, static_cast<int>(chars_.size()));
    if (inserted) chars_.push_back(c);
    return it->second;
  }

  int lookup(char32_t c) const {
    auto it = map_.find(c);
    return it == map_.end() ? kUnkId : it->second;
  }

  std::size_t size() const { return chars_.size(); }

  char32_t char_at(std::size_t id) const {
    if (id >= chars_.size()) {
      throw VocabError("character id " + std::to_string(id) + " out of range (vocab size " +
                       std::to_string(chars_.size()) + ")");
    }
    return chars_[id];
  }

  // Characters are added in first-occurrence order over the preprocessed
  // corpus, which keeps vocab construction deterministic.
  static CharVocab build(const Corpus& preprocessed) {
    CharVocab v;
    for (const SegmentedSentence& s : preprocessed) {
      for (char32_t c : s.chars) v.add(c);
    }
    return v;
  }

 private:
  std::unordered_map<char32_t, int> map_;
  std::vector<char32_t> chars_;
};

// ---------------------------------------------------------------------------
// Domain model: characters -> embeddings -> Bi-LSTM -> 4 tag logits per
// position.
// ---------------------------------------------------------------------------

struct DomainModel {
  std::string domain_name;
  CharVocab vocab;
  std::size_t embed_dim = 100;
  std::size_t hidden_dim = 100;
  Tensor embeddings;  // [vocab x embed_dim]
  LstmParams fwd, bwd;
  Tensor out_w;  // [4 x 2*hidden_dim]
  Tensor out_b;  // [4]

  static DomainModel init(std::string name, CharVocab vocab, std::size_t embed_dim,
                          std::size_t hidden_dim, Rng& rng) {
    DomainModel m;
    m.domain_name = std::move(name);
    m.vocab = std::move(vocab);
    m.embed_dim = embed_dim;
    m.hidden_dim = hidden_dim;
    m.embeddings = init_weight(m.vocab.size(), embed_dim, rng);
    m.fwd = LstmParams::init(embed_dim, hidden_dim, rng);
    m.bwd = LstmParams::init(embed_dim, hidden_dim, rng);
    m.out_w = init_weight(kNumTags, 2 * hidden_dim, rng);
    m.out_b = init_bias(kNumTags);
    return m;
  }

  // Fixed parameter traversal order shared by the optimizer, the tape
  // binder and the serializer.
  template <class F>
  void for_each_param(F&& f) {
    f("embeddings", embeddings);
    fwd.for_each([&](const char* n, Tensor& t) { f((std::string("fwd.") + n).c_str(), t); });
    bwd.for_each([&](const char* n, Tensor& t) { f((std::string("bwd.") + n).c_str(), t); });
    f("out_w", out_w);
    f("out_b", out_b);
  }
  template <class F>
  void for_each_param(F&& f) const {
    f("embeddings", embeddings);
    fwd.for_each([&](const char* n, const Tensor& t) {
      f((std::string("fwd.") + n).c_str(), t);
    });
    bwd.for_each([&](const char* n, const Tensor& t) {
      f((std::string("bwd.") + n).c_str(), t);
    });
    f("out_w", out_w);
    f("out_b", out_b);
  }

  std::vector<int> ids_for(std::u32string_view processed) const {
    std::vector<int> ids;
    ids.reserve(processed.size());
    for (char32_t c : processed) ids.push_back(vocab.lookup(c));
    return ids;
  }
};

template <class Ctx>
struct DomainModelVars {
  using V = typename Ctx::value_type;
  V embeddings;
  LstmVars<Ctx> fwd, bwd;
  V out_w, out_b;
  std::size_t vocab_size = 0;
};

template <class Ctx, class Bind>
DomainModelVars<Ctx> bind_domain_model(const DomainModel& m, Bind&& bind) {
  return DomainModelVars<Ctx>{bind(m.embeddings),
                              bind_lstm<Ctx>(m.fwd, bind),
                              bind_lstm<Ctx>(m.bwd, bind),
                              bind(m.out_w),
                              bind(m.out_b),
                              m.vocab.size()};
}

// Per-position tag logits for a character-id sequence.
template <class Ctx>
std::vector<typename Ctx::value_type> forward_logits(Ctx& cx, const DomainModelVars<Ctx>& m,
                                                     std::span<const int> ids) {
  using V = typename Ctx::value_type;
  if (ids.empty()) throw ContractError("forward_logits: empty character sequence");
  std::vector<V> xs;
  xs.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= m.vocab_size) {
      throw VocabError("character id " + std::to_string(id) + " out of range (vocab size " +
                       std::to_string(m.vocab_size) + ")");
    }
    xs.push_back(cx.row(m.embeddings, static_cast<std::size_t>(id)));
  }
  std::vector<V> states = bilstm(cx, m.fwd, m.bwd, std::span<const V>(xs));
  std::vector<V> logits;
  logits.reserve(states.size());
  for (const V& st : states) logits.push_back(affine(cx, m.out_w, m.out_b, st));
  return logits;
}

inline std::vector<Tensor> forward_logits(const DomainModel& m, std::span<const int> ids) {
  EvalCtx cx;
  auto vars = bind_domain_model<EvalCtx>(m, EvalBind{});
  return forward_logits(cx, vars, ids);
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

// Argmax with ties broken toward the lowest tag code.
inline Tag argmax_tag(const Tensor& scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return static_cast<Tag>(best);
}

inline std::vector<Tag> tags_from_logits(std::span<const Tensor> logits) {
  std::vector<Tag> tags;
  tags.reserve(logits.size());
  for (const Tensor& l : logits) tags.push_back(argmax_tag(l));
  return tags;
}

inline std::vector<Span> spans_from_logits(std::span<const Tensor> logits) {
  std::vector<Tag> tags = tags_from_logits(logits);
  return bmes_decode(tags);
}

// Segments raw text with any per-character scorer. Preprocessing is applied
// for lookup only; emitted words carry the original characters.
template <class LogitsFn>
std::vector<std::u32string> segment_with(const LogitsFn& logits_fn, std::u32string_view text) {
  std::vector<std::u32string> out;
  if (text.empty()) return out;
  std::vector<PreprocessUnit> units = preprocess_units(text);
  std::u32string processed;
  processed.reserve(units.size());
  for (const PreprocessUnit& u : units) processed.push_back(u.ch);
  std::vector<Tensor> logits = logits_fn(processed);
  std::vector<Span> spans = bmes_decode(tags_from_logits(logits));
  out.reserve(spans.size());
  for (const Span& sp : spans) {
    // Unit spans translate back to original character ranges.
    std::size_t begin = units[sp.first].begin;
    std::size_t end = units[sp.second - 1].end;
    out.emplace_back(text.substr(begin, end - begin));
  }
  return out;
}

inline std::vector<std::u32string> segment(const DomainModel& m, std::u32string_view text) {
  EvalCtx cx;
  auto vars = bind_domain_model<EvalCtx>(m, EvalBind{});
  return segment_with(
      [&](const std::u32string& processed) {
        return forward_logits(cx, vars, m.ids_for(processed));
      },
      text);
}

}  // namespace deepstack
