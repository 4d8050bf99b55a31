#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "deepstack/common.hpp"

namespace deepstack {

using Span = std::pair<std::size_t, std::size_t>;  // [start, end)

// A sentence with its gold word boundaries. Spans are contiguous, in order,
// and tile [0, chars.size()) exactly.
struct SegmentedSentence {
  std::u32string chars;
  std::vector<Span> spans;

  static SegmentedSentence from_words(std::span<const std::u32string> words) {
    SegmentedSentence s;
    std::size_t pos = 0;
    for (const std::u32string& w : words) {
      if (w.empty()) throw ContractError("sentence word must be non-empty");
      s.chars += w;
      s.spans.emplace_back(pos, pos + w.size());
      pos += w.size();
    }
    return s;
  }

  std::size_t size() const { return chars.size(); }

  std::vector<std::size_t> word_lengths() const {
    std::vector<std::size_t> out;
    out.reserve(spans.size());
    for (const Span& sp : spans) out.push_back(sp.second - sp.first);
    return out;
  }

  std::vector<std::u32string> words() const {
    std::vector<std::u32string> out;
    out.reserve(spans.size());
    for (const Span& sp : spans) out.push_back(chars.substr(sp.first, sp.second - sp.first));
    return out;
  }

  void check() const {
    std::size_t pos = 0;
    for (const Span& sp : spans) {
      if (sp.first != pos || sp.second <= sp.first) {
        throw ContractError("sentence spans do not tile the text");
      }
      pos = sp.second;
    }
    if (pos != chars.size()) throw ContractError("sentence spans do not tile the text");
  }

  bool operator==(const SegmentedSentence&) const = default;
};

using Corpus = std::vector<SegmentedSentence>;

// ---------------------------------------------------------------------------
// Corpus file format: UTF-8, LF line endings, one sentence per line, words
// separated by single ASCII spaces. Empty lines are skipped on read.
// Parsing is strict so that scoring stays unambiguous.
// ---------------------------------------------------------------------------

inline Corpus parse_corpus(std::string_view text, const std::string& origin = "<string>") {
  Corpus corpus;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, (eol == std::string_view::npos ? text.size() : eol) - pos);
    ++line_no;
    pos = (eol == std::string_view::npos) ? text.size() + 1 : eol + 1;
    if (eol == std::string_view::npos && line.empty()) break;
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) {
      throw ParseError(origin + ": " + why + " at line " + std::to_string(line_no));
    };
    if (line.find('\r') != std::string_view::npos) fail("carriage return");
    if (line.front() == ' ') fail("leading space");
    if (line.back() == ' ') fail("trailing space");
    if (line.find("  ") != std::string_view::npos) fail("double space");
    std::vector<std::u32string> words;
    std::size_t w = 0;
    while (w <= line.size()) {
      std::size_t sp = line.find(' ', w);
      std::string_view word = line.substr(w, (sp == std::string_view::npos ? line.size() : sp) - w);
      words.push_back(utf8_decode(word, line_no));
      if (sp == std::string_view::npos) break;
      w = sp + 1;
    }
    corpus.push_back(SegmentedSentence::from_words(words));
  }
  return corpus;
}

inline std::string format_corpus(const Corpus& corpus) {
  std::string out;
  for (const SegmentedSentence& s : corpus) {
    bool first = true;
    for (const Span& sp : s.spans) {
      if (!first) out.push_back(' ');
      first = false;
      for (std::size_t i = sp.first; i < sp.second; ++i) utf8_append(out, s.chars[i]);
    }
    out.push_back('\n');
  }
  return out;
}

inline Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_corpus(text, path.string());
}

inline void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file: " + path.string());
  out << format_corpus(corpus);
}

// ---------------------------------------------------------------------------
// Word-level precision / recall / F1
// ---------------------------------------------------------------------------

struct Scores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t matched = 0;
  std::size_t gold_words = 0;
  std::size_t predicted_words = 0;
};

inline Scores f1_from_counts(std::size_t matched, std::size_t gold, std::size_t predicted) {
  Scores s;
  s.matched = matched;
  s.gold_words = gold;
  s.predicted_words = predicted;
  // Vacuously perfect when there is nothing to score on either side.
  s.precision = predicted ? static_cast<double>(matched) / predicted : (gold ? 0.0 : 1.0);
  s.recall = gold ? static_cast<double>(matched) / gold : (predicted ? 0.0 : 1.0);
  s.f1 = (s.precision + s.recall > 0.0)
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

// Counts exact span matches between two tilings of the same text.
inline std::size_t count_span_matches(std::span<const Span> a, std::span<const Span> b) {
  std::size_t i = 0, j = 0, matched = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++matched;
      ++i;
      ++j;
    } else if (a[i].second <= b[j].second) {
      ++i;
    } else {
      ++j;
    }
  }
  return matched;
}

inline Scores f1_score_spans(const Corpus& gold,
                             const std::vector<std::vector<Span>>& predicted) {
  if (gold.size() != predicted.size()) {
    throw ContractError("f1_score: sentence counts differ: " + std::to_string(gold.size()) +
                        " vs " + std::to_string(predicted.size()));
  }
  std::size_t matched = 0, gold_words = 0, predicted_words = 0;
  for (std::size_t k = 0; k < gold.size(); ++k) {
    if (!predicted[k].empty() && predicted[k].back().second != gold[k].chars.size()) {
      throw ContractError("f1_score: predicted words do not tile the gold text at sentence " +
                          std::to_string(k + 1));
    }
    matched += count_span_matches(gold[k].spans, predicted[k]);
    gold_words += gold[k].spans.size();
    predicted_words += predicted[k].size();
  }
  return f1_from_counts(matched, gold_words, predicted_words);
}

inline Scores f1_score(const Corpus& gold,
                       const std::vector<std::vector<std::u32string>>& predicted) {
  if (gold.size() != predicted.size()) {
    throw ContractError("f1_score: sentence counts differ: " + std::to_string(gold.size()) +
                        " vs " + std::to_string(predicted.size()));
  }
  std::vector<std::vector<Span>> spans(predicted.size());
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    std::u32string text;
    std::size_t pos = 0;
    for (const std::u32string& w : predicted[k]) {
      text += w;
      spans[k].emplace_back(pos, pos + w.size());
      pos += w.size();
    }
    if (text != gold[k].chars) {
      throw ContractError("f1_score: predicted text differs from gold at sentence " +
                          std::to_string(k + 1));
    }
  }
  return f1_score_spans(gold, spans);
}

// ---------------------------------------------------------------------------
// Synthetic multi-domain corpora. Three domains over a pseudo-character
// alphabet: A and B share most of their word inventory, the target T is a
// small corpus following A's conventions. A configurable set of conflict
// bigrams is written as one word in A and T but as two words in B, so the
// same surface text carries incompatible gold segmentations across domains.
// ---------------------------------------------------------------------------

struct SynthSpec {
  std::uint64_t seed = 1;
  std::size_t alphabet_size = 50;       // pseudo-characters, private-use plane
  std::size_t shared_words = 300;       // inventory common to all domains
  std::size_t domain_words = 20;        // extra words private to A and to B
  std::size_t conflict_bigrams = 8;     // conflicting two-character surfaces
  double conflict_rate = 0.3;           // fraction of sentences with a conflict
  std::size_t min_words = 4;
  std::size_t max_words = 9;
  std::size_t domain_a_sentences = 5000;
  std::size_t domain_b_sentences = 5000;
  std::size_t target_train_sentences = 200;
  std::size_t target_test_sentences = 500;

  void validate() const {
    if (alphabet_size < 2 * conflict_bigrams + 8) {
      throw ConfigError("synth spec: alphabet too small for the conflict set");
    }
    if (shared_words == 0) throw ConfigError("synth spec: shared_words must be positive");
    if (conflict_rate < 0.0 || conflict_rate > 1.0) {
      throw ConfigError("synth spec: conflict_rate must lie in [0, 1]");
    }
    if (conflict_rate > 0.0 && conflict_bigrams == 0) {
      throw ConfigError("synth spec: conflict_rate > 0 requires conflict bigrams");
    }
    if (min_words == 0 || max_words < min_words) {
      throw ConfigError("synth spec: invalid sentence length range");
    }
    if (domain_a_sentences == 0 || domain_b_sentences == 0 || target_train_sentences == 0 ||
        target_test_sentences == 0) {
      throw ConfigError("synth spec: all splits need at least one sentence");
    }
  }
};

struct SynthCorpora {
  Corpus domain_a;
  Corpus domain_b;
  Corpus target_train;
  Corpus target_test;
  std::vector<std::u32string> conflict_surfaces;
};

namespace detail {

inline constexpr char32_t kSynthAlphabetBase = 0xE100;

inline std::vector<std::u32string> sample_words(std::size_t count, std::size_t usable_chars,
                                                std::set<std::u32string>& taken, Rng& rng) {
  std::vector<std::u32string> words;
  words.reserve(count);
  while (words.size() < count) {
    std::size_t r = rng.uniform_index(10);
    std::size_t len = r < 3 ? 1 : (r < 8 ? 2 : 3);
    std::u32string w;
    for (std::size_t i = 0; i < len; ++i) {
      w.push_back(kSynthAlphabetBase + static_cast<char32_t>(rng.uniform_index(usable_chars)));
    }
    if (taken.insert(w).second) words.push_back(w);
  }
  return words;
}

inline Corpus make_synth_domain(std::size_t sentences,
                                const std::vector<std::u32string>& inventory,
                                const std::vector<std::u32string>& conflicts,
                                double conflict_rate, bool conflict_is_one_word,
                                std::size_t min_words, std::size_t max_words, Rng& rng) {
  // Exactly floor(rate * n) sentences carry a conflict surface; which ones
  // is decided by a seeded shuffle so the measured rate is pinned.
  std::vector<char> has_conflict(sentences, 0);
  const auto conflict_count =
      static_cast<std::size_t>(conflict_rate * static_cast<double>(sentences));
  for (std::size_t i = 0; i < conflict_count && i < sentences; ++i) has_conflict[i] = 1;
  rng.shuffle(has_conflict);

  Corpus corpus;
  corpus.reserve(sentences);
  for (std::size_t k = 0; k < sentences; ++k) {
    std::size_t len = min_words + rng.uniform_index(max_words - min_words + 1);
    std::vector<std::u32string> words;
    words.reserve(len + 2);
    for (std::size_t i = 0; i < len; ++i) {
      words.push_back(inventory[rng.uniform_index(inventory.size())]);
    }
    if (has_conflict[k]) {
      const std::u32string& surface = conflicts[rng.uniform_index(conflicts.size())];
      std::size_t pos = rng.uniform_index(words.size() + 1);
      if (conflict_is_one_word) {
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos), surface);
      } else {
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos),
                     {std::u32string(1, surface[0]), std::u32string(1, surface[1])});
      }
    }
    corpus.push_back(SegmentedSentence::from_words(words));
  }
  return corpus;
}

}  // namespace detail

inline SynthCorpora gen_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng master(spec.seed);

  // Conflict surfaces use characters reserved from the tail of the alphabet,
  // so a conflict bigram can never occur by accident inside ordinary words.
  const std::size_t usable = spec.alphabet_size - 2 * spec.conflict_bigrams;
  std::vector<std::u32string> conflicts;
  for (std::size_t i = 0; i < spec.conflict_bigrams; ++i) {
    char32_t x = detail::kSynthAlphabetBase + static_cast<char32_t>(usable + 2 * i);
    char32_t y = detail::kSynthAlphabetBase + static_cast<char32_t>(usable + 2 * i + 1);
    conflicts.push_back(std::u32string{x, y});
  }

  std::set<std::u32string> taken;
  std::vector<std::u32string> shared = detail::sample_words(spec.shared_words, usable, taken, master);
  std::vector<std::u32string> a_extra = detail::sample_words(spec.domain_words, usable, taken, master);
  std::vector<std::u32string> b_extra = detail::sample_words(spec.domain_words, usable, taken, master);

  std::vector<std::u32string> a_inventory = shared;
  a_inventory.insert(a_inventory.end(), a_extra.begin(), a_extra.end());
  std::vector<std::u32string> b_inventory = shared;
  b_inventory.insert(b_inventory.end(), b_extra.begin(), b_extra.end());

  const std::uint64_t seed_a = master.next_u64();
  const std::uint64_t seed_b = master.next_u64();
  const std::uint64_t seed_t_train = master.next_u64();
  const std::uint64_t seed_t_test = master.next_u64();

  SynthCorpora out;
  out.conflict_surfaces = conflicts;
  {
    Rng rng(seed_a);
    out.domain_a = detail::make_synth_domain(spec.domain_a_sentences, a_inventory, conflicts,
                                             spec.conflict_rate, /*one_word=*/true,
                                             spec.min_words, spec.max_words, rng);
  }
  {
    Rng rng(seed_b);
    out.domain_b = detail::make_synth_domain(spec.domain_b_sentences, b_inventory, conflicts,
                                             spec.conflict_rate, /*one_word=*/false,
                                             spec.min_words, spec.max_words, rng);
  }
  {
    Rng rng(seed_t_train);
    out.target_train = detail::make_synth_domain(spec.target_train_sentences, a_inventory,
                                                 conflicts, spec.conflict_rate,
                                                 /*one_word=*/true, spec.min_words,
                                                 spec.max_words, rng);
  }
  {
    Rng rng(seed_t_test);
    out.target_test = detail::make_synth_domain(spec.target_test_sentences, a_inventory,
                                                conflicts, spec.conflict_rate,
                                                /*one_word=*/true, spec.min_words,
                                                spec.max_words, rng);
  }
  return out;
}

// Seeded shuffle, then the first floor(fraction * n) sentences. Smaller
// fractions with the same seed are prefixes of larger ones.
inline Corpus subsample(const Corpus& corpus, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0) {
    throw ConfigError("subsample: fraction must lie in (0, 1]");
  }
  Corpus out = corpus;
  Rng rng(seed);
  rng.shuffle(out);
  out.resize(static_cast<std::size_t>(fraction * static_cast<double>(corpus.size())));
  return out;
}

// Fraction of sentences whose surface text contains any of the given
// conflict bigrams.
inline double conflict_sentence_rate(const Corpus& corpus,
                                     std::span<const std::u32string> surfaces) {
  if (corpus.empty()) return 0.0;
  std::size_t hits = 0;
  for (const SegmentedSentence& s : corpus) {
    for (const std::u32string& surface : surfaces) {
      if (s.chars.find(surface) != std::u32string::npos) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(corpus.size());
}

}  // namespace deepstack
