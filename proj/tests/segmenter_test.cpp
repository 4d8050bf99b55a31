#include "deepstack/segmenter.hpp"

#include <gtest/gtest.h>

#include <functional>

#include "support/fd_check.hpp"

namespace deepstack {
namespace {

using testing::fd_max_rel_err_all;
using testing::random_tensor;

void zero_params(DomainModel& m) {
  m.for_each_param([](const char*, Tensor& t) { t.fill(0.0); });
}

DomainModel tiny_model(std::u32string_view chars, std::size_t embed = 3, std::size_t hidden = 2,
                       std::uint64_t seed = 1) {
  CharVocab vocab;
  for (char32_t c : chars) vocab.add(c);
  Rng rng(seed);
  return DomainModel::init("tiny", vocab, embed, hidden, rng);
}

TEST(Preprocess, ReplacesDigitAndLatinRuns) {
  std::u32string out = preprocess(std::u32string(U"abc123北"));
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0], kLatinFlag);
  EXPECT_EQ(out[1], kNumFlag);
  EXPECT_EQ(out[2], U'北');
}

TEST(Preprocess, PassesOtherTextThrough) {
  EXPECT_EQ(preprocess(std::u32string(U"北京")), U"北京");
}

TEST(Preprocess, AlternatingRuns) {
  std::u32string out = preprocess(std::u32string(U"a1a"));
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0], kLatinFlag);
  EXPECT_EQ(out[1], kNumFlag);
  EXPECT_EQ(out[2], kLatinFlag);
}

TEST(Preprocess, RunsAreCutAtGoldWordBoundaries) {
  // "12" + "34" are two gold words; each collapses to its own flag.
  auto s = SegmentedSentence::from_words(std::vector<std::u32string>{U"12", U"34"});
  SegmentedSentence p = preprocess(s);
  ASSERT_EQ(p.chars.size(), 2u);
  EXPECT_EQ(p.chars[0], kNumFlag);
  EXPECT_EQ(p.chars[1], kNumFlag);
  ASSERT_EQ(p.spans.size(), 2u);
  EXPECT_EQ(p.spans[0], Span(0, 1));
  EXPECT_EQ(p.spans[1], Span(1, 2));

  auto mixed = SegmentedSentence::from_words(std::vector<std::u32string>{U"a1", U"北"});
  SegmentedSentence q = preprocess(mixed);
  EXPECT_EQ(q.chars.size(), 3u);
  EXPECT_EQ(q.spans[0], Span(0, 2));
}

TEST(Bmes, EncodeExamples) {
  std::vector<std::size_t> two_two = {2, 2};
  auto tags = bmes_encode(two_two);
  std::vector<Tag> want = {Tag::kB, Tag::kE, Tag::kB, Tag::kE};
  EXPECT_EQ(tags, want);

  std::vector<std::size_t> one = {1};
  EXPECT_EQ(bmes_encode(one), std::vector<Tag>{Tag::kS});

  std::vector<std::size_t> three_one = {3, 1};
  want = {Tag::kB, Tag::kM, Tag::kE, Tag::kS};
  EXPECT_EQ(bmes_encode(three_one), want);
}

TEST(Bmes, EncodeRejectsZeroLength) {
  std::vector<std::size_t> bad = {2, 0};
  EXPECT_THROW(bmes_encode(bad), ContractError);
}

TEST(Bmes, DecodeExamples) {
  std::vector<Tag> tags = {Tag::kB, Tag::kE, Tag::kB, Tag::kE};
  std::vector<Span> want = {{0, 2}, {2, 4}};
  EXPECT_EQ(bmes_decode(tags), want);

  // Invalid start is repaired into one span.
  tags = {Tag::kM, Tag::kM, Tag::kE};
  want = {{0, 3}};
  EXPECT_EQ(bmes_decode(tags), want);
}

TEST(Bmes, RoundTripExhaustiveUpToTotalLengthTwelve) {
  // All compositions of every total length up to 12.
  std::size_t checked = 0;
  for (std::size_t total = 1; total <= 12; ++total) {
    std::vector<std::vector<std::size_t>> stack = {{}};
    std::function<void(std::vector<std::size_t>&, std::size_t)> rec =
        [&](std::vector<std::size_t>& prefix, std::size_t remaining) {
          if (remaining == 0) {
            auto tags = bmes_encode(prefix);
            auto spans = bmes_decode(tags);
            ASSERT_EQ(spans.size(), prefix.size());
            for (std::size_t i = 0; i < prefix.size(); ++i) {
              ASSERT_EQ(spans[i].second - spans[i].first, prefix[i]);
            }
            ++checked;
            return;
          }
          for (std::size_t len = 1; len <= remaining; ++len) {
            prefix.push_back(len);
            rec(prefix, remaining - len);
            prefix.pop_back();
          }
        };
    std::vector<std::size_t> prefix;
    rec(prefix, total);
  }
  EXPECT_EQ(checked, 4095u);  // sum of 2^(n-1) for n = 1..12
}

TEST(Bmes, DecodeIsTotalOverAllTagSequences) {
  for (std::size_t n = 1; n <= 6; ++n) {
    std::size_t count = 1;
    for (std::size_t i = 0; i < n; ++i) count *= 4;
    for (std::size_t code = 0; code < count; ++code) {
      std::vector<Tag> tags;
      std::size_t c = code;
      for (std::size_t i = 0; i < n; ++i) {
        tags.push_back(static_cast<Tag>(c % 4));
        c /= 4;
      }
      auto spans = bmes_decode(tags);
      std::size_t pos = 0;
      for (const Span& sp : spans) {
        ASSERT_EQ(sp.first, pos);
        ASSERT_GT(sp.second, sp.first);
        pos = sp.second;
      }
      ASSERT_EQ(pos, n);
    }
  }
}

TEST(CharVocab, ReservedIdsAlwaysPresent) {
  CharVocab v;
  EXPECT_EQ(v.size(), 3u);
  EXPECT_EQ(v.lookup(kNumFlag), CharVocab::kNumId);
  EXPECT_EQ(v.lookup(kLatinFlag), CharVocab::kLatinId);
  EXPECT_EQ(v.lookup(U'x'), CharVocab::kUnkId);
}

TEST(CharVocab, BuildAssignsDenseIdsInFirstOccurrenceOrder) {
  Corpus corpus = parse_corpus("ca b\nbd\n");
  CharVocab v = CharVocab::build(corpus);
  EXPECT_EQ(v.size(), 7u);
  EXPECT_EQ(v.lookup(U'c'), 3);
  EXPECT_EQ(v.lookup(U'a'), 4);
  EXPECT_EQ(v.lookup(U'b'), 5);
  EXPECT_EQ(v.lookup(U'd'), 6);
  EXPECT_EQ(v.char_at(3), U'c');
  EXPECT_THROW(v.char_at(7), VocabError);
}

TEST(ForwardLogits, ZeroModelGivesZeroLogitsEverywhere) {
  DomainModel m = tiny_model(U"abc");
  zero_params(m);
  std::vector<int> ids = m.ids_for(U"abcab");
  auto logits = forward_logits(m, ids);
  ASSERT_EQ(logits.size(), 5u);
  for (const Tensor& l : logits) {
    ASSERT_EQ(l.size(), kNumTags);
    for (std::size_t i = 0; i < kNumTags; ++i) EXPECT_DOUBLE_EQ(l[i], 0.0);
  }
}

TEST(ForwardLogits, LengthIsPreserved) {
  DomainModel m = tiny_model(U"abcd", 4, 3, 9);
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t n = 1 + rng.uniform_index(9);
    std::vector<int> ids;
    for (std::size_t i = 0; i < n; ++i) {
      ids.push_back(static_cast<int>(rng.uniform_index(m.vocab.size())));
    }
    EXPECT_EQ(forward_logits(m, ids).size(), n);
  }
}

TEST(ForwardLogits, OutOfRangeIdIsVocabError) {
  DomainModel m = tiny_model(U"ab");
  std::vector<int> ids = {0, 99};
  EXPECT_THROW(forward_logits(m, ids), VocabError);
  std::vector<int> neg = {-1};
  EXPECT_THROW(forward_logits(m, neg), VocabError);
}

TEST(ForwardLogits, FullModelCrossEntropyGradientMatchesFiniteDifferences) {
  DomainModel m = tiny_model(U"abc", 3, 2, 5);
  std::vector<int> ids = m.ids_for(U"cab");
  std::vector<Tag> gold = {Tag::kB, Tag::kM, Tag::kE};

  auto loss = [&] {
    auto logits = forward_logits(m, ids);
    double acc = 0.0;
    for (std::size_t t = 0; t < logits.size(); ++t) {
      acc -= ops::log_softmax(logits[t])[static_cast<std::size_t>(gold[t])];
    }
    return acc;
  };

  Tape tape;
  ParamBinder binder(tape);
  auto vars = bind_domain_model<Tape>(m, binder);
  auto logits = forward_logits(tape, vars, ids);
  Value acc = tape.leaf(Tensor::scalar(0.0));
  for (std::size_t t = 0; t < logits.size(); ++t) {
    acc = tape.sub(acc, tape.pick(tape.log_softmax(logits[t]),
                                  static_cast<std::size_t>(gold[t])));
  }
  tape.backward(acc);

  EXPECT_LT(fd_max_rel_err_all(loss, tape, binder), 1e-4);
}

TEST(Segment, SingleCharacterIsOneWord) {
  DomainModel m = tiny_model(U"x");
  auto words = segment(m, U"x");
  ASSERT_EQ(words.size(), 1u);
  EXPECT_EQ(words[0], U"x");
}

TEST(Segment, EmptySentenceIsEmptyWordList) {
  DomainModel m = tiny_model(U"x");
  EXPECT_TRUE(segment(m, U"").empty());
}

TEST(Segment, ConcatenationOfWordsReproducesInput) {
  DomainModel m = tiny_model(U"xyz", 3, 2, 7);
  const std::u32string inputs[] = {U"xyzzy", U"x", U"zz12yy", U"abc99x",
                                   U"北京123ok"};
  for (const std::u32string& text : inputs) {
    auto words = segment(m, text);
    std::u32string glued;
    for (const auto& w : words) glued += w;
    EXPECT_EQ(glued, text);
  }
}

TEST(Segment, DigitRunsStayAtomic) {
  DomainModel m = tiny_model(U"xy", 3, 2, 3);
  auto words = segment(m, U"x1234y");
  // The digit run is one preprocessing unit, so no word boundary can fall
  // inside it.
  for (const auto& w : words) {
    bool has_digit = false, has_other = false;
    for (char32_t c : w) (is_ascii_digit(c) ? has_digit : has_other) = true;
    if (has_digit) {
      EXPECT_TRUE(w == U"1234" || !has_other || w.find(U"1234") != std::u32string::npos);
      EXPECT_NE(w.find(U"1234"), std::u32string::npos);
    }
  }
}

TEST(Segment, ArgmaxTiesBreakTowardLowestTagCode) {
  // Zero model emits all-zero logits; every position ties and resolves to B,
  // so every character becomes its own word.
  DomainModel m = tiny_model(U"北京");
  zero_params(m);
  auto words = segment(m, U"北京北京");
  ASSERT_EQ(words.size(), 4u);
  for (const auto& w : words) EXPECT_EQ(w.size(), 1u);
}

TEST(Segment, UnseenCharactersMapToUnk) {
  DomainModel m = tiny_model(U"ab", 3, 2, 11);
  // Characters outside the vocab hit the UNK row; segmentation still works
  // and conserves the text.
  auto words = segment(m, U"未知ab");
  std::u32string glued;
  for (const auto& w : words) glued += w;
  EXPECT_EQ(glued, U"未知ab");
}

}  // namespace
}  // namespace deepstack
