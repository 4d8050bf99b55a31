#include "deepstack/serialize.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "deepstack/training.hpp"
#include "support/toy.hpp"

namespace deepstack {
namespace {

using testing::toy_corpus;

namespace fs = std::filesystem;

class SerializeTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / "deepstack_serialize_test";
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

DomainModel trained_toy_model(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.max_epochs = 8;
  cfg.seed = seed;
  cfg.embed_dim = 5;
  cfg.hidden_dim = 4;
  return train_domain(toy_corpus(), cfg, "toy");
}

bool models_bit_equal(const DomainModel& a, const DomainModel& b) {
  if (a.domain_name != b.domain_name || a.embed_dim != b.embed_dim ||
      a.hidden_dim != b.hidden_dim || a.vocab.size() != b.vocab.size()) {
    return false;
  }
  for (std::size_t id = 0; id < a.vocab.size(); ++id) {
    if (a.vocab.char_at(id) != b.vocab.char_at(id)) return false;
  }
  bool equal = true;
  std::vector<const Tensor*> ta, tb;
  a.for_each_param([&](const char*, const Tensor& t) { ta.push_back(&t); });
  b.for_each_param([&](const char*, const Tensor& t) { tb.push_back(&t); });
  for (std::size_t i = 0; i < ta.size(); ++i) {
    equal = equal && ta[i]->same_shape(*tb[i]) &&
            std::memcmp(ta[i]->data(), tb[i]->data(), ta[i]->size() * sizeof(double)) == 0;
  }
  return equal;
}

TEST_F(SerializeTest, ModelRoundTripIsBitIdentical) {
  DomainModel m = trained_toy_model(3);
  fs::path path = dir_ / "toy.model";
  save_model(m, path);
  DomainModel back = load_model(path);
  EXPECT_TRUE(models_bit_equal(m, back));

  // Re-serializing the loaded model reproduces the file bytes.
  EXPECT_EQ(serialize_model(m), serialize_model(back));
}

TEST_F(SerializeTest, ModelFileCarriesHeaderFields) {
  DomainModel m = trained_toy_model(5);
  std::string text = serialize_model(m);
  EXPECT_EQ(text.rfind("deepstack-model 1\n", 0), 0u);
  EXPECT_NE(text.find("domain toy\n"), std::string::npos);
  EXPECT_NE(text.find("embed-dim 5\n"), std::string::npos);
  EXPECT_NE(text.find("hidden-dim 4\n"), std::string::npos);
}

TEST_F(SerializeTest, ModelParseRejectsCorruptedInput) {
  DomainModel m = trained_toy_model(7);
  std::string text = serialize_model(m);
  EXPECT_THROW(parse_model(text.substr(0, text.size() / 2)), ParseError);
  std::string wrong_magic = "deepstack-wrong 1\n";
  EXPECT_THROW(parse_model(wrong_magic), ParseError);

  std::string bad_version = text;
  bad_version.replace(bad_version.find("deepstack-model 1"), 17, "deepstack-model 9");
  EXPECT_THROW(parse_model(bad_version), ParseError);
}

TEST_F(SerializeTest, StackerRoundTripWithReferencedModels) {
  DomainModel m0 = trained_toy_model(11);
  DomainModel m1 = trained_toy_model(13);
  save_model(m0, dir_ / "m0.model");
  save_model(m1, dir_ / "m1.model");

  TrainConfig tc;
  tc.max_epochs = 4;
  tc.seed = 17;
  tc.embed_dim = 5;
  tc.hidden_dim = 4;
  StackerConfig sc;
  sc.variant = StackerVariant::kSequence;
  sc.seq_hidden = 3;
  Stacker stacker = train_stack({m0, m1}, toy_corpus(), sc, tc);

  std::vector<ModelRef> refs = {
      ModelRef{"m0.model", file_fnv1a64(dir_ / "m0.model")},
      ModelRef{"m1.model", file_fnv1a64(dir_ / "m1.model")},
  };
  fs::path path = dir_ / "seq.stacker";
  save_stacker(stacker, refs, path);

  auto [back, back_refs] = load_stacker(path);
  EXPECT_EQ(back.config.variant, StackerVariant::kSequence);
  EXPECT_EQ(back.config.model_count, 2u);
  EXPECT_EQ(back_refs.size(), 2u);
  EXPECT_EQ(back_refs[0].path, "m0.model");
  EXPECT_EQ(serialize_stacker(back, back_refs), serialize_stacker(stacker, refs));

  // Relative references resolve against the stacker's directory.
  StackedModel sm = load_stacked_model(path);
  EXPECT_EQ(sm.models.size(), 2u);
  EXPECT_TRUE(models_bit_equal(sm.models[0], m0));
  EXPECT_TRUE(models_bit_equal(sm.models[1], m1));

  // The loaded stack scores exactly like the in-memory one.
  StackedModel original{{m0, m1}, stacker};
  Corpus corpus = toy_corpus();
  EXPECT_DOUBLE_EQ(evaluate(original, corpus).f1, evaluate(sm, corpus).f1);
}

TEST_F(SerializeTest, StackerLoadRejectsHashMismatch) {
  DomainModel m0 = trained_toy_model(19);
  save_model(m0, dir_ / "m0.model");
  StackerConfig sc;
  sc.variant = StackerVariant::kBagging;
  sc.model_count = 1;
  Stacker stacker = Stacker::init(sc, 1);
  std::vector<ModelRef> refs = {ModelRef{"m0.model", 0xDEADBEEFu}};
  save_stacker(stacker, refs, dir_ / "bad.stacker");
  EXPECT_THROW(load_stacked_model(dir_ / "bad.stacker"), DataError);
}

TEST_F(SerializeTest, StackerLoadRejectsMissingModelFile) {
  StackerConfig sc;
  sc.variant = StackerVariant::kBagging;
  sc.model_count = 1;
  Stacker stacker = Stacker::init(sc, 1);
  std::vector<ModelRef> refs = {ModelRef{"nowhere.model", 1}};
  save_stacker(stacker, refs, dir_ / "missing.stacker");
  EXPECT_THROW(load_stacked_model(dir_ / "missing.stacker"), DataError);
}

TEST_F(SerializeTest, GaussianAndTreeStackersRoundTrip) {
  DomainModel m0 = trained_toy_model(23);
  DomainModel m1 = trained_toy_model(29);
  save_model(m0, dir_ / "m0.model");
  save_model(m1, dir_ / "m1.model");
  std::vector<ModelRef> refs = {
      ModelRef{"m0.model", file_fnv1a64(dir_ / "m0.model")},
      ModelRef{"m1.model", file_fnv1a64(dir_ / "m1.model")},
  };

  StackerConfig gc;
  gc.variant = StackerVariant::kGaussian;
  gc.model_count = 2;
  gc.sigma = 0.5;
  Stacker gaussian = Stacker::init(gc, 2);
  save_stacker(gaussian, refs, dir_ / "g.stacker");
  auto [gback, grefs] = load_stacker(dir_ / "g.stacker");
  EXPECT_EQ(gback.config.sigma, 0.5);
  EXPECT_EQ(serialize_stacker(gback, grefs), serialize_stacker(gaussian, refs));

  StackerConfig tc;
  tc.variant = StackerVariant::kTree;
  tc.model_count = 2;
  Stacker tree = Stacker::init(tc, 3);
  save_stacker(tree, refs, dir_ / "t.stacker");
  auto [tback, trefs] = load_stacker(dir_ / "t.stacker");
  EXPECT_EQ(serialize_stacker(tback, trefs), serialize_stacker(tree, refs));
}

TEST_F(SerializeTest, LoadAnyModelDetectsBothKinds) {
  DomainModel m0 = trained_toy_model(31);
  save_model(m0, dir_ / "m0.model");
  std::vector<ModelRef> refs = {ModelRef{"m0.model", file_fnv1a64(dir_ / "m0.model")}};
  StackerConfig sc;
  sc.variant = StackerVariant::kBagging;
  sc.model_count = 1;
  save_stacker(Stacker::init(sc, 1), refs, dir_ / "b.stacker");

  AnyModel plain = load_any_model(dir_ / "m0.model");
  AnyModel stacked = load_any_model(dir_ / "b.stacker");
  EXPECT_TRUE(std::holds_alternative<DomainModel>(plain));
  EXPECT_TRUE(std::holds_alternative<StackedModel>(stacked));

  Corpus corpus = toy_corpus();
  // A one-model bagging stack segments exactly like the model itself.
  EXPECT_DOUBLE_EQ(evaluate(plain, corpus).f1, evaluate(stacked, corpus).f1);
}

TEST_F(SerializeTest, ExtremeValuesSurviveTheTextFormat) {
  DomainModel m = trained_toy_model(37);
  m.embeddings[0] = 1e-300;
  m.embeddings[1] = -0.0;
  m.embeddings[2] = 0.1 + 0.2;  // a value with a long binary tail
  m.embeddings[3] = 1.7976931348623157e308;
  fs::path path = dir_ / "extreme.model";
  save_model(m, path);
  DomainModel back = load_model(path);
  EXPECT_TRUE(models_bit_equal(m, back));
}

}  // namespace
}  // namespace deepstack
