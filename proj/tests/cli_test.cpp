#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "deepstack/data.hpp"
#include "deepstack/serialize.hpp"

namespace deepstack {
namespace {

namespace fs = std::filesystem;

struct RunResult {
  int status = -1;
  std::string out;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / "deepstack_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  RunResult run(const std::string& args, const std::string& stdin_data = "") {
    fs::path in = dir_ / "stdin.txt";
    fs::path out = dir_ / "stdout.txt";
    fs::path err = dir_ / "stderr.txt";
    {
      std::ofstream f(in, std::ios::binary);
      f << stdin_data;
    }
    std::string cmd = std::string(DEEPSTACK_CLI_PATH) + " " + args + " < " + in.string() +
                      " > " + out.string() + " 2> " + err.string();
    int raw = std::system(cmd.c_str());
    RunResult r;
    r.status = WEXITSTATUS(raw);
    auto slurp = [](const fs::path& p) {
      std::ifstream f(p, std::ios::binary);
      return std::string((std::istreambuf_iterator<char>(f)),
                         std::istreambuf_iterator<char>());
    };
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  std::string path(const std::string& name) { return (dir_ / name).string(); }

  void write_file(const std::string& name, const std::string& content) {
    std::ofstream f(dir_ / name, std::ios::binary);
    f << content;
  }

  std::string toy_text() {
    return
        "北京 大 学生 会\n"
        "会 北京 学生 大\n"
        "学生 大 会 北京\n"
        "北京 学生 大 会\n"
        "大 会 北京 学生\n"
        "学生 会 大 北京\n"
        "会 大 学生 北京\n"
        "北京 会 大 学生\n"
        "大 学生 北京 会\n"
        "学生 北京 会 大\n";
  }

  fs::path dir_;
};

TEST_F(CliTest, UnknownSubcommandIsUsageError) {
  EXPECT_EQ(run("frobnicate").status, 2);
}

TEST_F(CliTest, UnknownFlagIsUsageError) {
  EXPECT_EQ(run("eval --nonsense x").status, 2);
}

TEST_F(CliTest, MissingRequiredFlagIsUsageError) {
  EXPECT_EQ(run("eval --model only.model").status, 2);
}

TEST_F(CliTest, HelpExitsZero) {
  EXPECT_EQ(run("--help").status, 0);
  EXPECT_EQ(run("train-domain --help").status, 0);
}

TEST_F(CliTest, DomainErrorsExitOneWithDiagnostic) {
  RunResult r = run("eval --model " + path("missing.model") + " --corpus " + path("nope.txt"));
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("deepstack:"), std::string::npos);
}

TEST_F(CliTest, MalformedCorpusReportsLineNumber) {
  write_file("bad.txt", "a  b\n");
  write_file("corpus.txt", toy_text());
  RunResult train = run("train-domain --corpus " + path("bad.txt") + " --out " +
                        path("m.model") + " --epochs 1");
  EXPECT_EQ(train.status, 1);
  EXPECT_NE(train.err.find("line 1"), std::string::npos);
}

TEST_F(CliTest, EvalOnGoldReproducingModelPrintsPerfectScores) {
  write_file("corpus.txt", toy_text());
  RunResult train = run("train-domain --corpus " + path("corpus.txt") + " --out " +
                        path("toy.model") + " --epochs 60 --seed 7");
  ASSERT_EQ(train.status, 0) << train.err;
  EXPECT_NE(train.err.find("epoch 1 loss"), std::string::npos);

  RunResult eval = run("eval --model " + path("toy.model") + " --corpus " +
                       path("corpus.txt"));
  ASSERT_EQ(eval.status, 0) << eval.err;
  EXPECT_NE(eval.out.find("sentences 10\n"), std::string::npos) << eval.out;
  EXPECT_NE(eval.out.find("precision 1.0000\n"), std::string::npos) << eval.out;
  EXPECT_NE(eval.out.find("recall 1.0000\n"), std::string::npos) << eval.out;
  EXPECT_NE(eval.out.find("f1 1.0000\n"), std::string::npos) << eval.out;

  // A manifest sits next to the artifact.
  EXPECT_TRUE(fs::exists(path("toy.model") + ".manifest.json"));
}

TEST_F(CliTest, SegmentSingleCharacterFromStdin) {
  write_file("corpus.txt", toy_text());
  RunResult train = run("train-domain --corpus " + path("corpus.txt") + " --out " +
                        path("toy.model") + " --epochs 5 --seed 7");
  ASSERT_EQ(train.status, 0) << train.err;

  RunResult seg = run("segment --model " + path("toy.model"), "大\n");
  ASSERT_EQ(seg.status, 0) << seg.err;
  EXPECT_EQ(seg.out, "大\n");
}

TEST_F(CliTest, SegmentReadsInputFileAndConservesText) {
  write_file("corpus.txt", toy_text());
  RunResult train = run("train-domain --corpus " + path("corpus.txt") + " --out " +
                        path("toy.model") + " --epochs 5 --seed 7");
  ASSERT_EQ(train.status, 0) << train.err;

  write_file("raw.txt", "北京大学生\n\n会\n");
  RunResult seg = run("segment --model " + path("toy.model") + " --input " + path("raw.txt"));
  ASSERT_EQ(seg.status, 0) << seg.err;
  std::string no_spaces = seg.out;
  no_spaces.erase(std::remove(no_spaces.begin(), no_spaces.end(), ' '), no_spaces.end());
  EXPECT_EQ(no_spaces, "北京大学生\n\n会\n");
}

TEST_F(CliTest, SameSeedGivesByteIdenticalModels) {
  write_file("corpus.txt", toy_text());
  ASSERT_EQ(run("train-domain --corpus " + path("corpus.txt") + " --out " + path("a.model") +
                " --epochs 4 --seed 11 --name toy")
                .status,
            0);
  ASSERT_EQ(run("train-domain --corpus " + path("corpus.txt") + " --out " + path("b.model") +
                " --epochs 4 --seed 11 --name toy")
                .status,
            0);
  std::ifstream fa(path("a.model"), std::ios::binary);
  std::ifstream fb(path("b.model"), std::ios::binary);
  std::string a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  ASSERT_FALSE(a.empty());
  EXPECT_EQ(a, b);
}

TEST_F(CliTest, MixConcatenatesCorpora) {
  write_file("one.txt", "北京 大\n");
  write_file("two.txt", "学生\n会 会\n");
  RunResult r = run("mix --corpora " + path("one.txt") + "," + path("two.txt") + " --out " +
                    path("mixed.txt"));
  ASSERT_EQ(r.status, 0) << r.err;
  Corpus mixed = read_corpus(path("mixed.txt"));
  EXPECT_EQ(mixed.size(), 3u);
  EXPECT_EQ(mixed[0].chars, U"北京大");
  EXPECT_TRUE(fs::exists(path("mixed.txt") + ".manifest.json"));
}

TEST_F(CliTest, FullRecipeRunsEndToEnd) {
  write_file("spec.json",
             "{\"seed\": 5, \"alphabet_size\": 30, \"shared_words\": 30,"
             " \"domain_words\": 4, \"conflict_bigrams\": 3, \"conflict_rate\": 0.4,"
             " \"min_words\": 3, \"max_words\": 6,"
             " \"domain_a_sentences\": 40, \"domain_b_sentences\": 40,"
             " \"target_train_sentences\": 20, \"target_test_sentences\": 20}");
  RunResult gen = run("gen-synth --spec " + path("spec.json") + " --out-dir " + path("data"));
  ASSERT_EQ(gen.status, 0) << gen.err;
  EXPECT_TRUE(fs::exists(dir_ / "data" / "manifest.json"));

  std::string data = (dir_ / "data").string() + "/";
  ASSERT_EQ(run("train-domain --corpus " + data + "domain_a.txt --out " + path("a.model") +
                " --epochs 3 --seed 1 --name a")
                .status,
            0);
  ASSERT_EQ(run("train-domain --corpus " + data + "domain_b.txt --out " + path("b.model") +
                " --epochs 3 --seed 2 --name b")
                .status,
            0);
  ASSERT_EQ(run("train-domain --corpus " + data + "target_train.txt --out " +
                path("t.model") + " --epochs 3 --seed 3 --name t")
                .status,
            0);

  RunResult stack = run("train-stack --variant sequence --models " + path("t.model") + "," +
                        path("a.model") + "," + path("b.model") +
                        " --target-index 0 --corpus " + data + "target_train.txt --out " +
                        path("seq.stacker") + " --epochs 3 --seed 4 --order 2,0,1");
  ASSERT_EQ(stack.status, 0) << stack.err;
  EXPECT_TRUE(fs::exists(path("seq.stacker") + ".manifest.json"));

  RunResult eval = run("eval --model " + path("seq.stacker") + " --corpus " + data +
                       "target_test.txt");
  ASSERT_EQ(eval.status, 0) << eval.err;
  EXPECT_NE(eval.out.find("sentences 20\n"), std::string::npos) << eval.out;
  EXPECT_NE(eval.out.find("precision "), std::string::npos);
  EXPECT_NE(eval.out.find("recall "), std::string::npos);
  EXPECT_NE(eval.out.find("f1 "), std::string::npos);

  // The stacker file can drive segmentation of raw text.
  RunResult seg = run("segment --model " + path("seq.stacker"),
                      utf8_encode(read_corpus(data + "target_test.txt")[0].chars) + "\n");
  ASSERT_EQ(seg.status, 0) << seg.err;
  EXPECT_FALSE(seg.out.empty());
}

TEST_F(CliTest, GenSynthRejectsUnknownSpecKeys) {
  write_file("spec.json", "{\"sead\": 5}");
  RunResult r = run("gen-synth --spec " + path("spec.json") + " --out-dir " + path("data"));
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("sead"), std::string::npos);
}

}  // namespace
}  // namespace deepstack
