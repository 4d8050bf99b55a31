// Command-line front end: synthesize corpora, pre-train domain models,
// train stackers, evaluate, and segment.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "deepstack/data.hpp"
#include "deepstack/segmenter.hpp"
#include "deepstack/serialize.hpp"
#include "deepstack/stacking.hpp"
#include "deepstack/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kDefaultSeed = 42;

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    std::size_t comma = csv.find(',', pos);
    if (comma == std::string::npos) {
      out.push_back(csv.substr(pos));
      break;
    }
    out.push_back(csv.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return out;
}

std::vector<std::size_t> parse_order(const std::string& csv) {
  std::vector<std::size_t> out;
  for (const std::string& part : split_list(csv)) {
    try {
      out.push_back(static_cast<std::size_t>(std::stoull(part)));
    } catch (const std::exception&) {
      throw deepstack::ConfigError("bad --order entry: '" + part + "'");
    }
  }
  return out;
}

// Every artifact-producing subcommand records how it was invoked next to
// its output, so the artifact can be rebuilt from the manifest alone.
void write_manifest(const fs::path& path, json manifest) {
  manifest["tool"] = deepstack::kToolName;
  manifest["version"] = deepstack::kToolVersion;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw deepstack::DataError("cannot write manifest: " + path.string());
  out << manifest.dump(2) << '\n';
}

deepstack::SynthSpec spec_from_json(const json& j) {
  deepstack::SynthSpec spec;
  for (const auto& [key, value] : j.items()) {
    if (key == "seed") spec.seed = value.get<std::uint64_t>();
    else if (key == "alphabet_size") spec.alphabet_size = value.get<std::size_t>();
    else if (key == "shared_words") spec.shared_words = value.get<std::size_t>();
    else if (key == "domain_words") spec.domain_words = value.get<std::size_t>();
    else if (key == "conflict_bigrams") spec.conflict_bigrams = value.get<std::size_t>();
    else if (key == "conflict_rate") spec.conflict_rate = value.get<double>();
    else if (key == "min_words") spec.min_words = value.get<std::size_t>();
    else if (key == "max_words") spec.max_words = value.get<std::size_t>();
    else if (key == "domain_a_sentences") spec.domain_a_sentences = value.get<std::size_t>();
    else if (key == "domain_b_sentences") spec.domain_b_sentences = value.get<std::size_t>();
    else if (key == "target_train_sentences")
      spec.target_train_sentences = value.get<std::size_t>();
    else if (key == "target_test_sentences")
      spec.target_test_sentences = value.get<std::size_t>();
    else throw deepstack::ConfigError("unknown synth spec key: '" + key + "'");
  }
  return spec;
}

json spec_to_json(const deepstack::SynthSpec& spec) {
  return json{{"seed", spec.seed},
              {"alphabet_size", spec.alphabet_size},
              {"shared_words", spec.shared_words},
              {"domain_words", spec.domain_words},
              {"conflict_bigrams", spec.conflict_bigrams},
              {"conflict_rate", spec.conflict_rate},
              {"min_words", spec.min_words},
              {"max_words", spec.max_words},
              {"domain_a_sentences", spec.domain_a_sentences},
              {"domain_b_sentences", spec.domain_b_sentences},
              {"target_train_sentences", spec.target_train_sentences},
              {"target_test_sentences", spec.target_test_sentences}};
}

int run_gen_synth(const std::string& spec_path, const std::string& out_dir) {
  std::ifstream in(spec_path, std::ios::binary);
  if (!in) throw deepstack::DataError("cannot open spec file: " + spec_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw deepstack::ParseError(spec_path + ": " + e.what());
  }
  deepstack::SynthSpec spec = spec_from_json(j);
  deepstack::SynthCorpora corpora = deepstack::gen_synthetic(spec);

  fs::path dir(out_dir);
  fs::create_directories(dir);
  deepstack::write_corpus(corpora.domain_a, dir / "domain_a.txt");
  deepstack::write_corpus(corpora.domain_b, dir / "domain_b.txt");
  deepstack::write_corpus(corpora.target_train, dir / "target_train.txt");
  deepstack::write_corpus(corpora.target_test, dir / "target_test.txt");

  json manifest;
  manifest["subcommand"] = "gen-synth";
  manifest["seed"] = spec.seed;
  manifest["config"] = spec_to_json(spec);
  manifest["inputs"] = json::array({spec_path});
  manifest["outputs"] = json::array({(dir / "domain_a.txt").string(),
                                     (dir / "domain_b.txt").string(),
                                     (dir / "target_train.txt").string(),
                                     (dir / "target_test.txt").string()});
  write_manifest(dir / "manifest.json", std::move(manifest));

  std::fprintf(stderr, "wrote 4 corpora to %s\n", out_dir.c_str());
  return 0;
}

deepstack::TrainConfig make_train_config(std::size_t epochs, std::uint64_t seed) {
  deepstack::TrainConfig cfg;
  cfg.max_epochs = epochs;
  cfg.seed = seed;
  cfg.on_epoch = [](const deepstack::EpochStats& s) {
    std::fprintf(stderr, "%s\n", deepstack::format_epoch_line(s).c_str());
  };
  return cfg;
}

int run_train_domain(const std::string& corpus_path, const std::string& out_path,
                     std::size_t epochs, std::uint64_t seed, double fraction,
                     std::string name) {
  deepstack::Corpus corpus = deepstack::read_corpus(corpus_path);
  if (fraction < 1.0) corpus = deepstack::subsample(corpus, fraction, seed);
  if (name.empty()) name = fs::path(corpus_path).stem().string();

  deepstack::TrainConfig cfg = make_train_config(epochs, seed);
  deepstack::DomainModel model = deepstack::train_domain(corpus, cfg, name);
  deepstack::save_model(model, out_path);

  json manifest;
  manifest["subcommand"] = "train-domain";
  manifest["seed"] = seed;
  manifest["config"] = {{"epochs", epochs},
                        {"fraction", fraction},
                        {"batch_size", cfg.batch_size},
                        {"dev_fraction", cfg.dev_fraction},
                        {"embed_dim", cfg.embed_dim},
                        {"hidden_dim", cfg.hidden_dim},
                        {"domain_name", name}};
  manifest["inputs"] = json::array({corpus_path});
  manifest["outputs"] = json::array({out_path});
  write_manifest(out_path + ".manifest.json", std::move(manifest));
  return 0;
}

int run_train_stack(const std::string& variant, const std::string& models_csv,
                    std::size_t target_index, const std::string& corpus_path,
                    const std::string& out_path, std::optional<double> sigma,
                    const std::string& order_csv, std::size_t seq_hidden, std::size_t epochs,
                    std::uint64_t seed, double fraction) {
  std::vector<std::string> model_paths = split_list(models_csv);
  std::vector<deepstack::DomainModel> models;
  std::vector<deepstack::ModelRef> refs;
  for (const std::string& p : model_paths) {
    models.push_back(deepstack::load_model(p));
    refs.push_back(deepstack::ModelRef{p, deepstack::file_fnv1a64(p)});
  }

  deepstack::Corpus corpus = deepstack::read_corpus(corpus_path);
  if (fraction < 1.0) corpus = deepstack::subsample(corpus, fraction, seed);

  deepstack::StackerConfig sc;
  sc.variant = deepstack::parse_variant(variant);
  sc.model_count = models.size();
  sc.target_index = target_index;
  sc.seq_hidden = seq_hidden;
  if (!order_csv.empty()) sc.model_order = parse_order(order_csv);
  if (sigma) {
    // A fixed sigma replaces the development-set grid search.
    sc.sigma = *sigma;
    sc.sigma_grid = {*sigma};
  }

  deepstack::TrainConfig cfg = make_train_config(epochs, seed);
  deepstack::Stacker stacker = deepstack::train_stack(models, corpus, sc, cfg);
  deepstack::save_stacker(stacker, refs, out_path);

  json manifest;
  manifest["subcommand"] = "train-stack";
  manifest["seed"] = seed;
  manifest["config"] = {{"variant", variant},
                        {"target_index", target_index},
                        {"seq_hidden", seq_hidden},
                        {"epochs", epochs},
                        {"fraction", fraction},
                        {"sigma", stacker.config.sigma},
                        {"order", stacker.config.order()}};
  json inputs = json::array();
  for (const std::string& p : model_paths) inputs.push_back(p);
  inputs.push_back(corpus_path);
  manifest["inputs"] = std::move(inputs);
  manifest["outputs"] = json::array({out_path});
  write_manifest(out_path + ".manifest.json", std::move(manifest));
  return 0;
}

int run_eval(const std::string& model_path, const std::string& corpus_path) {
  deepstack::AnyModel model = deepstack::load_any_model(model_path);
  deepstack::Corpus gold = deepstack::read_corpus(corpus_path);
  deepstack::Scores s = deepstack::evaluate(model, gold);
  std::printf("sentences %zu\n", gold.size());
  std::printf("precision %.4f\n", s.precision);
  std::printf("recall %.4f\n", s.recall);
  std::printf("f1 %.4f\n", s.f1);
  return 0;
}

int run_segment(const std::string& model_path, const std::string& input_path) {
  deepstack::AnyModel model = deepstack::load_any_model(model_path);

  std::ifstream file;
  std::istream* in = &std::cin;
  if (!input_path.empty()) {
    file.open(input_path, std::ios::binary);
    if (!file) throw deepstack::DataError("cannot open input file: " + input_path);
    in = &file;
  }

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(*in, line)) {
    ++line_no;
    std::u32string text = deepstack::utf8_decode(line, line_no);
    std::vector<std::u32string> words = deepstack::segment(model, text);
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) out.push_back(' ');
      out += deepstack::utf8_encode(words[i]);
    }
    std::printf("%s\n", out.c_str());
  }
  return 0;
}

int run_mix(const std::string& corpora_csv, const std::string& out_path) {
  deepstack::Corpus mixed;
  std::vector<std::string> paths = split_list(corpora_csv);
  for (const std::string& p : paths) {
    deepstack::Corpus c = deepstack::read_corpus(p);
    mixed.insert(mixed.end(), c.begin(), c.end());
  }
  deepstack::write_corpus(mixed, out_path);

  json manifest;
  manifest["subcommand"] = "mix";
  manifest["seed"] = nullptr;
  json inputs = json::array();
  for (const std::string& p : paths) inputs.push_back(p);
  manifest["inputs"] = std::move(inputs);
  manifest["outputs"] = json::array({out_path});
  manifest["config"] = json::object();
  write_manifest(out_path + ".manifest.json", std::move(manifest));
  std::fprintf(stderr, "wrote %zu sentences to %s\n", mixed.size(), out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-domain Chinese word segmentation with deep stacking networks"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-synth", "Generate synthetic multi-domain corpora");
  std::string spec_path, out_dir;
  gen->add_option("--spec", spec_path, "Synthesis spec (JSON)")->required();
  gen->add_option("--out-dir", out_dir, "Output directory")->required();

  auto* td = app.add_subcommand("train-domain", "Pre-train a domain model");
  std::string td_corpus, td_out, td_name;
  std::size_t td_epochs = 30;
  std::uint64_t td_seed = kDefaultSeed;
  double td_fraction = 1.0;
  td->add_option("--corpus", td_corpus, "Training corpus")->required();
  td->add_option("--out", td_out, "Output model file")->required();
  td->add_option("--epochs", td_epochs, "Training epochs");
  td->add_option("--seed", td_seed, "Random seed");
  td->add_option("--fraction", td_fraction, "Subsample this fraction of the corpus first");
  td->add_option("--name", td_name, "Domain name (defaults to the corpus file stem)");

  auto* ts = app.add_subcommand("train-stack", "Train a stacker over frozen domain models");
  std::string ts_variant, ts_models, ts_corpus, ts_out, ts_order;
  std::size_t ts_target = 0, ts_seq_hidden = 16, ts_epochs = 30;
  std::uint64_t ts_seed = kDefaultSeed;
  double ts_fraction = 1.0;
  std::optional<double> ts_sigma;
  ts->add_option("--variant", ts_variant,
                 "One of gaussian|concatenate|sequence|tree|bagging")
      ->required();
  ts->add_option("--models", ts_models, "Comma-separated model files")->required();
  ts->add_option("--target-index", ts_target, "Index of the target-domain model")->required();
  ts->add_option("--corpus", ts_corpus, "Target-domain corpus")->required();
  ts->add_option("--out", ts_out, "Output stacker file")->required();
  ts->add_option("--sigma", ts_sigma, "Fixed Gaussian sigma (skips the grid search)");
  ts->add_option("--order", ts_order, "Comma-separated model order");
  ts->add_option("--seq-hidden", ts_seq_hidden, "Hidden size of the weighting Bi-LSTM");
  ts->add_option("--epochs", ts_epochs, "Training epochs");
  ts->add_option("--seed", ts_seed, "Random seed");
  ts->add_option("--fraction", ts_fraction, "Subsample this fraction of the corpus first");

  auto* ev = app.add_subcommand("eval", "Score a model or stacker against a gold corpus");
  std::string ev_model, ev_corpus;
  ev->add_option("--model", ev_model, "Model or stacker file")->required();
  ev->add_option("--corpus", ev_corpus, "Gold corpus")->required();

  auto* seg = app.add_subcommand("segment", "Segment raw text (one sentence per line)");
  std::string seg_model, seg_input;
  seg->add_option("--model", seg_model, "Model or stacker file")->required();
  seg->add_option("--input", seg_input, "Input file (default: stdin)");

  auto* mix = app.add_subcommand("mix", "Concatenate corpora into one training corpus");
  std::string mix_corpora, mix_out;
  mix->add_option("--corpora", mix_corpora, "Comma-separated corpus files")->required();
  mix->add_option("--out", mix_out, "Output corpus file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return run_gen_synth(spec_path, out_dir);
    if (td->parsed()) {
      return run_train_domain(td_corpus, td_out, td_epochs, td_seed, td_fraction, td_name);
    }
    if (ts->parsed()) {
      return run_train_stack(ts_variant, ts_models, ts_target, ts_corpus, ts_out, ts_sigma,
                             ts_order, ts_seq_hidden, ts_epochs, ts_seed, ts_fraction);
    }
    if (ev->parsed()) return run_eval(ev_model, ev_corpus);
    if (seg->parsed()) return run_segment(seg_model, seg_input);
    if (mix->parsed()) return run_mix(mix_corpora, mix_out);
  } catch (const deepstack::Error& e) {
    std::fprintf(stderr, "deepstack: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "deepstack: %s\n", e.what());
    return 1;
  }
  return 2;
}
