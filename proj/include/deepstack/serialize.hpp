#pragma once

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "deepstack/segmenter.hpp"
#include "deepstack/stacking.hpp"

namespace deepstack {

// Versioned text formats. Values are written with 17 significant digits,
// which round-trips 64-bit floats exactly, so load(save(m)) is bit-identical
// and identical models serialize to identical bytes.

inline constexpr int kModelFormatVersion = 1;
inline constexpr int kStackerFormatVersion = 1;

namespace detail {

inline void append_double(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

inline void append_tensor(std::string& out, const std::string& name, const Tensor& t) {
  out += "tensor " + name + ' ' + std::to_string(t.rank());
  for (std::size_t e : t.shape()) out += ' ' + std::to_string(e);
  out += '\n';
  const std::size_t per_line = t.rank() == 2 ? t.cols() : t.size();
  for (std::size_t i = 0; i < t.size(); ++i) {
    append_double(out, t[i]);
    out += (i % per_line == per_line - 1) ? '\n' : ' ';
  }
}

// Line-oriented reader with a token cursor inside the current line.
class Reader {
 public:
  Reader(std::string_view text, std::string origin) : origin_(std::move(origin)) {
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t eol = text.find('\n', pos);
      if (eol == std::string_view::npos) {
        if (pos < text.size()) lines_.emplace_back(text.substr(pos));
        break;
      }
      lines_.emplace_back(text.substr(pos, eol - pos));
      pos = eol + 1;
    }
  }

  [[noreturn]] void fail(const std::string& why) const {
    throw ParseError(origin_ + ": " + why + " at line " + std::to_string(line_ + 1));
  }

  bool done() const { return line_ >= lines_.size(); }

  // Next whitespace-separated token on the current line; advances lines as
  // needed.
  std::string token() {
    for (;;) {
      if (done()) fail("unexpected end of file");
      const std::string& l = lines_[line_];
      while (col_ < l.size() && l[col_] == ' ') ++col_;
      if (col_ >= l.size()) {
        ++line_;
        col_ = 0;
        continue;
      }
      std::size_t start = col_;
      while (col_ < l.size() && l[col_] != ' ') ++col_;
      return l.substr(start, col_ - start);
    }
  }

  std::string expect_key(const std::string& key) {
    std::string t = token();
    if (t != key) fail("expected '" + key + "', found '" + t + "'");
    return t;
  }

  std::size_t size_value() {
    std::string t = token();
    char* end = nullptr;
    unsigned long long v = std::strtoull(t.c_str(), &end, 10);
    if (end == t.c_str() || *end != '\0') fail("expected an integer, found '" + t + "'");
    return static_cast<std::size_t>(v);
  }

  double double_value() {
    std::string t = token();
    char* end = nullptr;
    double v = std::strtod(t.c_str(), &end);
    if (end == t.c_str() || *end != '\0') fail("expected a number, found '" + t + "'");
    return v;
  }

  // Remainder of the current line (after skipping one separating space).
  std::string rest_of_line() {
    if (done()) fail("unexpected end of file");
    const std::string& l = lines_[line_];
    if (col_ < l.size() && l[col_] == ' ') ++col_;
    std::string out = l.substr(col_);
    ++line_;
    col_ = 0;
    return out;
  }

  std::string peek_token() {
    std::size_t line = line_, col = col_;
    std::string t = token();
    line_ = line;
    col_ = col;
    return t;
  }

 private:
  std::string origin_;
  std::vector<std::string> lines_;
  std::size_t line_ = 0;
  std::size_t col_ = 0;
};

inline Tensor read_tensor_body(Reader& r, const std::vector<std::size_t>& shape) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = r.double_value();
  return t;
}

// Reads consecutive `tensor` records into the named parameters of `obj`.
template <class Obj>
void read_named_tensors(Reader& r, Obj& obj, const std::string& what) {
  std::vector<std::pair<std::string, Tensor*>> slots;
  obj.for_each_param([&](const char* name, Tensor& t) { slots.emplace_back(name, &t); });
  for (auto& [name, target] : slots) {
    r.expect_key("tensor");
    std::string got = r.token();
    if (got != name) r.fail(what + ": expected tensor '" + name + "', found '" + got + "'");
    std::size_t rank = r.size_value();
    std::vector<std::size_t> shape(rank);
    for (std::size_t d = 0; d < rank; ++d) shape[d] = r.size_value();
    Tensor t = read_tensor_body(r, shape);
    if (!t.same_shape(*target)) {
      r.fail(what + ": tensor '" + name + "' has shape " + t.shape_string() + ", expected " +
             target->shape_string());
    }
    *target = std::move(t);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Domain model files
// ---------------------------------------------------------------------------

inline std::string serialize_model(const DomainModel& m) {
  std::string out;
  out += "deepstack-model " + std::to_string(kModelFormatVersion) + '\n';
  out += "domain " + m.domain_name + '\n';
  out += "embed-dim " + std::to_string(m.embed_dim) + '\n';
  out += "hidden-dim " + std::to_string(m.hidden_dim) + '\n';
  out += "vocab " + std::to_string(m.vocab.size()) + '\n';
  char buf[32];
  for (std::size_t id = 3; id < m.vocab.size(); ++id) {
    std::snprintf(buf, sizeof(buf), "char %zu %X\n", id,
                  static_cast<unsigned>(m.vocab.char_at(id)));
    out += buf;
  }
  m.for_each_param(
      [&](const char* name, const Tensor& t) { detail::append_tensor(out, name, t); });
  out += "end\n";
  return out;
}

inline DomainModel parse_model(std::string_view text, const std::string& origin = "<model>") {
  detail::Reader r(text, origin);
  r.expect_key("deepstack-model");
  if (r.size_value() != static_cast<std::size_t>(kModelFormatVersion)) {
    r.fail("unsupported model format version");
  }
  DomainModel m;
  r.expect_key("domain");
  m.domain_name = r.rest_of_line();
  r.expect_key("embed-dim");
  m.embed_dim = r.size_value();
  r.expect_key("hidden-dim");
  m.hidden_dim = r.size_value();
  r.expect_key("vocab");
  std::size_t vocab_size = r.size_value();
  if (vocab_size < 3) r.fail("vocab size must cover the reserved ids");
  for (std::size_t id = 3; id < vocab_size; ++id) {
    r.expect_key("char");
    if (r.size_value() != id) r.fail("vocab ids must be dense and ascending");
    std::string hex = r.token();
    char* end = nullptr;
    unsigned long cp = std::strtoul(hex.c_str(), &end, 16);
    if (end == hex.c_str() || *end != '\0') r.fail("bad codepoint '" + hex + "'");
    if (m.vocab.add(static_cast<char32_t>(cp)) != static_cast<int>(id)) {
      r.fail("duplicate vocab character '" + hex + "'");
    }
  }
  // Size the parameters, then read them by name.
  m.embeddings = Tensor({vocab_size, m.embed_dim});
  m.fwd = LstmParams::zeros(m.embed_dim, m.hidden_dim);
  m.bwd = LstmParams::zeros(m.embed_dim, m.hidden_dim);
  m.out_w = Tensor({kNumTags, 2 * m.hidden_dim});
  m.out_b = Tensor({kNumTags});
  detail::read_named_tensors(r, m, "model");
  r.expect_key("end");
  return m;
}

inline void save_model(const DomainModel& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model file: " + path.string());
  out << serialize_model(m);
}

inline DomainModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_model(text, path.string());
}

// ---------------------------------------------------------------------------
// Stacker files: configuration, references to the frozen domain-model files
// (path plus content hash), and the learned tensors.
// ---------------------------------------------------------------------------

struct ModelRef {
  std::string path;
  std::uint64_t hash = 0;
};

inline std::uint64_t file_fnv1a64(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file for hashing: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a64(bytes);
}

inline std::string serialize_stacker(const Stacker& s, std::span<const ModelRef> refs) {
  if (refs.size() != s.config.model_count) {
    throw ContractError("serialize_stacker: need one model reference per model");
  }
  std::string out;
  out += "deepstack-stacker " + std::to_string(kStackerFormatVersion) + '\n';
  out += "variant " + variant_name(s.config.variant) + '\n';
  out += "models " + std::to_string(s.config.model_count) + '\n';
  out += "target-index " + std::to_string(s.config.target_index) + '\n';
  out += "sigma ";
  detail::append_double(out, s.config.sigma);
  out += '\n';
  out += "seq-hidden " + std::to_string(s.config.seq_hidden) + '\n';
  out += "order";
  for (std::size_t i : s.config.order()) out += ' ' + std::to_string(i);
  out += '\n';
  out += "sigma-grid";
  for (double g : s.config.sigma_grid) {
    out += ' ';
    detail::append_double(out, g);
  }
  out += '\n';
  char buf[40];
  for (const ModelRef& ref : refs) {
    std::snprintf(buf, sizeof(buf), "model-ref %016" PRIx64 " ", ref.hash);
    out += buf;
    out += ref.path + '\n';
  }
  s.for_each_param(
      [&](const char* name, const Tensor& t) { detail::append_tensor(out, name, t); });
  out += "end\n";
  return out;
}

inline std::pair<Stacker, std::vector<ModelRef>> parse_stacker(
    std::string_view text, const std::string& origin = "<stacker>") {
  detail::Reader r(text, origin);
  r.expect_key("deepstack-stacker");
  if (r.size_value() != static_cast<std::size_t>(kStackerFormatVersion)) {
    r.fail("unsupported stacker format version");
  }
  StackerConfig cfg;
  r.expect_key("variant");
  cfg.variant = parse_variant(r.token());
  r.expect_key("models");
  cfg.model_count = r.size_value();
  r.expect_key("target-index");
  cfg.target_index = r.size_value();
  r.expect_key("sigma");
  cfg.sigma = r.double_value();
  r.expect_key("seq-hidden");
  cfg.seq_hidden = r.size_value();
  r.expect_key("order");
  cfg.model_order.clear();
  for (std::size_t i = 0; i < cfg.model_count; ++i) cfg.model_order.push_back(r.size_value());
  r.expect_key("sigma-grid");
  cfg.sigma_grid.clear();
  while (r.peek_token() != "model-ref") cfg.sigma_grid.push_back(r.double_value());
  std::vector<ModelRef> refs;
  for (std::size_t i = 0; i < cfg.model_count; ++i) {
    r.expect_key("model-ref");
    std::string hex = r.token();
    char* end = nullptr;
    std::uint64_t hash = std::strtoull(hex.c_str(), &end, 16);
    if (end == hex.c_str() || *end != '\0') r.fail("bad model hash '" + hex + "'");
    refs.push_back(ModelRef{r.rest_of_line(), hash});
  }
  cfg.validate();

  Stacker s;
  switch (cfg.variant) {
    case StackerVariant::kConcatenate:
      s.params = ConcatStackParams::zeros(cfg.model_count, kNumTags);
      break;
    case StackerVariant::kSequence:
      s.params = SequenceStackParams::zeros(kNumTags, cfg.seq_hidden);
      break;
    case StackerVariant::kTree:
      s.params = TreeStackParams::zeros(cfg.model_count, kNumTags);
      break;
    case StackerVariant::kGaussian:
    case StackerVariant::kBagging:
      break;
  }
  s.config = std::move(cfg);
  detail::read_named_tensors(r, s, "stacker");
  r.expect_key("end");
  return {std::move(s), std::move(refs)};
}

inline void save_stacker(const Stacker& s, std::span<const ModelRef> refs,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write stacker file: " + path.string());
  out << serialize_stacker(s, refs);
}

inline std::pair<Stacker, std::vector<ModelRef>> load_stacker(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open stacker file: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_stacker(text, path.string());
}

// Resolves a referenced model path: as written first, then relative to the
// stacker file's directory.
inline std::filesystem::path resolve_model_ref(const std::filesystem::path& stacker_path,
                                               const std::string& ref_path) {
  std::filesystem::path p(ref_path);
  if (std::filesystem::exists(p)) return p;
  std::filesystem::path sibling = stacker_path.parent_path() / p;
  if (std::filesystem::exists(sibling)) return sibling;
  throw DataError("referenced model file not found: " + ref_path);
}

inline StackedModel load_stacked_model(const std::filesystem::path& path) {
  auto [stacker, refs] = load_stacker(path);
  StackedModel sm;
  sm.stacker = std::move(stacker);
  for (const ModelRef& ref : refs) {
    std::filesystem::path model_path = resolve_model_ref(path, ref.path);
    std::uint64_t hash = file_fnv1a64(model_path);
    if (hash != ref.hash) {
      throw DataError("model file " + model_path.string() +
                      " does not match the hash recorded in " + path.string());
    }
    sm.models.push_back(load_model(model_path));
  }
  return sm;
}

// ---------------------------------------------------------------------------
// Either kind of model file, detected from the first line.
// ---------------------------------------------------------------------------

using AnyModel = std::variant<DomainModel, StackedModel>;

inline AnyModel load_any_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file: " + path.string());
  std::string first_line;
  std::getline(in, first_line);
  in.close();
  if (first_line.rfind("deepstack-stacker", 0) == 0) return load_stacked_model(path);
  return load_model(path);
}

inline Scores evaluate(const AnyModel& m, const Corpus& gold) {
  return std::visit([&](const auto& inner) { return evaluate(inner, gold); }, m);
}

inline std::vector<std::u32string> segment(const AnyModel& m, std::u32string_view text) {
  return std::visit([&](const auto& inner) { return segment(inner, text); }, m);
}

}  // namespace deepstack
