#include "fedlips/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fedlips/error.hpp"

namespace fedlips::model {
namespace {

constexpr std::string_view kMagic = "fedlips-checkpoint";
constexpr int kVersion = 1;

void write_double(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

void write_block(std::string& out, std::string_view name, const Tensor& t) {
  out += name;
  if (t.empty()) {
    out += " 0\n";
    return;
  }
  out += " " + std::to_string(t.rank());
  for (auto d : t.shape()) out += " " + std::to_string(d);
  out += "\n";
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i) out += ' ';
    write_double(out, t[i]);
  }
  out += "\n";
}

class Reader {
 public:
  explicit Reader(std::string_view text) : in_(std::string(text)) {}

  std::string word(std::string_view what) {
    std::string w;
    if (!(in_ >> w)) throw DataError("checkpoint: unexpected end of input reading " + std::string(what));
    return w;
  }

  void expect(std::string_view keyword) {
    const std::string w = word(keyword);
    if (w != keyword) {
      throw DataError("checkpoint: expected '" + std::string(keyword) + "', found '" + w + "'");
    }
  }

  std::size_t count(std::string_view what) {
    const std::string w = word(what);
    char* end = nullptr;
    const unsigned long long v = std::strtoull(w.c_str(), &end, 10);
    if (end == w.c_str() || *end != '\0' || w[0] == '-') {
      throw DataError("checkpoint: bad integer '" + w + "' for " + std::string(what));
    }
    return static_cast<std::size_t>(v);
  }

  int integer(std::string_view what) {
    const std::string w = word(what);
    char* end = nullptr;
    const long v = std::strtol(w.c_str(), &end, 10);
    if (end == w.c_str() || *end != '\0') {
      throw DataError("checkpoint: bad integer '" + w + "' for " + std::string(what));
    }
    return static_cast<int>(v);
  }

  double real(std::string_view what) {
    const std::string w = word(what);
    char* end = nullptr;
    const double v = std::strtod(w.c_str(), &end);
    if (end == w.c_str() || *end != '\0') {
      throw DataError("checkpoint: bad number '" + w + "' in " + std::string(what));
    }
    return v;
  }

  Tensor block(std::string_view name) {
    expect(name);
    const std::size_t rank = count(name);
    if (rank == 0) return {};
    Shape shape(rank);
    for (auto& d : shape) d = count(name);
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = real(name);
    return Tensor(std::move(shape), std::move(values));
  }

 private:
  std::istringstream in_;
};

}  // namespace

std::string serialize_checkpoint(const ModelParams& model) {
  std::string out;
  out += std::string(kMagic) + " " + std::to_string(kVersion) + "\n";
  out += "arch " + model.arch_id + "\n";
  out += "input_shape " + std::to_string(model.input_shape.size());
  for (auto d : model.input_shape) out += " " + std::to_string(d);
  out += "\nnum_classes " + std::to_string(model.num_classes) + "\n";
  out += "width " + std::to_string(model.width) + "\n";
  out += "layers " + std::to_string(model.layers.size()) + "\n";
  for (const LayerParams& l : model.layers) {
    out += "layer " + l.name + " " + std::string(to_string(l.kind)) + " " +
           std::string(to_string(l.role)) + " " + (l.shareable ? "1" : "0") + " " +
           std::to_string(l.stride) + " " + std::to_string(l.pad) + "\n";
    if (l.is_batchnorm()) {
      write_block(out, "gamma", l.bn->gamma);
      write_block(out, "beta", l.bn->beta);
      write_block(out, "running_mean", l.bn->running.mean);
      write_block(out, "running_var", l.bn->running.var);
    } else {
      write_block(out, "weight", l.weight);
      write_block(out, "bias", l.bias);
    }
  }
  out += "end\n";
  return out;
}

ModelParams parse_checkpoint(std::string_view text) {
  Reader r(text);
  r.expect(kMagic);
  if (const int v = r.integer("version"); v != kVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(v));
  }
  ModelParams m;
  r.expect("arch");
  m.arch_id = r.word("arch");
  r.expect("input_shape");
  m.input_shape.resize(r.count("input_shape"));
  for (auto& d : m.input_shape) d = r.count("input_shape");
  r.expect("num_classes");
  m.num_classes = r.count("num_classes");
  r.expect("width");
  m.width = r.count("width");
  r.expect("layers");
  const std::size_t n = r.count("layers");
  for (std::size_t i = 0; i < n; ++i) {
    LayerParams l;
    r.expect("layer");
    l.name = r.word("layer name");
    l.kind = parse_layer_kind(r.word("layer kind"));
    l.role = parse_layer_role(r.word("layer role"));
    l.shareable = r.integer("shareable") != 0;
    l.stride = r.integer("stride");
    l.pad = r.integer("pad");
    if (l.is_batchnorm()) {
      BatchNormParams bn;
      bn.gamma = r.block("gamma");
      bn.beta = r.block("beta");
      bn.running.mean = r.block("running_mean");
      bn.running.var = r.block("running_var");
      l.bn = std::move(bn);
    } else {
      l.weight = r.block("weight");
      l.bias = r.block("bias");
    }
    m.layers.push_back(std::move(l));
  }
  r.expect("end");
  validate(m);
  return m;
}

void save_checkpoint(const ModelParams& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  const std::string text = serialize_checkpoint(model);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace fedlips::model
