#include "stden/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "stden/error.hpp"

namespace stden {
namespace {

constexpr char kMagic[] = "STDEN1\n";

std::string real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int k = 0; k < 8; ++k) bytes[k] = static_cast<char>((v >> (8 * k)) & 0xffu);
  out.write(bytes, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw ParseError("checkpoint: truncated header");
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(bytes[k]) << (8 * k);
  return v;
}

std::uint64_t parse_u64(const std::string& text, const std::string& key) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError("checkpoint: key '" + key + "' has invalid integer '" + text + "'");
  }
  return v;
}

double parse_real(const std::string& text, const std::string& key) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError("checkpoint: key '" + key + "' has invalid number '" + text + "'");
  }
  return v;
}

struct TensorEntry {
  std::string name;
  std::uint64_t offset = 0;
  Shape shape;
};

}  // namespace

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const Model& model = ckpt.model;
  const ModelConfig& c = model.config();
  std::ostringstream m;
  m << "kind " << kind_name(c.kind) << '\n'
    << "nodes " << model.node_count() << '\n'
    << "edges " << model.edge_count() << '\n'
    << "history_len " << c.history_len << '\n'
    << "horizon " << c.horizon << '\n'
    << "latent_channels " << c.latent_channels << '\n'
    << "gru_hidden " << c.gru_hidden << '\n'
    << "dynamics " << mode_name(c.dynamics) << '\n'
    << "weighting " << (c.weighting == Weighting::weighted ? "weighted" : "unweighted") << '\n'
    << "train_solver " << method_name(c.train_solver.method) << '\n'
    << "train_substeps " << c.train_solver.substeps_per_interval << '\n'
    << "solver " << method_name(c.solver.method) << '\n'
    << "rtol " << real(c.solver.rtol) << '\n'
    << "atol " << real(c.solver.atol) << '\n'
    << "substeps " << c.solver.substeps_per_interval << '\n'
    << "max_nfe " << c.solver.max_nfe << '\n'
    << "norm_mean " << real(ckpt.normalizer.mean) << '\n'
    << "norm_std " << real(ckpt.normalizer.std) << '\n'
    << "seed " << ckpt.seed << '\n';
  std::uint64_t offset = 0;
  for (const auto& e : model.params().entries()) {
    m << "tensor " << e.name << ' ' << offset;
    for (std::size_t dim : e.value.shape()) m << ' ' << dim;
    m << '\n';
    offset += 8 * e.value.size();
  }
  const std::string manifest = m.str();

  out.write(kMagic, sizeof kMagic - 1);
  put_u64(out, manifest.size());
  out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  for (const auto& e : model.params().entries()) {
    for (double v : e.value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw Error("checkpoint: write failed");
}

Checkpoint load_checkpoint(std::istream& in) {
  char magic[sizeof kMagic - 1];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw ParseError("checkpoint: bad magic (not a checkpoint file)");
  }
  const std::uint64_t length = get_u64(in);
  if (length > (1u << 26)) throw ParseError("checkpoint: implausible manifest length");
  std::string manifest(length, '\0');
  if (!in.read(manifest.data(), static_cast<std::streamsize>(length))) {
    throw ParseError("checkpoint: truncated manifest");
  }

  std::map<std::string, std::string> keys;
  std::vector<TensorEntry> tensors;
  std::istringstream lines(manifest);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (key == "tensor") {
      TensorEntry t;
      std::string offset;
      fields >> t.name >> offset;
      t.offset = parse_u64(offset, "tensor " + t.name);
      std::string dim;
      while (fields >> dim) t.shape.push_back(parse_u64(dim, "tensor " + t.name));
      if (t.name.empty() || t.shape.empty()) throw ParseError("checkpoint: bad tensor line '" + line + "'");
      tensors.push_back(std::move(t));
    } else {
      std::string value;
      fields >> value;
      if (key.empty() || value.empty()) throw ParseError("checkpoint: bad manifest line '" + line + "'");
      keys[key] = value;
    }
  }
  const auto need = [&](const std::string& key) -> const std::string& {
    const auto it = keys.find(key);
    if (it == keys.end()) throw ParseError("checkpoint: manifest lacks key '" + key + "'");
    return it->second;
  };

  ModelConfig c;
  c.kind = parse_kind(need("kind"));
  c.history_len = parse_u64(need("history_len"), "history_len");
  c.horizon = parse_u64(need("horizon"), "horizon");
  c.latent_channels = parse_u64(need("latent_channels"), "latent_channels");
  c.gru_hidden = parse_u64(need("gru_hidden"), "gru_hidden");
  c.dynamics = parse_mode(need("dynamics"));
  c.weighting = need("weighting") == "weighted" ? Weighting::weighted : Weighting::unweighted;
  c.train_solver.method = parse_method(need("train_solver"));
  c.train_solver.substeps_per_interval =
      static_cast<int>(parse_u64(need("train_substeps"), "train_substeps"));
  c.solver.method = parse_method(need("solver"));
  c.solver.rtol = parse_real(need("rtol"), "rtol");
  c.solver.atol = parse_real(need("atol"), "atol");
  c.solver.substeps_per_interval = static_cast<int>(parse_u64(need("substeps"), "substeps"));
  c.solver.max_nfe = static_cast<long>(parse_u64(need("max_nfe"), "max_nfe"));
  const std::size_t nodes = parse_u64(need("nodes"), "nodes");
  const std::size_t edges = parse_u64(need("edges"), "edges");
  Normalizer norm{parse_real(need("norm_mean"), "norm_mean"), parse_real(need("norm_std"), "norm_std")};
  const std::uint64_t seed = parse_u64(need("seed"), "seed");

  ParamStore params;
  std::uint64_t expected_offset = 0;
  for (const TensorEntry& t : tensors) {
    if (t.offset != expected_offset) throw ParseError("checkpoint: tensor '" + t.name + "' offset mismatch");
    Tensor value(t.shape);
    for (double& v : value.data()) v = std::bit_cast<double>(get_u64(in));
    expected_offset += 8 * value.size();
    params.add(t.name, std::move(value));
  }
  return Checkpoint{Model(c, nodes, edges, std::move(params)), norm, seed};
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  save_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  return load_checkpoint(in);
}

}  // namespace stden
