#include "icelab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "icelab/config_text.hpp"
#include "icelab/errors.hpp"

namespace icelab {

namespace {

constexpr const char* kMagic = "icelab-checkpoint 1";

void put_le(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  os.write(buf, 8);
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::string join(const std::vector<std::string>& xs, char sep) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    out += xs[i];
  }
  return out;
}

}  // namespace

std::string model_config_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "vocab_size = " << c.vocab_size << '\n'
     << "context_window = " << c.context_window << '\n'
     << "architecture = " << to_string(c.architecture) << '\n'
     << "embed_dim = " << c.embed_dim << '\n'
     << "head_count = " << c.head_count << '\n'
     << "ffn_dim = " << c.ffn_dim << '\n'
     << "mlp_window = " << c.mlp_window << '\n'
     << "editable_param_names = " << join(c.editable(), ',') << '\n'
     << "seed = " << c.seed << '\n';
  return os.str();
}

void write_checkpoint(std::ostream& os, const Model& m) {
  os << kMagic << '\n' << model_config_text(m.config) << "[manifest]\n";
  std::size_t offset = 0;
  for (const auto& [name, t] : m.params) {
    os << name << ' ';
    for (std::size_t i = 0; i < t.shape().size(); ++i) os << (i ? "," : "") << t.shape()[i];
    if (t.shape().empty()) os << "scalar";
    os << ' ' << offset << '\n';
    offset += t.size() * 8;
  }
  os << "[data " << offset << "]\n";
  for (const auto& [_, t] : m.params)
    for (double v : t.values()) put_le(os, v);
  if (!os) throw IoError("failed writing checkpoint");
}

Model read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kMagic) throw ParseError("not an icelab checkpoint");
  std::ostringstream header;
  while (std::getline(is, line) && line != "[manifest]") header << line << '\n';
  if (line != "[manifest]") throw ParseError("checkpoint manifest missing");
  ModelConfig config = parse_model_config(parse_key_values(header.str()), true);

  struct Entry {
    std::string name;
    ad::Shape shape;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  std::size_t data_bytes = 0;
  while (std::getline(is, line)) {
    if (line.rfind("[data ", 0) == 0) {
      data_bytes = std::stoull(line.substr(6));
      break;
    }
    std::istringstream ls(line);
    Entry e;
    std::string dims;
    if (!(ls >> e.name >> dims >> e.offset)) throw ParseError("bad manifest line: " + line);
    if (dims != "scalar") {
      std::istringstream ds(dims);
      std::string d;
      while (std::getline(ds, d, ',')) e.shape.push_back(std::stoull(d));
    }
    entries.push_back(std::move(e));
  }
  std::string data(data_bytes, '\0');
  is.read(data.data(), static_cast<std::streamsize>(data_bytes));
  if (static_cast<std::size_t>(is.gcount()) != data_bytes) throw ParseError("truncated checkpoint");

  Model m{config, {}};
  const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
  for (const auto& e : entries) {
    const std::size_t n = ad::shape_size(e.shape);
    if (e.offset + n * 8 > data_bytes) throw ParseError("manifest entry '" + e.name + "' out of range");
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = get_le(bytes + e.offset + 8 * i);
    m.params.add(e.name, ad::Tensor(e.shape, std::move(values)));
  }
  // Cross-check against a fresh model of the same configuration.
  const Model fresh = init_model(config);
  if (fresh.params.size() != m.params.size()) throw StructuralError("checkpoint parameter set mismatch");
  for (const auto& [name, t] : fresh.params) {
    if (!m.params.contains(name) || m.params.at(name).shape() != t.shape()) {
      throw StructuralError("checkpoint parameter '" + name + "' missing or misshapen");
    }
  }
  return m;
}

void save_checkpoint(const std::string& path, const Model& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_checkpoint(os, m);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace icelab
