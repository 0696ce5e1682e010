#include "icelab/config_text.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "icelab/errors.hpp"

namespace icelab {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T out{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty key");
    if (!kv.emplace(key, value).second) {
      throw ParseError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

int kv_int(const KeyValues& kv, const std::string& key, int fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : parse_number<int>(key, it->second);
}

double kv_double(const KeyValues& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : parse_number<double>(key, it->second);
}

std::uint64_t kv_u64(const KeyValues& kv, const std::string& key, std::uint64_t fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : parse_number<std::uint64_t>(key, it->second);
}

std::string kv_string(const KeyValues& kv, const std::string& key, const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

const std::vector<std::string>& model_config_keys() {
  static const std::vector<std::string> keys{
      "vocab_size", "context_window", "architecture", "embed_dim", "head_count",
      "ffn_dim",    "mlp_window",     "editable_param_names",      "seed"};
  return keys;
}

const std::vector<std::string>& edit_config_keys() {
  static const std::vector<std::string> keys{
      "lambda",  "lr",         "max_steps",   "clip_grad",       "clamp_radius",
      "samples", "sample_len", "temperature", "variant",         "convergence_tol",
      "convergence_patience", "top_k"};
  return keys;
}

const std::vector<std::string>& metrics_config_keys() {
  static const std::vector<std::string> keys{"w2", "w3", "eval_decode_len", "probe_decode_len"};
  return keys;
}

void reject_unknown_keys(const KeyValues& kv,
                         std::initializer_list<const std::vector<std::string>*> allowed) {
  for (const auto& [key, _] : kv) {
    bool known = false;
    for (const auto* list : allowed)
      known = known || std::find(list->begin(), list->end(), key) != list->end();
    if (!known) throw ConfigError("unknown config key '" + key + "'");
  }
}

ModelConfig parse_model_config(const KeyValues& kv, bool strict) {
  if (strict) reject_unknown_keys(kv, {&model_config_keys()});
  ModelConfig c;
  c.vocab_size = kv_int(kv, "vocab_size", c.vocab_size);
  c.context_window = kv_int(kv, "context_window", c.context_window);
  if (auto it = kv.find("architecture"); it != kv.end()) {
    c.architecture = parse_architecture(it->second);
  }
  c.embed_dim = kv_int(kv, "embed_dim", c.embed_dim);
  c.head_count = kv_int(kv, "head_count", c.head_count);
  c.ffn_dim = kv_int(kv, "ffn_dim", c.ffn_dim);
  c.mlp_window = kv_int(kv, "mlp_window", c.mlp_window);
  if (auto it = kv.find("editable_param_names"); it != kv.end()) {
    c.editable_param_names = split_list(it->second);
  }
  c.seed = kv_u64(kv, "seed", c.seed);
  return c;
}

EditConfig parse_edit_config(const KeyValues& kv, EditConfig c) {
  c.lambda = kv_double(kv, "lambda", c.lambda);
  c.lr = kv_double(kv, "lr", c.lr);
  c.max_steps = kv_int(kv, "max_steps", c.max_steps);
  c.clip_grad = kv_double(kv, "clip_grad", c.clip_grad);
  c.clamp_radius = kv_double(kv, "clamp_radius", c.clamp_radius);
  c.samples = kv_int(kv, "samples", c.samples);
  c.sample_len = kv_int(kv, "sample_len", c.sample_len);
  c.temperature = kv_double(kv, "temperature", c.temperature);
  c.top_k = kv_int(kv, "top_k", c.top_k);
  if (auto it = kv.find("variant"); it != kv.end()) c.variant = parse_variant(it->second);
  c.convergence_tol = kv_double(kv, "convergence_tol", c.convergence_tol);
  c.convergence_patience = kv_int(kv, "convergence_patience", c.convergence_patience);
  return c;
}

MetricsConfig parse_metrics_config(const KeyValues& kv, MetricsConfig c) {
  c.w2 = kv_double(kv, "w2", c.w2);
  c.w3 = kv_double(kv, "w3", c.w3);
  c.eval_decode_len = kv_int(kv, "eval_decode_len", c.eval_decode_len);
  c.probe_decode_len = kv_int(kv, "probe_decode_len", c.probe_decode_len);
  return c;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string edit_config_text(const EditConfig& c) {
  std::ostringstream os;
  os << "lambda = " << format_double(c.lambda) << '\n'
     << "lr = " << format_double(c.lr) << '\n'
     << "max_steps = " << c.max_steps << '\n'
     << "clip_grad = " << format_double(c.clip_grad) << '\n'
     << "clamp_radius = " << format_double(c.clamp_radius) << '\n'
     << "samples = " << c.samples << '\n'
     << "sample_len = " << c.sample_len << '\n'
     << "temperature = " << format_double(c.temperature) << '\n'
     << "top_k = " << c.top_k << '\n'
     << "variant = " << to_string(c.variant) << '\n'
     << "convergence_tol = " << format_double(c.convergence_tol) << '\n'
     << "convergence_patience = " << c.convergence_patience << '\n';
  return os.str();
}

std::string metrics_config_text(const MetricsConfig& c) {
  std::ostringstream os;
  os << "w2 = " << format_double(c.w2) << '\n'
     << "w3 = " << format_double(c.w3) << '\n'
     << "eval_decode_len = " << c.eval_decode_len << '\n'
     << "probe_decode_len = " << c.probe_decode_len << '\n';
  return os.str();
}

}  // namespace icelab
