#include "icelab/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <limits>

#include "icelab/errors.hpp"

namespace icelab {

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::kBigramTable: return "bigram_table";
    case Architecture::kMlp: return "mlp";
    case Architecture::kTransformer1Block: return "transformer_1block";
  }
  return "unknown";
}

Architecture parse_architecture(const std::string& name) {
  if (name == "bigram_table") return Architecture::kBigramTable;
  if (name == "mlp") return Architecture::kMlp;
  if (name == "transformer_1block") return Architecture::kTransformer1Block;
  throw ConfigError("unknown architecture '" + name + "'");
}

std::vector<std::string> default_editable_params(Architecture a) {
  switch (a) {
    case Architecture::kBigramTable: return {"table"};
    case Architecture::kMlp: return {"mlp_b1", "mlp_w1"};
    case Architecture::kTransformer1Block: return {"ffn_b1", "ffn_b2", "ffn_w1", "ffn_w2"};
  }
  return {};
}

void ModelConfig::validate() const {
  if (vocab_size < 3) throw ConfigError("vocab_size must be at least 3 (two reserved tokens)");
  if (context_window < 2) throw ConfigError("context_window must be at least 2");
  if (architecture != Architecture::kBigramTable) {
    if (embed_dim < 1) throw ConfigError("embed_dim must be positive");
    if (ffn_dim < 1) throw ConfigError("ffn_dim must be positive");
  }
  if (architecture == Architecture::kTransformer1Block) {
    if (head_count < 1 || embed_dim % head_count != 0) {
      throw ConfigError("embed_dim must be divisible by head_count");
    }
  }
  if (architecture == Architecture::kMlp && mlp_window < 1) {
    throw ConfigError("mlp_window must be positive");
  }
}

std::vector<std::string> ModelConfig::editable() const {
  return editable_param_names.empty() ? default_editable_params(architecture)
                                      : editable_param_names;
}

Binding bind_constant(ad::Graph& g, const ParamSet& params) {
  Binding b;
  for (const auto& [name, t] : params) {
    auto v = t.values();
    b.emplace(name, g.constant(t.shape(), std::vector<double>(v.begin(), v.end())));
  }
  return b;
}

Binding bind_trainable(ad::Graph& g, ParamSet& params) {
  Binding b;
  for (auto& [name, t] : params) b.emplace(name, g.leaf(t));
  return b;
}

namespace {

ad::Tensor normal_tensor(ad::Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  ad::Tensor t = ad::Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

ad::Tensor filled(ad::Shape shape, double value) {
  ad::Tensor t = ad::Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = value;
  return t;
}

ad::Var param(const Binding& b, const char* name) {
  auto it = b.find(name);
  if (it == b.end()) throw StructuralError(std::string("missing parameter '") + name + "'");
  return it->second;
}

ad::Var forward_bigram(ad::Graph& g, const Binding& b, std::span<const Token> tokens) {
  return g.gather_rows(param(b, "table"), tokens);
}

ad::Var forward_mlp(ad::Graph& g, const Binding& b, const ModelConfig& c,
                    std::span<const Token> tokens) {
  const std::size_t n = tokens.size();
  std::vector<ad::Var> parts;
  for (int k = 0; k < c.mlp_window; ++k) {
    const int back = c.mlp_window - 1 - k;
    std::vector<int> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto src = static_cast<std::ptrdiff_t>(i) - back;
      idx[i] = src >= 0 ? tokens[static_cast<std::size_t>(src)] : kBos;
    }
    parts.push_back(g.gather_rows(param(b, "embed"), idx));
  }
  ad::Var x = g.concat_cols(parts);
  ad::Var h = g.tanh(g.add_row(g.matmul(x, param(b, "mlp_w1")), param(b, "mlp_b1")));
  return g.add_row(g.matmul(h, param(b, "mlp_w2")), param(b, "mlp_b2"));
}

ad::Var forward_transformer(ad::Graph& g, const Binding& b, const ModelConfig& c,
                            std::span<const Token> tokens) {
  const std::size_t n = tokens.size();
  std::vector<int> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<int>(i);
  ad::Var x = g.add(g.gather_rows(param(b, "tok_embed"), tokens),
                    g.gather_rows(param(b, "pos_embed"), positions));

  ad::Var a = g.layer_norm_rows(x, param(b, "ln1_g"), param(b, "ln1_b"));
  ad::Var q = g.matmul(a, param(b, "attn_wq"));
  ad::Var k = g.matmul(a, param(b, "attn_wk"));
  ad::Var v = g.matmul(a, param(b, "attn_wv"));
  const std::size_t dh = static_cast<std::size_t>(c.embed_dim / c.head_count);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ad::Var> heads;
  for (int h = 0; h < c.head_count; ++h) {
    const std::size_t lo = static_cast<std::size_t>(h) * dh;
    ad::Var qh = g.slice_cols(q, lo, lo + dh);
    ad::Var kh = g.slice_cols(k, lo, lo + dh);
    ad::Var vh = g.slice_cols(v, lo, lo + dh);
    ad::Var att = g.causal_softmax_rows(g.scale(g.matmul_nt(qh, kh), inv_sqrt));
    heads.push_back(g.matmul(att, vh));
  }
  ad::Var attn = g.matmul(heads.size() == 1 ? heads[0] : g.concat_cols(heads),
                          param(b, "attn_wo"));
  x = g.add(x, attn);

  ad::Var f = g.layer_norm_rows(x, param(b, "ln2_g"), param(b, "ln2_b"));
  f = g.gelu(g.add_row(g.matmul(f, param(b, "ffn_w1")), param(b, "ffn_b1")));
  f = g.add_row(g.matmul(f, param(b, "ffn_w2")), param(b, "ffn_b2"));
  x = g.add(x, f);

  return g.add_row(g.matmul(x, param(b, "unembed")), param(b, "unembed_b"));
}

std::vector<double> row_of(const ad::Graph& g, ad::Var m, std::size_t row) {
  const std::size_t cols = g.shape(m)[1];
  auto v = g.value(m);
  return {v.begin() + static_cast<std::ptrdiff_t>(row * cols),
          v.begin() + static_cast<std::ptrdiff_t>((row + 1) * cols)};
}

std::vector<double> log_normalize(std::span<const double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

void check_window(const ModelConfig& c, std::size_t length) {
  if (length > static_cast<std::size_t>(c.context_window)) {
    throw ContextOverflow("sequence of " + std::to_string(length) +
                          " tokens exceeds context window " + std::to_string(c.context_window));
  }
}

}  // namespace

void check_tokens(const ModelConfig& config, std::span<const Token> tokens) {
  for (Token t : tokens) {
    if (t < 0 || t >= config.vocab_size) {
      throw InputError("token " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(config.vocab_size));
    }
  }
}

Model init_model(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const auto v = static_cast<std::size_t>(config.vocab_size);
  const auto d = static_cast<std::size_t>(config.embed_dim);
  const auto h = static_cast<std::size_t>(config.ffn_dim);
  const auto w = static_cast<std::size_t>(config.context_window);
  Model m{config, {}};
  auto& p = m.params;
  switch (config.architecture) {
    case Architecture::kBigramTable:
      p.add("table", ad::Tensor::zeros({v, v}));
      break;
    case Architecture::kMlp: {
      const auto in = d * static_cast<std::size_t>(config.mlp_window);
      p.add("embed", normal_tensor({v, d}, 1.0, rng));
      p.add("mlp_w1", normal_tensor({in, h}, 1.0 / std::sqrt(double(in)), rng));
      p.add("mlp_b1", ad::Tensor::zeros({1, h}));
      p.add("mlp_w2", normal_tensor({h, v}, 1.0 / std::sqrt(double(h)), rng));
      p.add("mlp_b2", ad::Tensor::zeros({1, v}));
      break;
    }
    case Architecture::kTransformer1Block: {
      const double sd = 1.0 / std::sqrt(double(d));
      p.add("tok_embed", normal_tensor({v, d}, 1.0, rng));
      p.add("pos_embed", normal_tensor({w, d}, 0.5, rng));
      p.add("ln1_g", filled({1, d}, 1.0));
      p.add("ln1_b", ad::Tensor::zeros({1, d}));
      p.add("attn_wq", normal_tensor({d, d}, sd, rng));
      p.add("attn_wk", normal_tensor({d, d}, sd, rng));
      p.add("attn_wv", normal_tensor({d, d}, sd, rng));
      p.add("attn_wo", normal_tensor({d, d}, sd, rng));
      p.add("ln2_g", filled({1, d}, 1.0));
      p.add("ln2_b", ad::Tensor::zeros({1, d}));
      p.add("ffn_w1", normal_tensor({d, h}, sd, rng));
      p.add("ffn_b1", ad::Tensor::zeros({1, h}));
      p.add("ffn_w2", normal_tensor({h, d}, 1.0 / std::sqrt(double(h)), rng));
      p.add("ffn_b2", ad::Tensor::zeros({1, d}));
      p.add("unembed", normal_tensor({d, v}, sd, rng));
      p.add("unembed_b", ad::Tensor::zeros({1, v}));
      break;
    }
  }
  for (const auto& name : config.editable()) {
    if (!p.contains(name)) {
      throw ConfigError("editable parameter '" + name + "' is not part of a " +
                        to_string(config.architecture) + " model");
    }
  }
  if (config.editable().empty()) throw ConfigError("editable_param_names is empty");
  return m;
}

ad::Var forward_logits(ad::Graph& g, const Binding& b, const ModelConfig& config,
                       std::span<const Token> tokens) {
  if (tokens.empty()) throw InputError("forward on an empty sequence");
  check_window(config, tokens.size());
  check_tokens(config, tokens);
  switch (config.architecture) {
    case Architecture::kBigramTable: return forward_bigram(g, b, tokens);
    case Architecture::kMlp: return forward_mlp(g, b, config, tokens);
    case Architecture::kTransformer1Block: return forward_transformer(g, b, config, tokens);
  }
  throw ConfigError("unknown architecture");
}

std::vector<double> next_token_log_probs(const Model& m, std::span<const Token> prefix) {
  if (prefix.empty()) throw InputError("next_token_log_probs needs a nonempty prefix");
  ad::Graph g(false);
  const Binding b = bind_constant(g, m.params);
  ad::Var logits = forward_logits(g, b, m.config, prefix);
  return log_normalize(row_of(g, logits, prefix.size() - 1));
}

double sequence_log_prob(const Model& m, std::span<const Token> prefix,
                         std::span<const Token> continuation) {
  if (continuation.empty()) return 0.0;
  ad::Graph g(false);
  const Binding b = bind_constant(g, m.params);
  return -g.scalar(sequence_nll(g, b, m.config, prefix, continuation));
}

ad::Var sequence_nll(ad::Graph& g, const Binding& b, const ModelConfig& config,
                     std::span<const Token> prefix, std::span<const Token> continuation) {
  if (prefix.empty()) throw InputError("sequence scoring needs a nonempty prefix");
  if (continuation.empty()) return g.constant({}, {0.0});
  check_window(config, prefix.size() + continuation.size());
  std::vector<Token> full(prefix.begin(), prefix.end());
  full.insert(full.end(), continuation.begin(), continuation.end());
  full.pop_back();
  ad::Var logp = g.log_softmax_rows(forward_logits(g, b, config, full));
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  picks.reserve(continuation.size());
  for (std::size_t i = 0; i < continuation.size(); ++i) {
    check_tokens(config, continuation.subspan(i, 1));
    picks.emplace_back(prefix.size() - 1 + i, static_cast<std::size_t>(continuation[i]));
  }
  return g.scale(g.sum(g.pick(logp, picks)), -1.0);
}

int argmax_lowest(std::span<const double> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

TokenSeq sample_completion(const Model& m, std::span<const Token> prefix, int length,
                           double temperature, Rng& rng, int top_k) {
  if (!(temperature > 0.0)) throw ConfigError("sampling temperature must be positive");
  if (top_k < 0) throw ConfigError("top_k must be nonnegative");
  if (length < 0) throw ConfigError("sample length must be nonnegative");
  if (prefix.empty()) throw InputError("sampling needs a nonempty prefix");
  check_window(m.config, prefix.size() + static_cast<std::size_t>(length));
  std::vector<Token> seq(prefix.begin(), prefix.end());
  TokenSeq out;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int step = 0; step < length; ++step) {
    const auto logp = next_token_log_probs(m, seq);
    Token next = 0;
    if (temperature < kGreedyTemperature) {
      next = argmax_lowest(logp);
    } else {
      double mx = -std::numeric_limits<double>::infinity();
      for (double v : logp) mx = std::max(mx, v / temperature);
      std::vector<double> w(logp.size());
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(logp[i] / temperature - mx);
      if (top_k > 0 && static_cast<std::size_t>(top_k) < w.size()) {
        std::vector<std::size_t> order(w.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return logp[a] > logp[b]; });
        for (std::size_t r = static_cast<std::size_t>(top_k); r < order.size(); ++r)
          w[order[r]] = 0.0;
      }
      double z = 0.0;
      for (double x : w) z += x;
      const double u = unif(rng) * z;
      double acc = 0.0;
      next = static_cast<Token>(w.size() - 1);
      for (std::size_t i = 0; i < w.size(); ++i) {
        acc += w[i];
        if (u < acc) {
          next = static_cast<Token>(i);
          break;
        }
      }
    }
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

TokenSeq greedy_decode(const Model& m, std::span<const Token> prefix, int max_len) {
  if (prefix.empty()) throw InputError("decoding needs a nonempty prefix");
  if (max_len < 0) throw ConfigError("max_len must be nonnegative");
  check_window(m.config, prefix.size() + static_cast<std::size_t>(max_len));
  std::vector<Token> seq(prefix.begin(), prefix.end());
  TokenSeq out;
  for (int step = 0; step < max_len; ++step) {
    const Token next = argmax_lowest(next_token_log_probs(m, seq));
    out.push_back(next);
    if (next == kEos) break;
    seq.push_back(next);
  }
  return out;
}

void clamp_to_ball(ParamSet& params, const ParamSet& origin, double radius,
                   const std::vector<std::string>& names) {
  if (!(radius > 0.0)) throw ConfigError("clamp radius must be positive");
  for (const auto& name : names) {
    auto& t = params.at(name);
    const auto& o = origin.at(name);
    if (t.shape() != o.shape()) {
      throw StructuralError("clamp_to_ball: shape mismatch for '" + name + "'");
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      double x = std::clamp(t[i], o[i] - radius, o[i] + radius);
      // o +- radius can round outward; step back until the measured
      // deviation is within the radius.
      while (std::abs(x - o[i]) > radius) x = std::nextafter(x, o[i]);
      t[i] = x;
    }
  }
  params.bump_version();
}

}  // namespace icelab
