#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "icelab/graph.hpp"
#include "icelab/param_set.hpp"

namespace icelab {

using Token = int;
using TokenSeq = std::vector<Token>;

// Reserved in every vocabulary.
inline constexpr Token kBos = 0;
inline constexpr Token kEos = 1;

using Rng = std::mt19937_64;

enum class Architecture { kBigramTable, kMlp, kTransformer1Block };

std::string to_string(Architecture a);
Architecture parse_architecture(const std::string& name);

struct ModelConfig {
  int vocab_size = 0;
  // Longest token sequence the model scores, begin token included.
  int context_window = 32;
  Architecture architecture = Architecture::kTransformer1Block;
  int embed_dim = 32;
  int head_count = 2;
  // Hidden width of the transformer feed-forward block or the MLP.
  int ffn_dim = 128;
  // Number of trailing tokens the MLP reads.
  int mlp_window = 2;
  // Empty selects the architecture default (see default_editable_params).
  std::vector<std::string> editable_param_names;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<std::string> editable() const;
};

// bigram_table: the table; mlp: the hidden layer; transformer: the
// feed-forward block.
std::vector<std::string> default_editable_params(Architecture a);

struct Model {
  ModelConfig config;
  ParamSet params;
};

// Graph nodes for each parameter of a model.
using Binding = std::map<std::string, ad::Var>;

// Constant view of the parameters; nothing flows back.
Binding bind_constant(ad::Graph& g, const ParamSet& params);
// Leaves for every parameter; parameters with requires_grad receive gradients.
Binding bind_trainable(ad::Graph& g, ParamSet& params);

Model init_model(const ModelConfig& config);

// Logits for every position of `tokens`: row t scores the token following
// tokens[0..t].
ad::Var forward_logits(ad::Graph& g, const Binding& b, const ModelConfig& config,
                       std::span<const Token> tokens);

std::vector<double> next_token_log_probs(const Model& m, std::span<const Token> prefix);

// log p(continuation | prefix); 0 for an empty continuation.
double sequence_log_prob(const Model& m, std::span<const Token> prefix,
                         std::span<const Token> continuation);

// Differentiable -log p(continuation | prefix) on the given graph.
ad::Var sequence_nll(ad::Graph& g, const Binding& b, const ModelConfig& config,
                     std::span<const Token> prefix, std::span<const Token> continuation);

// Temperatures below this decode greedily.
inline constexpr double kGreedyTemperature = 1e-6;

// With top_k > 0 only the k most likely tokens (lowest index on ties) can be
// drawn.
TokenSeq sample_completion(const Model& m, std::span<const Token> prefix, int length,
                           double temperature, Rng& rng, int top_k = 0);

// Index of the largest entry, lowest index on ties.
int argmax_lowest(std::span<const double> values);

// Greedy continuation of at most max_len tokens. Stops after emitting the end
// token, which is kept in the output.
TokenSeq greedy_decode(const Model& m, std::span<const Token> prefix, int max_len);

// Projects the named entries into the inf-norm ball of `radius` around
// `origin`.
void clamp_to_ball(ParamSet& params, const ParamSet& origin, double radius,
                   const std::vector<std::string>& names);

void check_tokens(const ModelConfig& config, std::span<const Token> tokens);

}  // namespace icelab
