#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "icelab/model.hpp"
#include "icelab/record.hpp"

namespace icelab {

enum class Variant {
  kFt,
  kFtClamped,
  kFtSampling,
  kIceDynamic,
  kIceStatic,
  kIceNoContext,
  kIceStaticNoContext,
};

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

struct VariantTraits {
  bool samples;   // draws completions after the target
  bool context;   // conditions the sampler on a context statement
  bool dynamic;   // sampler follows the current parameters (else frozen at the start)
  bool clamped;   // projects into the weight ball after every step
};

VariantTraits traits(Variant v);

struct EditConfig {
  double lambda = 1.0;
  double lr = 7e-4;
  int max_steps = 25;
  double clip_grad = 1.0;
  double clamp_radius = 5e-4;
  int samples = 5;
  int sample_len = 5;
  double temperature = 100.0;
  // Truncates sampling to the k most likely tokens; 0 keeps the full vocabulary.
  int top_k = 0;
  Variant variant = Variant::kIceDynamic;
  double convergence_tol = 1e-4;
  int convergence_patience = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

// -log p(x* | q). `query` excludes the begin token.
ad::Var ft_loss(ad::Graph& g, const Binding& b, const ModelConfig& config, const TokenSeq& query,
                const TokenSeq& target);
double ft_loss_value(const Model& m, const TokenSeq& query, const TokenSeq& target);

// Prefix the sampler conditions on: [bos, context, query, target].
TokenSeq sampling_prefix(const TokenSeq& context, const TokenSeq& query, const TokenSeq& target);

std::vector<TokenSeq> draw_completions(const Model& sampler, const TokenSeq& prefix, int count,
                                       int length, double temperature, Rng& rng, int top_k = 0);

// Mean over completions of -log p([x*, x_c] | q), gradient through `b` only.
ad::Var combined_sequence_nll(ad::Graph& g, const Binding& b, const ModelConfig& config,
                              const TokenSeq& query, const TokenSeq& target,
                              const std::vector<TokenSeq>& completions);

// Mean over completions of -log p(x_c | [q, x*]).
ad::Var completion_nll(ad::Graph& g, const Binding& b, const ModelConfig& config,
                       const TokenSeq& query, const TokenSeq& target,
                       const std::vector<TokenSeq>& completions);

// Monte Carlo estimate of E[-log p_live([x*, x_c] | q)] with x_c drawn from
// the detached `target` model conditioned on [c, q, x*].
ad::Var ice_loss(ad::Graph& g, const Binding& live, const ModelConfig& config, const Model& target,
                 const TokenSeq& context, const TokenSeq& query, const TokenSeq& x_star,
                 int samples, int sample_len, double temperature, Rng& rng, int top_k = 0);

// Same estimator with the sampler frozen at the pre-edit parameters.
ad::Var sample_loss_static(ad::Graph& g, const Binding& live, const ModelConfig& config,
                           const Model& theta0, const TokenSeq& context, const TokenSeq& query,
                           const TokenSeq& x_star, int samples, int sample_len,
                           double temperature, Rng& rng, int top_k = 0);

struct StepRecord {
  int step = 0;
  double ft = 0.0;        // -log p(x* | q)
  double ice = 0.0;       // mean completion NLL, 0 without sampling
  double combined = 0.0;  // ft + lambda * ice
  double grad_inf_norm = 0.0;
  double param_delta_inf_norm = 0.0;
};

struct EditOutcome {
  ParamSet final_params;
  int steps_taken = 0;
  std::vector<StepRecord> loss_trace;
  bool converged = false;
  double param_delta_inf_norm = 0.0;
};

// Called after each update with the step index and the updated model.
using StepObserver = std::function<void(const StepRecord&, const Model&)>;

// Seed of the sampler stream for one optimization step.
std::uint64_t step_seed(std::uint64_t seed, int step);

EditOutcome ice_edit(const Model& model, const TokenizedRecord& record, const EditConfig& config,
                     const StepObserver& observer = {});

}  // namespace icelab
