#include "icelab/editing.hpp"

#include <cmath>

#include "icelab/errors.hpp"

namespace icelab {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFt: return "FT";
    case Variant::kFtClamped: return "FT_CLAMPED";
    case Variant::kFtSampling: return "FT_SAMPLING";
    case Variant::kIceDynamic: return "ICE_DYNAMIC";
    case Variant::kIceStatic: return "ICE_STATIC";
    case Variant::kIceNoContext: return "ICE_NO_CONTEXT";
    case Variant::kIceStaticNoContext: return "ICE_STATIC_NO_CONTEXT";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::kFt, Variant::kFtClamped, Variant::kFtSampling, Variant::kIceDynamic,
                    Variant::kIceStatic, Variant::kIceNoContext, Variant::kIceStaticNoContext}) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + name + "'");
}

VariantTraits traits(Variant v) {
  switch (v) {
    case Variant::kFt: return {false, false, true, false};
    case Variant::kFtClamped: return {false, false, true, true};
    case Variant::kFtSampling: return {true, false, true, false};
    case Variant::kIceDynamic: return {true, true, true, true};
    case Variant::kIceStatic: return {true, true, false, true};
    case Variant::kIceNoContext: return {true, false, true, true};
    case Variant::kIceStaticNoContext: return {true, false, false, true};
  }
  throw ConfigError("unknown variant");
}

void EditConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (max_steps < 1) throw ConfigError("max_steps must be at least 1");
  if (!(clip_grad > 0.0)) throw ConfigError("clip_grad must be positive");
  if (!(clamp_radius > 0.0)) throw ConfigError("clamp_radius must be positive");
  if (samples < 1) throw ConfigError("samples must be at least 1");
  if (sample_len < 0) throw ConfigError("sample_len must be nonnegative");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (top_k < 0) throw ConfigError("top_k must be nonnegative");
  if (!(convergence_tol >= 0.0)) throw ConfigError("convergence_tol must be nonnegative");
  if (convergence_patience < 1) throw ConfigError("convergence_patience must be at least 1");
}

ad::Var ft_loss(ad::Graph& g, const Binding& b, const ModelConfig& config, const TokenSeq& query,
                const TokenSeq& target) {
  if (target.empty()) throw ContractViolation("ft_loss: empty target");
  return sequence_nll(g, b, config, with_bos({query}), target);
}

double ft_loss_value(const Model& m, const TokenSeq& query, const TokenSeq& target) {
  if (target.empty()) throw ContractViolation("ft_loss: empty target");
  return -sequence_log_prob(m, with_bos({query}), target);
}

TokenSeq sampling_prefix(const TokenSeq& context, const TokenSeq& query, const TokenSeq& target) {
  return with_bos({context, query, target});
}

std::vector<TokenSeq> draw_completions(const Model& sampler, const TokenSeq& prefix, int count,
                                       int length, double temperature, Rng& rng, int top_k) {
  if (count < 1) throw ConfigError("sample count must be at least 1");
  std::vector<TokenSeq> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k)
    out.push_back(sample_completion(sampler, prefix, length, temperature, rng, top_k));
  return out;
}

ad::Var combined_sequence_nll(ad::Graph& g, const Binding& b, const ModelConfig& config,
                              const TokenSeq& query, const TokenSeq& target,
                              const std::vector<TokenSeq>& completions) {
  if (completions.empty()) throw ContractViolation("combined_sequence_nll: no completions");
  if (target.empty()) throw ContractViolation("combined_sequence_nll: empty target");
  const TokenSeq prefix = with_bos({query});
  std::vector<ad::Var> terms;
  ad::Var total = sequence_nll(g, b, config, prefix, concat(target, completions[0]));
  for (std::size_t k = 1; k < completions.size(); ++k)
    total = g.add(total, sequence_nll(g, b, config, prefix, concat(target, completions[k])));
  return g.scale(total, 1.0 / static_cast<double>(completions.size()));
}

ad::Var completion_nll(ad::Graph& g, const Binding& b, const ModelConfig& config,
                       const TokenSeq& query, const TokenSeq& target,
                       const std::vector<TokenSeq>& completions) {
  if (completions.empty()) throw ContractViolation("completion_nll: no completions");
  const TokenSeq prefix = with_bos({query, target});
  ad::Var total = sequence_nll(g, b, config, prefix, completions[0]);
  for (std::size_t k = 1; k < completions.size(); ++k)
    total = g.add(total, sequence_nll(g, b, config, prefix, completions[k]));
  return g.scale(total, 1.0 / static_cast<double>(completions.size()));
}

ad::Var ice_loss(ad::Graph& g, const Binding& live, const ModelConfig& config, const Model& target,
                 const TokenSeq& context, const TokenSeq& query, const TokenSeq& x_star,
                 int samples, int sample_len, double temperature, Rng& rng, int top_k) {
  if (samples < 1) throw ConfigError("ice_loss: samples must be at least 1");
  const auto completions = draw_completions(target, sampling_prefix(context, query, x_star),
                                            samples, sample_len, temperature, rng, top_k);
  return combined_sequence_nll(g, live, config, query, x_star, completions);
}

ad::Var sample_loss_static(ad::Graph& g, const Binding& live, const ModelConfig& config,
                           const Model& theta0, const TokenSeq& context, const TokenSeq& query,
                           const TokenSeq& x_star, int samples, int sample_len,
                           double temperature, Rng& rng, int top_k) {
  return ice_loss(g, live, config, theta0, context, query, x_star, samples, sample_len,
                  temperature, rng, top_k);
}

std::uint64_t step_seed(std::uint64_t seed, int step) {
  // splitmix64 finalizer over (seed, step)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(step) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

EditOutcome ice_edit(const Model& model, const TokenizedRecord& record, const EditConfig& config,
                     const StepObserver& observer) {
  config.validate();
  const VariantTraits vt = traits(config.variant);
  if (record.target.empty()) throw InputError("edit record has an empty target");
  if (vt.context && record.contexts.empty()) {
    throw InputError("variant " + to_string(config.variant) + " needs at least one context");
  }

  const auto editable = model.config.editable();
  Model live = model;
  live.params.clear_grads();
  live.params.set_trainable(editable);
  const ParamSet origin = model.params.snapshot();
  const Model& frozen = model;
  const bool sampling = vt.samples && config.lambda > 0.0;

  EditOutcome out;
  double previous = 0.0;
  int flat_steps = 0;
  for (int s = 0; s < config.max_steps; ++s) {
    std::vector<TokenSeq> completions;
    if (sampling) {
      Rng rng(step_seed(config.seed, s));
      const TokenSeq empty;
      const TokenSeq& ctx =
          vt.context ? record.contexts[static_cast<std::size_t>(s) % record.contexts.size()] : empty;
      const Model& sampler = vt.dynamic ? live : frozen;
      completions = draw_completions(sampler, sampling_prefix(ctx, record.query, record.target),
                                     config.samples, config.sample_len, config.temperature, rng,
                                     config.top_k);
    }

    live.params.zero_grads();
    ad::Graph g;
    const Binding b = bind_trainable(g, live.params);
    ad::Var ft = ft_loss(g, b, live.config, record.query, record.target);
    ad::Var loss = ft;
    double ice_value = 0.0;
    if (sampling && config.sample_len > 0) {
      ad::Var ice = completion_nll(g, b, live.config, record.query, record.target, completions);
      ice_value = g.scalar(ice);
      loss = g.add(ft, g.scale(ice, config.lambda));
    }

    StepRecord rec;
    rec.step = s;
    rec.ft = g.scalar(ft);
    rec.ice = ice_value;
    rec.combined = g.scalar(loss);
    if (!std::isfinite(rec.combined)) {
      throw NumericalError("edit loss is not finite at step " + std::to_string(s) + " (ft=" +
                           std::to_string(rec.ft) + ", ice=" + std::to_string(rec.ice) + ")");
    }
    g.backward(loss);
    rec.grad_inf_norm = grad_inf_norm(live.params);
    clip_gradients(live.params, config.clip_grad);
    for (const auto& name : editable) {
      auto& t = live.params.at(name);
      auto v = t.values();
      auto gr = t.grad();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= config.lr * gr[i];
    }
    live.params.bump_version();
    if (vt.clamped) clamp_to_ball(live.params, origin, config.clamp_radius, editable);
    if (!live.params.all_finite()) {
      throw NumericalError("parameters became non-finite at step " + std::to_string(s));
    }
    rec.param_delta_inf_norm = max_abs_difference(live.params, origin, editable);
    out.loss_trace.push_back(rec);
    if (observer) observer(rec, live);

    if (s > 0) {
      const double scale = std::max(std::abs(previous), 1e-12);
      if (std::abs(previous - rec.combined) / scale < config.convergence_tol) {
        ++flat_steps;
      } else {
        flat_steps = 0;
      }
      if (flat_steps >= config.convergence_patience) {
        out.converged = true;
        break;
      }
    }
    previous = rec.combined;
  }

  live.params.set_trainable({});
  live.params.clear_grads();
  out.steps_taken = static_cast<int>(out.loss_trace.size());
  out.param_delta_inf_norm = max_abs_difference(live.params, origin, editable);
  out.final_params = std::move(live.params);
  return out;
}

}  // namespace icelab
