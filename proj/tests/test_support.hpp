#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "icelab/model.hpp"
#include "icelab/param_set.hpp"

namespace icelab::testing {

using LossFn = std::function<ad::Var(ad::Graph&, const Binding&)>;

struct GradCheck {
  double worst_relative = 0.0;
  double worst_absolute = 0.0;
  std::size_t entries = 0;
  std::size_t failures = 0;  // entries outside both tolerances
};

// Agreement test used everywhere: relative error below rel_tol, or an
// absolute error below abs_tol when both values sit near zero.
inline bool grads_agree(double a, double f, double rel_tol = 1e-4, double abs_tol = 1e-6) {
  const double diff = std::abs(a - f);
  if (diff <= abs_tol) return true;
  return diff / std::max(std::abs(a), std::abs(f)) < rel_tol;
}

// Compares reverse-mode gradients of `loss` with central differences on the
// named parameters (all parameters when empty).
inline GradCheck check_gradients(const ParamSet& params, const std::vector<std::string>& names,
                                 const LossFn& loss, double h = 1e-4) {
  ParamSet live = params.snapshot();
  const auto selected = names.empty() ? live.names() : names;
  live.set_trainable(selected);
  live.zero_grads();
  {
    ad::Graph g;
    const Binding b = bind_trainable(g, live);
    g.backward(loss(g, b));
  }
  const auto fd = finite_difference_gradient(
      [&](const ParamSet& p) {
        ad::Graph g(false);
        const Binding b = bind_constant(g, p);
        return g.scalar(loss(g, b));
      },
      params, h, selected);

  GradCheck out;
  for (const auto& name : selected) {
    auto analytic = live.at(name).grad();
    const auto& numeric = fd.at(name);
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double diff = std::abs(a - numeric[i]);
      const double scale = std::max(std::abs(a), std::abs(numeric[i]));
      ++out.entries;
      out.worst_absolute = std::max(out.worst_absolute, diff);
      if (scale > 1e-6) out.worst_relative = std::max(out.worst_relative, diff / scale);
      if (!grads_agree(a, numeric[i])) ++out.failures;
    }
  }
  return out;
}

inline ModelConfig tiny_config(Architecture arch, int vocab, std::uint64_t seed) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.architecture = arch;
  c.context_window = 16;
  c.embed_dim = 8;
  c.head_count = 2;
  c.ffn_dim = 12;
  c.mlp_window = 2;
  c.seed = seed;
  return c;
}

// A freshly initialized model with every entry nudged, so biases and gains
// are not at their symmetric starting values.
inline Model random_model(Architecture arch, int vocab, std::uint64_t seed, double jitter = 0.3) {
  Model m = init_model(tiny_config(arch, vocab, seed));
  Rng rng(seed * 7919 + 17);
  std::normal_distribution<double> n(0.0, jitter);
  for (auto& [name, t] : m.params) {
    for (auto& v : t.values()) v += n(rng);
  }
  return m;
}

// Random token string over the non-reserved ids [2, vocab).
inline TokenSeq random_tokens(Rng& rng, int vocab, int length) {
  std::uniform_int_distribution<int> d(2, vocab - 1);
  TokenSeq out(static_cast<std::size_t>(length));
  for (auto& t : out) t = d(rng);
  return out;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("icelab_test_" + std::to_string(getpid()) + "_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace icelab::testing
