#pragma once

#include <functional>

#include "icelab/model.hpp"

namespace icelab {

// Brute-force sum of weight(x) * f(x) over all sequences x of `length` tokens
// drawn from a vocabulary of `vocab` symbols. Terms of zero weight contribute
// exactly zero.
double expectation_over_sequences(int vocab, int length,
                                  const std::function<double(const TokenSeq&)>& weight,
                                  const std::function<double(const TokenSeq&)>& f);

// Product of Kronecker deltas: 1 when x == y, else 0.
double one_hot_weight(const TokenSeq& y, const TokenSeq& x);

// Visits every continuation of exactly `length` tokens after `prefix` with its
// log-probability under `m`, accumulated position by position.
void enumerate_continuations(const Model& m, const TokenSeq& prefix, int length,
                             const std::function<void(const TokenSeq&, double)>& visit);

// KL(p(x | p_prefix) || q(x | q_prefix)) over continuations of `length` tokens.
double continuation_kl(const Model& p, const TokenSeq& p_prefix, const Model& q,
                       const TokenSeq& q_prefix, int length);

// Fine-tuning-with-sampling objective evaluated by exact summation: the KL
// between delta_{x*}(x_{1:m}) p(x_{>m} | [q, x*]) and p(x_{1:m+horizon} | q).
// Guarded to vocab_size <= 8 and horizon <= 4.
double ft_sampling_loss_exact(const Model& m, const TokenSeq& query, const TokenSeq& target,
                              int horizon);

// KL(delta_{x*} p_target(x_c | [c, q, x*]) || p_live([x*, x_c] | q)) by
// summation over completions of `horizon` tokens.
double combined_objective_exact(const Model& target, const Model& live, const TokenSeq& context,
                                const TokenSeq& query, const TokenSeq& x_star, int horizon);

// E_{x_c ~ p_target(. | [c, q, x*])}[-log p_live([x*, x_c] | q)], exactly.
double expected_combined_nll_exact(const Model& target, const Model& live, const TokenSeq& context,
                                   const TokenSeq& query, const TokenSeq& x_star, int horizon);

// Entropy of p_target(x_c | [c, q, x*]) over `horizon` tokens.
double completion_entropy_exact(const Model& target, const TokenSeq& context,
                                const TokenSeq& query, const TokenSeq& x_star, int horizon);

struct GapOptions {
  // Fall back to Monte Carlo when the continuation space is too large.
  bool allow_monte_carlo = false;
  int mc_samples = 2000;
  std::uint64_t seed = 0;
};

struct GapResult {
  double value = 0.0;
  double standard_error = 0.0;
  bool exact = true;
};

// Largest continuation space (vocab^probe_len) the exact gap enumerates.
inline constexpr double kGapEnumerationLimit = 512.0;

// KL(p(x | [c, q]) || p(x | q)) over continuations of probe_len tokens.
GapResult consistency_gap(const Model& m, const TokenSeq& context, const TokenSeq& query,
                          int probe_len, const GapOptions& opts = {});

}  // namespace icelab
