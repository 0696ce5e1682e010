#include "icelab/exact.hpp"

#include <cmath>

#include "icelab/errors.hpp"
#include "icelab/record.hpp"

namespace icelab {

namespace {

void enumerate_rec(int vocab, int length, TokenSeq& x,
                   const std::function<void(const TokenSeq&)>& visit) {
  if (static_cast<int>(x.size()) == length) {
    visit(x);
    return;
  }
  for (int t = 0; t < vocab; ++t) {
    x.push_back(t);
    enumerate_rec(vocab, length, x, visit);
    x.pop_back();
  }
}

void continuations_rec(const Model& m, TokenSeq& prefix, TokenSeq& cont, int length, double logp,
                       const std::function<void(const TokenSeq&, double)>& visit) {
  if (static_cast<int>(cont.size()) == length) {
    visit(cont, logp);
    return;
  }
  const auto next = next_token_log_probs(m, prefix);
  for (std::size_t t = 0; t < next.size(); ++t) {
    prefix.push_back(static_cast<Token>(t));
    cont.push_back(static_cast<Token>(t));
    continuations_rec(m, prefix, cont, length, logp + next[t], visit);
    cont.pop_back();
    prefix.pop_back();
  }
}

void kl_rec(const Model& p, TokenSeq& pp, const Model& q, TokenSeq& qp, int remaining,
            double logp, double logq, double& acc) {
  if (remaining == 0) {
    if (std::isinf(logp) && logp < 0) return;
    acc += std::exp(logp) * (logp - logq);
    return;
  }
  const auto np = next_token_log_probs(p, pp);
  const auto nq = next_token_log_probs(q, qp);
  for (std::size_t t = 0; t < np.size(); ++t) {
    pp.push_back(static_cast<Token>(t));
    qp.push_back(static_cast<Token>(t));
    kl_rec(p, pp, q, qp, remaining - 1, logp + np[t], logq + nq[t], acc);
    qp.pop_back();
    pp.pop_back();
  }
}

void check_length(int length) {
  if (length < 0) throw ConfigError("enumeration length must be nonnegative");
}

}  // namespace

double expectation_over_sequences(int vocab, int length,
                                  const std::function<double(const TokenSeq&)>& weight,
                                  const std::function<double(const TokenSeq&)>& f) {
  check_length(length);
  if (vocab < 1) throw ConfigError("vocabulary must be nonempty");
  double acc = 0.0;
  TokenSeq x;
  enumerate_rec(vocab, length, x, [&](const TokenSeq& seq) {
    const double w = weight(seq);
    if (w == 0.0) return;
    acc += w * f(seq);
  });
  return acc;
}

double one_hot_weight(const TokenSeq& y, const TokenSeq& x) {
  if (x.size() != y.size()) return 0.0;
  double w = 1.0;
  for (std::size_t i = 0; i < x.size(); ++i) w *= (x[i] == y[i]) ? 1.0 : 0.0;
  return w;
}

void enumerate_continuations(const Model& m, const TokenSeq& prefix, int length,
                             const std::function<void(const TokenSeq&, double)>& visit) {
  check_length(length);
  TokenSeq p = prefix;
  TokenSeq cont;
  continuations_rec(m, p, cont, length, 0.0, visit);
}

double continuation_kl(const Model& p, const TokenSeq& p_prefix, const Model& q,
                       const TokenSeq& q_prefix, int length) {
  check_length(length);
  if (p.config.vocab_size != q.config.vocab_size) {
    throw StructuralError("continuation_kl: vocabulary mismatch");
  }
  TokenSeq pp = p_prefix, qp = q_prefix;
  double acc = 0.0;
  kl_rec(p, pp, q, qp, length, 0.0, 0.0, acc);
  return acc;
}

double ft_sampling_loss_exact(const Model& m, const TokenSeq& query, const TokenSeq& target,
                              int horizon) {
  if (target.empty()) throw ContractViolation("ft_sampling_loss_exact: empty target");
  if (m.config.vocab_size > 8 || horizon > 4) {
    throw SizeError("exact enumeration needs vocab_size <= 8 and horizon <= 4");
  }
  return combined_objective_exact(m, m, {}, query, target, horizon);
}

double combined_objective_exact(const Model& target, const Model& live, const TokenSeq& context,
                                const TokenSeq& query, const TokenSeq& x_star, int horizon) {
  if (x_star.empty()) throw ContractViolation("combined objective: empty target");
  const TokenSeq live_prefix = with_bos({query});
  double acc = 0.0;
  // Sequences whose first m tokens differ from x* carry zero target weight;
  // only the continuations of x* contribute.
  enumerate_continuations(
      target, with_bos({context, query, x_star}), horizon, [&](const TokenSeq& xc, double logt) {
        if (std::isinf(logt)) return;
        const double logl = sequence_log_prob(live, live_prefix, concat(x_star, xc));
        acc += std::exp(logt) * (logt - logl);
      });
  return acc;
}

double expected_combined_nll_exact(const Model& target, const Model& live, const TokenSeq& context,
                                   const TokenSeq& query, const TokenSeq& x_star, int horizon) {
  const TokenSeq live_prefix = with_bos({query});
  double acc = 0.0;
  enumerate_continuations(target, with_bos({context, query, x_star}), horizon,
                          [&](const TokenSeq& xc, double logt) {
                            if (std::isinf(logt)) return;
                            acc -= std::exp(logt) *
                                   sequence_log_prob(live, live_prefix, concat(x_star, xc));
                          });
  return acc;
}

double completion_entropy_exact(const Model& target, const TokenSeq& context,
                                const TokenSeq& query, const TokenSeq& x_star, int horizon) {
  double acc = 0.0;
  enumerate_continuations(target, with_bos({context, query, x_star}), horizon,
                          [&](const TokenSeq&, double logt) {
                            if (std::isinf(logt)) return;
                            acc -= std::exp(logt) * logt;
                          });
  return acc;
}

GapResult consistency_gap(const Model& m, const TokenSeq& context, const TokenSeq& query,
                          int probe_len, const GapOptions& opts) {
  check_length(probe_len);
  const TokenSeq with_ctx = with_bos({context, query});
  const TokenSeq bare = with_bos({query});
  const double space = std::pow(static_cast<double>(m.config.vocab_size), probe_len);
  if (space <= kGapEnumerationLimit) {
    return {continuation_kl(m, with_ctx, m, bare, probe_len), 0.0, true};
  }
  if (!opts.allow_monte_carlo) {
    throw SizeError("consistency gap: " + std::to_string(m.config.vocab_size) + "^" +
                    std::to_string(probe_len) + " continuations exceed the enumeration limit");
  }
  if (opts.mc_samples < 2) throw ConfigError("Monte Carlo gap needs at least 2 samples");
  Rng rng(opts.seed);
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < opts.mc_samples; ++i) {
    const TokenSeq x = sample_completion(m, with_ctx, probe_len, 1.0, rng);
    const double r = sequence_log_prob(m, with_ctx, x) - sequence_log_prob(m, bare, x);
    sum += r;
    sum_sq += r * r;
  }
  const double n = opts.mc_samples;
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n), false};
}

}  // namespace icelab
