#include "icelab/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "icelab/errors.hpp"

namespace icelab {

double corpus_nll(const Model& m, const std::vector<TokenSeq>& docs, std::size_t limit) {
  double nll = 0.0;
  std::size_t tokens = 0;
  const std::size_t n = std::min(limit, docs.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& d = docs[i];
    if (d.size() < 2) continue;
    std::span<const Token> s(d);
    nll -= sequence_log_prob(m, s.first(1), s.subspan(1));
    tokens += d.size() - 1;
  }
  return tokens ? nll / static_cast<double>(tokens) : 0.0;
}

namespace {

// Smoothed cross-entropy of a document scored after its first token.
ad::Var document_loss(ad::Graph& g, const Binding& b, const ModelConfig& config,
                      std::span<const Token> doc, double smoothing) {
  if (smoothing == 0.0) return sequence_nll(g, b, config, doc.first(1), doc.subspan(1));
  ad::Var logp = g.log_softmax_rows(forward_logits(g, b, config, doc.first(doc.size() - 1)));
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (std::size_t i = 1; i < doc.size(); ++i) {
    picks.emplace_back(i - 1, static_cast<std::size_t>(doc[i]));
  }
  ad::Var nll = g.scale(g.sum(g.pick(logp, picks)), -(1.0 - smoothing));
  ad::Var spread = g.scale(g.sum(logp), -smoothing / static_cast<double>(config.vocab_size));
  return g.add(nll, spread);
}

}  // namespace

PretrainLog pretrain(Model& m, const std::vector<TokenSeq>& corpus, const PretrainOptions& opts) {
  if (corpus.empty()) throw InputError("pretraining corpus is empty");
  if (opts.steps < 0) throw ConfigError("pretraining steps must be nonnegative");
  if (opts.batch_size < 1) throw ConfigError("batch size must be positive");
  if (!(opts.lr > 0.0)) throw ConfigError("pretraining learning rate must be positive");
  if (opts.label_smoothing < 0.0 || opts.label_smoothing >= 1.0) {
    throw ConfigError("label smoothing must lie in [0, 1)");
  }
  if (opts.weight_decay < 0.0) throw ConfigError("weight decay must be nonnegative");

  PretrainLog log;
  const int every = std::max(1, opts.monitor_every);
  log.nll_trace.emplace_back(0, corpus_nll(m, corpus, opts.monitor_docs));
  if (opts.steps == 0) return log;

  m.params.set_trainable(m.params.names());
  std::map<std::string, std::vector<double>> mom, vel;
  for (const auto& [name, t] : m.params) {
    mom[name].assign(t.size(), 0.0);
    vel[name].assign(t.size(), 0.0);
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  Rng rng(opts.seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  for (int step = 1; step <= opts.steps; ++step) {
    m.params.zero_grads();
    std::size_t tokens = 0;
    for (int b = 0; b < opts.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto& doc = corpus[order[cursor++]];
      if (doc.size() < 2) continue;
      ad::Graph g;
      const Binding bind = bind_trainable(g, m.params);
      std::span<const Token> s(doc);
      ad::Var loss = document_loss(g, bind, m.config, s, opts.label_smoothing);
      if (!std::isfinite(g.scalar(loss))) throw NumericalError("pretraining loss is not finite");
      g.backward(loss);
      tokens += doc.size() - 1;
    }
    if (tokens == 0) continue;
    const double inv = 1.0 / static_cast<double>(tokens);
    const double c1 = 1.0 - std::pow(kBeta1, step);
    const double c2 = 1.0 - std::pow(kBeta2, step);
    const double lr = opts.cosine_decay
                          ? 0.5 * opts.lr * (1.0 + std::cos(M_PI * (step - 1) / opts.steps))
                          : opts.lr;
    for (auto& [name, t] : m.params) {
      const double decay = t.shape().size() == 2 ? lr * opts.weight_decay : 0.0;
      auto& mo = mom[name];
      auto& ve = vel[name];
      auto g = t.grad();
      auto v = t.values();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double gi = g[i] * inv;
        mo[i] = kBeta1 * mo[i] + (1.0 - kBeta1) * gi;
        ve[i] = kBeta2 * ve[i] + (1.0 - kBeta2) * gi * gi;
        v[i] -= decay * v[i] + lr * (mo[i] / c1) / (std::sqrt(ve[i] / c2) + kEps);
      }
    }
    m.params.bump_version();
    if (step % every == 0 || step == opts.steps) {
      const double nll = corpus_nll(m, corpus, opts.monitor_docs);
      if (!std::isfinite(nll)) throw NumericalError("pretraining diverged at step " + std::to_string(step));
      log.nll_trace.emplace_back(step, nll);
    }
  }
  m.params.set_trainable({});
  m.params.clear_grads();
  return log;
}

}  // namespace icelab
