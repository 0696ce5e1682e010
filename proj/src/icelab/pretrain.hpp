#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "icelab/model.hpp"

namespace icelab {

struct PretrainOptions {
  int steps = 0;
  double lr = 3e-3;
  int batch_size = 16;
  std::uint64_t seed = 0;
  // Anneal the rate to zero along a half cosine.
  bool cosine_decay = true;
  // Decoupled decay applied to matrices only.
  double weight_decay = 0.0;
  // Mass spread uniformly over the vocabulary in every training target.
  double label_smoothing = 0.0;
  int monitor_every = 10;
  // Monitor NLL on the first this-many documents (all if larger).
  std::size_t monitor_docs = 256;
};

struct PretrainLog {
  // (step, mean per-token NLL over the monitored documents)
  std::vector<std::pair<int, double>> nll_trace;
};

// Mean per-token NLL of documents scored after their first token.
double corpus_nll(const Model& m, const std::vector<TokenSeq>& docs, std::size_t limit);

// Adam on all parameters; every document is scored after its first token
// (the begin token).
PretrainLog pretrain(Model& m, const std::vector<TokenSeq>& corpus, const PretrainOptions& opts);

}  // namespace icelab
