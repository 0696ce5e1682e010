#pragma once

#include <utility>
#include <vector>

#include "icelab/model.hpp"

namespace icelab {

// Token form of an edit record. Sequences carry no begin token; callers
// prepend kBos when scoring.
struct TokenizedRecord {
  TokenSeq query;
  TokenSeq target;
  std::vector<TokenSeq> contexts;
  std::vector<std::pair<TokenSeq, TokenSeq>> portability;  // (query, target)
  std::vector<TokenSeq> locality;                          // queries
};

inline TokenSeq with_bos(std::initializer_list<std::span<const Token>> parts) {
  TokenSeq out{kBos};
  for (auto p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

inline TokenSeq concat(std::span<const Token> a, std::span<const Token> b) {
  TokenSeq out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace icelab
