#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "icelab/model.hpp"
#include "icelab/record.hpp"

namespace icelab {

struct MetricsConfig {
  double w2 = 0.5;
  double w3 = 0.5;
  // Tokens generated for fluency and perplexity.
  int eval_decode_len = 10;
  // Tokens decoded for locality comparisons.
  int probe_decode_len = 2;

  void validate() const;
};

// Weighted bigram and trigram entropies (natural log) of the empirical
// n-gram distributions of `text`.
double fluency(std::span<const Token> text, const MetricsConfig& config);

// exp of the mean per-token NLL of `text` given `prefix`; +inf when the
// reference assigns a token zero probability.
double perplexity(const Model& reference, std::span<const Token> prefix,
                  std::span<const Token> text);

// PPL(generation | [q, x*]) / PPL([q, x*] | bos).
double ppl_ratio(const Model& reference, const TokenSeq& query, const TokenSeq& x_star,
                 const TokenSeq& generation);

bool starts_with(std::span<const Token> decoded, std::span<const Token> target);

// Greedy answer to `query`, at most `len` tokens and never past the window.
TokenSeq decode_answer(const Model& m, const TokenSeq& query, int len);

double edit_success(const Model& model, const std::vector<TokenizedRecord>& records);
// Rate over all portability probes; nullopt when no record carries probes.
std::optional<double> portability(const Model& model, const std::vector<TokenizedRecord>& records);
std::optional<double> locality(const Model& pre, const Model& post,
                               const std::vector<TokenizedRecord>& records,
                               const MetricsConfig& config);


// Hits over probes for one rate metric.
struct RateCount {
  std::size_t hits = 0;
  std::size_t total = 0;
  std::optional<double> rate() const;
  bool operator==(const RateCount&) const = default;
};

struct RecordMetrics {
  std::size_t index = 0;
  RateCount edit_succ;
  RateCount portability;
  RateCount locality;
  std::optional<double> fluency;
  std::optional<double> ppl;  // +inf when the reference rules a token out
  std::optional<double> ppl_r;
  std::string error;  // nonempty when the edit aborted
  bool operator==(const RecordMetrics&) const = default;
};

// Means over contributing records; `n_*` count the contributors.
struct AggregateMetrics {
  std::optional<double> edit_succ, portability, locality, fluency, ppl, ppl_r;
  std::size_t n_edit_succ = 0, n_portability = 0, n_locality = 0, n_fluency = 0, n_ppl = 0,
              n_ppl_r = 0;
  // Records whose perplexity was infinite; excluded from the ppl means.
  std::size_t n_ppl_infinite = 0;
  std::size_t failed = 0;
  bool operator==(const AggregateMetrics&) const = default;
};

struct MetricsReport {
  std::string method;
  std::string dataset;
  std::vector<RecordMetrics> records;
  AggregateMetrics aggregate;
  bool operator==(const MetricsReport&) const = default;
};

inline constexpr const char* kReportSchema = "icelab-report-1";

// Rates are written in percent; counts travel alongside so parsing restores
// the report exactly.
std::string report_json(const MetricsReport& report);
MetricsReport parse_report_json(std::string_view text);
// Standard column order, one row per record plus a final "mean" row.
std::string report_csv(const MetricsReport& report);

RateCount edit_success_count(const Model& model, const TokenizedRecord& record);
RateCount portability_count(const Model& model, const TokenizedRecord& record);
RateCount locality_count(const Model& pre, const Model& post, const TokenizedRecord& record,
                         const MetricsConfig& config);

RecordMetrics evaluate_record(const Model& pre, const Model& post, const Model& reference,
                              const TokenizedRecord& record, const MetricsConfig& config);

AggregateMetrics aggregate(const std::vector<RecordMetrics>& records);

MetricsReport evaluate(const Model& pre, const Model& post, const Model& reference,
                       const std::vector<TokenizedRecord>& records, const MetricsConfig& config);

}  // namespace icelab
