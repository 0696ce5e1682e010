#include "icelab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "icelab/config_text.hpp"
#include "icelab/errors.hpp"
#include "json.hpp"

namespace icelab {

void MetricsConfig::validate() const {
  if (w2 < 0.0 || w3 < 0.0 || std::abs(w2 + w3 - 1.0) > 1e-12) {
    throw ConfigError("fluency weights must be nonnegative and sum to 1");
  }
  if (eval_decode_len < 1) throw ConfigError("eval_decode_len must be positive");
  if (probe_decode_len < 1) throw ConfigError("probe_decode_len must be positive");
}

std::optional<double> RateCount::rate() const {
  if (total == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(total);
}

namespace {

double ngram_entropy(std::span<const Token> text, std::size_t n) {
  std::map<std::vector<Token>, std::size_t> counts;
  const std::size_t total = text.size() + 1 - n;
  for (std::size_t i = 0; i + n <= text.size(); ++i) {
    ++counts[std::vector<Token>(text.begin() + static_cast<std::ptrdiff_t>(i),
                                text.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  double h = 0.0;
  for (const auto& [_, c] : counts) {
    const double f = static_cast<double>(c) / static_cast<double>(total);
    h -= f * std::log(f);
  }
  return h;
}

int room_after(const Model& m, std::size_t prefix_len, int wanted) {
  const int room = m.config.context_window - static_cast<int>(prefix_len);
  return std::max(0, std::min(wanted, room));
}

}  // namespace

TokenSeq decode_answer(const Model& m, const TokenSeq& query, int len) {
  const TokenSeq prefix = with_bos({query});
  return greedy_decode(m, prefix, room_after(m, prefix.size(), len));
}

double fluency(std::span<const Token> text, const MetricsConfig& config) {
  if (text.size() < 3) throw InputError("fluency needs at least 3 tokens");
  return config.w2 * ngram_entropy(text, 2) + config.w3 * ngram_entropy(text, 3);
}

double perplexity(const Model& reference, std::span<const Token> prefix,
                  std::span<const Token> text) {
  if (text.empty()) throw InputError("perplexity of empty text");
  const double lp = sequence_log_prob(reference, prefix, text);
  if (std::isinf(lp)) return std::numeric_limits<double>::infinity();
  return std::exp(-lp / static_cast<double>(text.size()));
}

double ppl_ratio(const Model& reference, const TokenSeq& query, const TokenSeq& x_star,
                 const TokenSeq& generation) {
  if (generation.empty()) throw InputError("ppl_ratio of an empty generation");
  const TokenSeq prompt = concat(query, x_star);
  const double num = perplexity(reference, with_bos({prompt}), generation);
  const TokenSeq bos{kBos};
  return num / perplexity(reference, bos, prompt);
}

bool starts_with(std::span<const Token> decoded, std::span<const Token> target) {
  if (target.size() > decoded.size()) return false;
  return std::equal(target.begin(), target.end(), decoded.begin());
}

RateCount edit_success_count(const Model& model, const TokenizedRecord& r) {
  const bool hit =
      starts_with(decode_answer(model, r.query, static_cast<int>(r.target.size())), r.target);
  return {hit ? 1u : 0u, 1};
}

RateCount portability_count(const Model& model, const TokenizedRecord& r) {
  RateCount c;
  for (const auto& [q, t] : r.portability) {
    ++c.total;
    if (starts_with(decode_answer(model, q, static_cast<int>(t.size())), t)) ++c.hits;
  }
  return c;
}

RateCount locality_count(const Model& pre, const Model& post, const TokenizedRecord& r,
                         const MetricsConfig& config) {
  RateCount c;
  for (const auto& q : r.locality) {
    ++c.total;
    if (decode_answer(pre, q, config.probe_decode_len) ==
        decode_answer(post, q, config.probe_decode_len)) {
      ++c.hits;
    }
  }
  return c;
}

double edit_success(const Model& model, const std::vector<TokenizedRecord>& records) {
  if (records.empty()) throw InputError("edit_success over no records");
  std::size_t hits = 0;
  for (const auto& r : records) hits += edit_success_count(model, r).hits;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

std::optional<double> portability(const Model& model, const std::vector<TokenizedRecord>& records) {
  RateCount all;
  for (const auto& r : records) {
    const RateCount c = portability_count(model, r);
    all.hits += c.hits;
    all.total += c.total;
  }
  return all.rate();
}

std::optional<double> locality(const Model& pre, const Model& post,
                               const std::vector<TokenizedRecord>& records,
                               const MetricsConfig& config) {
  RateCount all;
  for (const auto& r : records) {
    const RateCount c = locality_count(pre, post, r, config);
    all.hits += c.hits;
    all.total += c.total;
  }
  return all.rate();
}

RecordMetrics evaluate_record(const Model& pre, const Model& post, const Model& reference,
                              const TokenizedRecord& record, const MetricsConfig& config) {
  config.validate();
  if (pre.config.vocab_size != post.config.vocab_size ||
      reference.config.vocab_size != post.config.vocab_size) {
    throw StructuralError("evaluate: models do not share a vocabulary");
  }
  RecordMetrics out;
  out.edit_succ = edit_success_count(post, record);
  out.portability = portability_count(post, record);
  out.locality = locality_count(pre, post, record, config);

  const TokenSeq sentence =
      concat(record.query, decode_answer(post, record.query, config.eval_decode_len));
  if (sentence.size() >= 3) out.fluency = fluency(sentence, config);

  const TokenSeq prompt = with_bos({record.query, record.target});
  const TokenSeq generation =
      greedy_decode(post, prompt, room_after(post, prompt.size(), config.eval_decode_len));
  if (!generation.empty()) {
    out.ppl = perplexity(reference, prompt, generation);
    out.ppl_r = ppl_ratio(reference, record.query, record.target, generation);
  }
  return out;
}

AggregateMetrics aggregate(const std::vector<RecordMetrics>& records) {
  struct Mean {
    double sum = 0.0;
    std::size_t n = 0;
    void add(double x) {
      sum += x;
      ++n;
    }
    void write(std::optional<double>& out, std::size_t& count) const {
      count = n;
      if (n) out = sum / static_cast<double>(n);
    }
  } succ, port, loc, flu, ppl, pplr;
  AggregateMetrics a;
  for (const auto& r : records) {
    if (!r.error.empty()) {
      ++a.failed;
      continue;
    }
    if (auto v = r.edit_succ.rate()) succ.add(*v);
    if (auto v = r.portability.rate()) port.add(*v);
    if (auto v = r.locality.rate()) loc.add(*v);
    if (r.fluency) flu.add(*r.fluency);
    if (r.ppl) {
      if (std::isfinite(*r.ppl)) {
        ppl.add(*r.ppl);
      } else {
        ++a.n_ppl_infinite;
      }
    }
    if (r.ppl_r && std::isfinite(*r.ppl_r)) pplr.add(*r.ppl_r);
  }
  succ.write(a.edit_succ, a.n_edit_succ);
  port.write(a.portability, a.n_portability);
  loc.write(a.locality, a.n_locality);
  flu.write(a.fluency, a.n_fluency);
  ppl.write(a.ppl, a.n_ppl);
  pplr.write(a.ppl_r, a.n_ppl_r);
  return a;
}

MetricsReport evaluate(const Model& pre, const Model& post, const Model& reference,
                       const std::vector<TokenizedRecord>& records, const MetricsConfig& config) {
  MetricsReport report;
  for (std::size_t i = 0; i < records.size(); ++i) {
    RecordMetrics r = evaluate_record(pre, post, reference, records[i], config);
    r.index = i;
    report.records.push_back(std::move(r));
  }
  report.aggregate = aggregate(report.records);
  return report;
}

namespace {

using json = nlohmann::ordered_json;

json percent(const std::optional<double>& rate) {
  return rate ? json(*rate * 100.0) : json(nullptr);
}

json rate_json(const RateCount& c) {
  return {{"percent", percent(c.rate())}, {"hits", c.hits}, {"total", c.total}};
}

json real_json(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return *v;
}

RateCount rate_from(const json& j, const char* field) {
  if (!j.is_object() || !j.contains("hits") || !j.contains("total")) {
    throw ParseError(std::string("report field '") + field + "' lacks counts");
  }
  return {j["hits"].get<std::size_t>(), j["total"].get<std::size_t>()};
}

std::optional<double> real_from(const json& rec, const char* field) {
  if (!rec.contains(field)) throw ParseError(std::string("report record lacks '") + field + "'");
  const json& j = rec[field];
  if (j.is_null()) {
    const std::string flag = std::string(field) + "_infinite";
    if (rec.contains(flag) && rec[flag].get<bool>()) return std::numeric_limits<double>::infinity();
    return std::nullopt;
  }
  if (!j.is_number()) throw ParseError(std::string("report field '") + field + "' is not a number");
  return j.get<double>();
}

std::string csv_cell(const std::optional<double>& v, bool rate) {
  if (!v) return "NA";
  if (std::isinf(*v)) return "inf";
  return format_double(rate ? *v * 100.0 : *v);
}

}  // namespace

std::string report_json(const MetricsReport& report) {
  json root;
  root["schema"] = kReportSchema;
  root["method"] = report.method;
  root["dataset"] = report.dataset;
  json recs = json::array();
  for (const auto& r : report.records) {
    json j;
    j["index"] = r.index;
    j["edit_succ"] = rate_json(r.edit_succ);
    j["portability"] = rate_json(r.portability);
    j["locality"] = rate_json(r.locality);
    j["fluency"] = real_json(r.fluency);
    j["ppl"] = real_json(r.ppl);
    if (r.ppl && std::isinf(*r.ppl)) j["ppl_infinite"] = true;
    j["ppl_r"] = real_json(r.ppl_r);
    if (r.ppl_r && std::isinf(*r.ppl_r)) j["ppl_r_infinite"] = true;
    if (!r.error.empty()) j["error"] = r.error;
    recs.push_back(j);
  }
  root["records"] = recs;
  const auto& a = report.aggregate;
  json agg;
  agg["edit_succ"] = percent(a.edit_succ);
  agg["portability"] = percent(a.portability);
  agg["locality"] = percent(a.locality);
  agg["fluency"] = real_json(a.fluency);
  agg["ppl"] = real_json(a.ppl);
  agg["ppl_r"] = real_json(a.ppl_r);
  agg["counts"] = {{"edit_succ", a.n_edit_succ}, {"portability", a.n_portability},
                   {"locality", a.n_locality},   {"fluency", a.n_fluency},
                   {"ppl", a.n_ppl},             {"ppl_r", a.n_ppl_r},
                   {"ppl_infinite", a.n_ppl_infinite}, {"failed", a.failed}};
  root["aggregate"] = agg;
  return root.dump(1) + "\n";
}

MetricsReport parse_report_json(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid report JSON: ") + e.what());
  }
  if (!root.is_object() || root.value("schema", "") != kReportSchema) {
    throw ParseError("not an icelab report (schema mismatch)");
  }
  MetricsReport report;
  try {
    report.method = root.at("method").get<std::string>();
    report.dataset = root.at("dataset").get<std::string>();
    for (const auto& j : root.at("records")) {
      RecordMetrics r;
      r.index = j.at("index").get<std::size_t>();
      r.edit_succ = rate_from(j.at("edit_succ"), "edit_succ");
      r.portability = rate_from(j.at("portability"), "portability");
      r.locality = rate_from(j.at("locality"), "locality");
      r.fluency = real_from(j, "fluency");
      r.ppl = real_from(j, "ppl");
      r.ppl_r = real_from(j, "ppl_r");
      if (j.contains("error")) r.error = j["error"].get<std::string>();
      report.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed report: ") + e.what());
  }
  report.aggregate = aggregate(report.records);
  return report;
}

std::string report_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << "record,edit_succ,portability,locality,fluency,ppl,ppl_r\n";
  for (const auto& r : report.records) {
    if (!r.error.empty()) {
      os << r.index << ",NA,NA,NA,NA,NA,NA\n";
      continue;
    }
    os << r.index << ',' << csv_cell(r.edit_succ.rate(), true) << ','
       << csv_cell(r.portability.rate(), true) << ',' << csv_cell(r.locality.rate(), true) << ','
       << csv_cell(r.fluency, false) << ',' << csv_cell(r.ppl, false) << ','
       << csv_cell(r.ppl_r, false) << '\n';
  }
  const auto& a = report.aggregate;
  os << "mean," << csv_cell(a.edit_succ, true) << ',' << csv_cell(a.portability, true) << ','
     << csv_cell(a.locality, true) << ',' << csv_cell(a.fluency, false) << ','
     << csv_cell(a.ppl, false) << ',' << csv_cell(a.ppl_r, false) << '\n';
  return os.str();
}

}  // namespace icelab
