#include "icelab/harness.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>

#include "icelab/checkpoint.hpp"
#include "icelab/errors.hpp"
#include "json.hpp"

#ifndef ICELAB_VERSION
#define ICELAB_VERSION "dev"
#endif

namespace icelab {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string version_string() { return ICELAB_VERSION; }

const std::vector<std::string>& harness_keys() {
  static const std::vector<std::string> keys{
      "n_entities",      "n_relations",   "n_edits",      "docs_per_subject",
      "context_docs_per_fact", "locality_probes", "pretrain_steps", "pretrain_lr",
      "batch_size",      "weight_decay",  "label_smoothing", "cosine_decay",
      "monitor_every",   "max_records"};
  return keys;
}

HarnessConfig parse_harness_config(const KeyValues& kv) {
  reject_unknown_keys(kv, {&model_config_keys(), &edit_config_keys(), &metrics_config_keys(),
                           &harness_keys()});
  HarnessConfig c;
  c.seed = kv_u64(kv, "seed", 0);
  c.model = parse_model_config(kv, false);
  c.model.seed = c.seed;

  c.world.seed = c.seed;
  c.world.n_entities = kv_int(kv, "n_entities", c.world.n_entities);
  c.world.n_relations = kv_int(kv, "n_relations", c.world.n_relations);
  c.world.n_edits = kv_int(kv, "n_edits", c.world.n_edits);
  c.world.docs_per_subject = kv_int(kv, "docs_per_subject", c.world.docs_per_subject);
  c.world.context_docs_per_fact = kv_int(kv, "context_docs_per_fact", c.world.context_docs_per_fact);
  c.world.locality_probes = kv_int(kv, "locality_probes", c.world.locality_probes);

  c.pretrain.seed = c.seed;
  c.pretrain.steps = kv_int(kv, "pretrain_steps", c.pretrain.steps);
  c.pretrain.lr = kv_double(kv, "pretrain_lr", c.pretrain.lr);
  c.pretrain.batch_size = kv_int(kv, "batch_size", c.pretrain.batch_size);
  c.pretrain.weight_decay = kv_double(kv, "weight_decay", c.pretrain.weight_decay);
  c.pretrain.label_smoothing = kv_double(kv, "label_smoothing", c.pretrain.label_smoothing);
  c.pretrain.cosine_decay = kv_int(kv, "cosine_decay", c.pretrain.cosine_decay ? 1 : 0) != 0;
  c.pretrain.monitor_every = kv_int(kv, "monitor_every", c.pretrain.monitor_every);

  c.edit = parse_edit_config(kv);
  c.edit.seed = c.seed;
  c.edit.validate();
  c.metrics = parse_metrics_config(kv);
  c.metrics.validate();
  c.max_records = kv_int(kv, "max_records", 0);
  if (c.max_records < 0) throw ConfigError("max_records must be nonnegative");
  return c;
}

std::string harness_config_text(const HarnessConfig& c) {
  std::ostringstream os;
  os << "seed = " << c.seed << '\n'
     << "context_window = " << c.model.context_window << '\n'
     << "architecture = " << to_string(c.model.architecture) << '\n'
     << "embed_dim = " << c.model.embed_dim << '\n'
     << "head_count = " << c.model.head_count << '\n'
     << "ffn_dim = " << c.model.ffn_dim << '\n'
     << "mlp_window = " << c.model.mlp_window << '\n';
  if (!c.model.editable_param_names.empty()) {
    os << "editable_param_names = ";
    for (std::size_t i = 0; i < c.model.editable_param_names.size(); ++i)
      os << (i ? "," : "") << c.model.editable_param_names[i];
    os << '\n';
  }
  os << "n_entities = " << c.world.n_entities << '\n'
     << "n_relations = " << c.world.n_relations << '\n'
     << "n_edits = " << c.world.n_edits << '\n'
     << "docs_per_subject = " << c.world.docs_per_subject << '\n'
     << "context_docs_per_fact = " << c.world.context_docs_per_fact << '\n'
     << "locality_probes = " << c.world.locality_probes << '\n'
     << "pretrain_steps = " << c.pretrain.steps << '\n'
     << "pretrain_lr = " << format_double(c.pretrain.lr) << '\n'
     << "batch_size = " << c.pretrain.batch_size << '\n'
     << "weight_decay = " << format_double(c.pretrain.weight_decay) << '\n'
     << "label_smoothing = " << format_double(c.pretrain.label_smoothing) << '\n'
     << "cosine_decay = " << (c.pretrain.cosine_decay ? 1 : 0) << '\n'
     << "monitor_every = " << c.pretrain.monitor_every << '\n'
     << edit_config_text(c.edit) << metrics_config_text(c.metrics)
     << "max_records = " << c.max_records << '\n';
  return os.str();
}

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

// Collects output files and finishes with the manifest that lists them.
class RunWriter {
 public:
  RunWriter(fs::path dir, std::string command, const HarnessConfig& config, std::string dataset)
      : dir_(std::move(dir)) {
    prepare_dir(dir_);
    manifest_.command = std::move(command);
    manifest_.config_text = harness_config_text(config);
    manifest_.dataset = std::move(dataset);
    manifest_.seed = config.seed;
    manifest_.started = utc_now();
    manifest_.version = version_string();
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  void write(const std::string& name, const std::string& text) {
    write_text(dir_ / name, text);
    manifest_.outputs.push_back(name);
  }

  void adopt(const std::string& name) { manifest_.outputs.push_back(name); }

  std::vector<std::string> finish() {
    manifest_.finished = utc_now();
    manifest_.outputs.push_back("manifest.json");
    write_text(dir_ / "manifest.json", manifest_json(manifest_));
    return manifest_.outputs;
  }

 private:
  fs::path dir_;
  RunManifest manifest_;
};

struct Loaded {
  Model base;
  EditDataset dataset;
  std::vector<TokenizedRecord> records;
};

Loaded load_inputs(const fs::path& checkpoint, const fs::path& dataset_path,
                   const HarnessConfig& config) {
  Loaded in{load_checkpoint(checkpoint.string()), load_edit_records(dataset_path).dataset, {}};
  if (in.dataset.vocab.size() != in.base.config.vocab_size) {
    throw StructuralError("dataset vocabulary (" + std::to_string(in.dataset.vocab.size()) +
                          ") does not match the checkpoint (" +
                          std::to_string(in.base.config.vocab_size) + ")");
  }
  in.records = tokenize_dataset(in.dataset);
  if (config.max_records > 0 && in.records.size() > static_cast<std::size_t>(config.max_records)) {
    in.records.resize(static_cast<std::size_t>(config.max_records));
  }
  return in;
}

json step_json(std::size_t record, const StepRecord& s) {
  return {{"record", record},
          {"step", s.step},
          {"ft", s.ft},
          {"ice", s.ice},
          {"combined", s.combined},
          {"grad_inf_norm", s.grad_inf_norm},
          {"param_delta_inf_norm", s.param_delta_inf_norm}};
}

std::string cell(const std::optional<double>& v, bool rate) {
  if (!v) return "NA";
  return format_double(rate ? *v * 100.0 : *v);
}

std::string metric_cells(const AggregateMetrics& a) {
  return cell(a.edit_succ, true) + ',' + cell(a.portability, true) + ',' +
         cell(a.locality, true) + ',' + cell(a.fluency, false) + ',' + cell(a.ppl, false) + ',' +
         cell(a.ppl_r, false);
}

std::string record_cells(const RecordMetrics& r) {
  if (!r.error.empty()) return "NA,NA,NA,NA,NA,NA";
  auto real = [](const std::optional<double>& v) {
    if (!v) return std::string("NA");
    return std::isinf(*v) ? std::string("inf") : format_double(*v);
  };
  return cell(r.edit_succ.rate(), true) + ',' + cell(r.portability.rate(), true) + ',' +
         cell(r.locality.rate(), true) + ',' + real(r.fluency) + ',' + real(r.ppl) + ',' +
         real(r.ppl_r);
}

const char* kMetricHeader = "edit_succ,portability,locality,fluency,ppl,ppl_r";

RecordMetrics failed_record(std::size_t index, const std::string& what) {
  RecordMetrics r;
  r.index = index;
  r.error = what;
  return r;
}

}  // namespace

std::uint64_t record_seed(std::uint64_t seed, std::uint64_t index) {
  return step_seed(seed ^ 0xa0761d6478bd642fULL, static_cast<int>(index));
}

std::string manifest_json(const RunManifest& m) {
  json j;
  j["command"] = m.command;
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["dataset"] = m.dataset;
  j["config"] = m.config_text;
  j["started"] = m.started;
  j["finished"] = m.finished;
  j["outputs"] = m.outputs;
  return j.dump(1) + "\n";
}

double fact_accuracy(const Model& m, const SynthWorld& world) {
  if (world.facts.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& f : world.facts) {
    const TokenSeq target = world.dataset.vocab.tokenize(f.object);
    const TokenSeq dec =
        decode_answer(m, world.dataset.vocab.tokenize(f.query), static_cast<int>(target.size()));
    if (starts_with(dec, target)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(world.facts.size());
}

PretrainResult run_pretrain(const HarnessConfig& config, const fs::path& out_dir) {
  const SynthWorld world = synth_world(config.world);
  ModelConfig mc = config.model;
  if (mc.vocab_size != 0 && mc.vocab_size != world.dataset.vocab.size()) {
    throw ConfigError("vocab_size does not match the synthetic world");
  }
  mc.vocab_size = world.dataset.vocab.size();
  mc.validate();
  for (const auto& doc : world.corpus) {
    if (static_cast<int>(doc.size()) > mc.context_window) {
      throw ConfigError("a pretraining document exceeds context_window");
    }
  }
  Model model = init_model(mc);
  RunWriter out(out_dir, "pretrain", config, world.dataset.provenance);
  const PretrainLog log = pretrain(model, world.corpus, config.pretrain);

  PretrainResult result;
  result.fact_accuracy = fact_accuracy(model, world);
  result.initial_nll = log.nll_trace.front().second;
  result.final_nll = log.nll_trace.back().second;

  std::ostringstream ckpt;
  write_checkpoint(ckpt, model);
  out.write("model.ckpt", ckpt.str());
  out.write("dataset.json", edit_records_json(world.dataset));
  std::ostringstream curve;
  curve << "step,nll\n";
  for (const auto& [step, nll] : log.nll_trace) curve << step << ',' << format_double(nll) << '\n';
  out.write("pretrain_log.csv", curve.str());
  json summary{{"fact_accuracy", result.fact_accuracy},
               {"facts", world.facts.size()},
               {"initial_nll", result.initial_nll},
               {"final_nll", result.final_nll},
               {"vocab_size", mc.vocab_size},
               {"parameters", model.params.parameter_count()},
               {"documents", world.corpus.size()}};
  out.write("pretrain_summary.json", summary.dump(1) + "\n");
  result.outputs = out.finish();
  return result;
}

EditRunResult run_edit(const fs::path& checkpoint, const fs::path& dataset,
                       const HarnessConfig& config, const fs::path& out_dir) {
  Loaded in = load_inputs(checkpoint, dataset, config);
  RunWriter out(out_dir, "edit", config, in.dataset.provenance);
  EditRunResult result;
  result.report.method = to_string(config.edit.variant);
  result.report.dataset = in.dataset.provenance;
  std::ostringstream trace;
  for (std::size_t i = 0; i < in.records.size(); ++i) {
    EditConfig ec = config.edit;
    ec.seed = record_seed(config.seed, i);
    try {
      const EditOutcome outcome = ice_edit(in.base, in.records[i], ec);
      for (const auto& s : outcome.loss_trace) trace << step_json(i, s).dump() << '\n';
      const Model post{in.base.config, outcome.final_params};
      RecordMetrics r = evaluate_record(in.base, post, in.base, in.records[i], config.metrics);
      r.index = i;
      result.report.records.push_back(std::move(r));
    } catch (const NumericalError& e) {
      result.report.records.push_back(failed_record(i, e.what()));
    } catch (const InputError& e) {
      result.report.records.push_back(failed_record(i, e.what()));
    } catch (const ContextOverflow& e) {
      result.report.records.push_back(failed_record(i, e.what()));
    }
  }
  result.report.aggregate = aggregate(result.report.records);
  out.write("report.json", report_json(result.report));
  out.write("report.csv", report_csv(result.report));
  out.write("trace.ndjson", trace.str());
  result.outputs = out.finish();
  return result;
}

ContinualRunResult run_continual(const fs::path& checkpoint, const fs::path& dataset,
                                 const HarnessConfig& config, const fs::path& out_dir) {
  Loaded in = load_inputs(checkpoint, dataset, config);
  RunWriter out(out_dir, "continual", config, in.dataset.provenance);
  ContinualRunResult result;
  result.report.method = to_string(config.edit.variant);
  result.report.dataset = in.dataset.provenance;

  Model live = in.base;
  std::ostringstream trace;
  for (std::size_t i = 0; i < in.records.size() && !result.collapsed; ++i) {
    EditConfig ec = config.edit;
    ec.seed = record_seed(config.seed, i);
    try {
      const EditOutcome outcome = ice_edit(live, in.records[i], ec);
      for (const auto& s : outcome.loss_trace) trace << step_json(i, s).dump() << '\n';
      live.params = outcome.final_params;
      RecordMetrics r = evaluate_record(in.base, live, in.base, in.records[i], config.metrics);
      r.index = i;
      result.report.records.push_back(std::move(r));
    } catch (const NumericalError& e) {
      result.report.records.push_back(failed_record(i, e.what()));
      result.collapsed = true;
    } catch (const InputError& e) {
      result.report.records.push_back(failed_record(i, e.what()));
    } catch (const ContextOverflow& e) {
      result.report.records.push_back(failed_record(i, e.what()));
    }
  }
  result.report.aggregate = aggregate(result.report.records);
  result.baseline = evaluate(in.base, in.base, in.base, in.records, config.metrics).aggregate;

  std::ostringstream traj;
  traj << "edit," << kMetricHeader << '\n';
  for (const auto& r : result.report.records) traj << r.index << ',' << record_cells(r) << '\n';
  std::ostringstream base;
  base << kMetricHeader << '\n' << metric_cells(result.baseline) << '\n';

  out.write("report.json", report_json(result.report));
  out.write("report.csv", report_csv(result.report));
  out.write("trajectory.csv", traj.str());
  out.write("baseline.csv", base.str());
  out.write("trace.ndjson", trace.str());
  result.outputs = out.finish();
  return result;
}

namespace {

template <typename T>
std::vector<T> parse_list(const std::string& text, T (*conv)(const std::string&, const std::string&),
                          const std::string& key) {
  std::vector<T> out;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(conv(key, item.substr(b, e - b + 1)));
  }
  if (out.empty()) throw ConfigError("grid axis '" + key + "' is empty");
  return out;
}

double to_double(const std::string& key, const std::string& v) { return kv_double({{key, v}}, key, 0); }
int to_int(const std::string& key, const std::string& v) { return kv_int({{key, v}}, key, 0); }
Variant to_variant(const std::string&, const std::string& v) { return parse_variant(v); }

}  // namespace

AblationGrid parse_ablation_grid(const std::string& spec, const EditConfig& base) {
  AblationGrid g;
  g.variants = {base.variant};
  g.lambdas = {base.lambda};
  g.temperatures = {base.temperature};
  g.sample_lens = {base.sample_len};
  g.samples = {base.samples};
  if (spec == "variants") {
    g.variants = {Variant::kIceDynamic, Variant::kIceNoContext, Variant::kIceStatic,
                  Variant::kIceStaticNoContext};
  } else if (spec == "lambda") {
    g.lambdas = {0.6, 0.8, 1.0, 1.2, 1.4};
  } else if (spec == "temperature") {
    g.temperatures = {0.1, 1.0, 10.0, 100.0};
  } else if (spec == "sample_len") {
    g.sample_lens = {3, 5, 10};
  } else if (spec == "samples") {
    g.samples = {1, 3, 5, 10};
  } else {
    const KeyValues kv = read_key_values(spec);
    static const std::vector<std::string> keys{"variant", "lambda",       "temperature", "sample_len",
                                               "samples", "trace_record", "trace_tokens"};
    reject_unknown_keys(kv, {&keys});
    if (kv.count("variant")) g.variants = parse_list<Variant>(kv.at("variant"), to_variant, "variant");
    if (kv.count("lambda")) g.lambdas = parse_list<double>(kv.at("lambda"), to_double, "lambda");
    if (kv.count("temperature")) {
      g.temperatures = parse_list<double>(kv.at("temperature"), to_double, "temperature");
    }
    if (kv.count("sample_len")) g.sample_lens = parse_list<int>(kv.at("sample_len"), to_int, "sample_len");
    if (kv.count("samples")) g.samples = parse_list<int>(kv.at("samples"), to_int, "samples");
    g.trace_record = kv_int(kv, "trace_record", g.trace_record);
    g.trace_tokens = kv_int(kv, "trace_tokens", g.trace_tokens);
  }
  if (g.trace_record < 0) throw ConfigError("trace_record must be nonnegative");
  if (g.trace_tokens < 1) throw ConfigError("trace_tokens must be positive");
  return g;
}

std::vector<AblationCell> enumerate_cells(const AblationGrid& grid, const EditConfig& base) {
  std::vector<AblationCell> cells;
  for (Variant v : grid.variants)
    for (double lambda : grid.lambdas)
      for (double t : grid.temperatures)
        for (int len : grid.sample_lens)
          for (int k : grid.samples) {
            AblationCell c;
            c.index = cells.size();
            c.edit = base;
            c.edit.variant = v;
            c.edit.lambda = lambda;
            c.edit.temperature = t;
            c.edit.sample_len = len;
            c.edit.samples = k;
            c.edit.validate();
            cells.push_back(c);
          }
  return cells;
}

AblationRunResult run_ablate(const fs::path& checkpoint, const fs::path& dataset,
                             const HarnessConfig& config, const std::string& grid_spec,
                             const fs::path& out_dir) {
  Loaded in = load_inputs(checkpoint, dataset, config);
  const AblationGrid grid = parse_ablation_grid(grid_spec, config.edit);
  const auto cells = enumerate_cells(grid, config.edit);
  RunWriter out(out_dir, "ablate " + grid_spec, config, in.dataset.provenance);
  AblationRunResult result;

  std::ostringstream table;
  table << "cell,variant,dynamic,context,lambda,temperature,sample_len,samples," << kMetricHeader
        << ",failed\n";
  for (const auto& c : cells) {
    std::vector<RecordMetrics> recs;
    for (std::size_t i = 0; i < in.records.size(); ++i) {
      EditConfig ec = c.edit;
      ec.seed = record_seed(record_seed(config.seed, c.index), i);
      try {
        const EditOutcome outcome = ice_edit(in.base, in.records[i], ec);
        const Model post{in.base.config, outcome.final_params};
        RecordMetrics r = evaluate_record(in.base, post, in.base, in.records[i], config.metrics);
        r.index = i;
        recs.push_back(std::move(r));
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::kIo) throw;
        recs.push_back(failed_record(i, e.what()));
      }
    }
    const AggregateMetrics a = aggregate(recs);
    const VariantTraits t = traits(c.edit.variant);
    table << c.index << ',' << to_string(c.edit.variant) << ',' << (t.dynamic ? 1 : 0) << ','
          << (t.context ? 1 : 0) << ',' << format_double(c.edit.lambda) << ','
          << format_double(c.edit.temperature) << ',' << c.edit.sample_len << ','
          << c.edit.samples << ',' << metric_cells(a) << ',' << a.failed << '\n';
    result.rows.push_back(a);
  }
  out.write("table.csv", table.str());

  // Static against dynamic targets on one record at every grid temperature.
  std::ostringstream conv, top;
  conv << "target,temperature,step,combined,ft,ice\n";
  top << "target,temperature,step,rank,token,probability\n";
  if (!in.records.empty()) {
    const std::size_t ri =
        std::min<std::size_t>(static_cast<std::size_t>(grid.trace_record), in.records.size() - 1);
    const TokenizedRecord& rec = in.records[ri];
    const TokenSeq probe = with_bos({rec.query, rec.target});
    std::vector<double> p0 = next_token_log_probs(in.base, probe);
    std::vector<int> ranked(p0.size());
    for (std::size_t i = 0; i < ranked.size(); ++i) ranked[i] = static_cast<int>(i);
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](int a, int b) { return p0[static_cast<std::size_t>(a)] > p0[static_cast<std::size_t>(b)]; });
    ranked.resize(std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(grid.trace_tokens)));

    for (double temp : grid.temperatures) {
      for (Variant v : {Variant::kIceStatic, Variant::kIceDynamic}) {
        const std::string name = traits(v).dynamic ? "dynamic" : "static";
        EditConfig ec = config.edit;
        ec.variant = v;
        ec.temperature = temp;
        ec.convergence_tol = 0.0;  // full-length curves
        ec.seed = record_seed(config.seed, ri);
        auto emit_top = [&](int step, const Model& m) {
          const auto lp = next_token_log_probs(m, probe);
          for (std::size_t k = 0; k < ranked.size(); ++k) {
            top << name << ',' << format_double(temp) << ',' << step << ',' << k + 1 << ','
                << in.dataset.vocab.word(ranked[k]) << ','
                << format_double(std::exp(lp[static_cast<std::size_t>(ranked[k])])) << '\n';
          }
        };
        emit_top(0, in.base);
        try {
          const EditOutcome outcome =
              ice_edit(in.base, rec, ec, [&](const StepRecord& s, const Model& m) {
                conv << name << ',' << format_double(temp) << ',' << s.step << ','
                     << format_double(s.combined) << ',' << format_double(s.ft) << ','
                     << format_double(s.ice) << '\n';
                emit_top(s.step + 1, m);
              });
          (void)outcome;
        } catch (const NumericalError&) {
          // A diverged curve simply ends early.
        }
      }
    }
  }
  out.write("convergence.csv", conv.str());
  out.write("top_tokens.csv", top.str());
  result.outputs = out.finish();
  return result;
}

std::vector<ReportRow> load_run_reports(const std::vector<fs::path>& run_dirs) {
  if (run_dirs.empty()) throw InputError("report needs at least one run directory");
  std::vector<ReportRow> rows;
  for (const auto& dir : run_dirs) {
    const fs::path file = dir / "report.json";
    json root;
    try {
      root = json::parse(read_text(file));
    } catch (const json::parse_error& e) {
      throw ParseError(file.string() + ": invalid JSON");
    }
    if (!root.is_object() || root.value("schema", "") != kReportSchema || !root.contains("aggregate") ||
        !root["aggregate"].is_object()) {
      throw ParseError(file.string() + ": report schema mismatch");
    }
    ReportRow row;
    row.method = root.value("method", "");
    row.dataset = root.value("dataset", "");
    const json& a = root["aggregate"];
    auto get = [&](const char* key, bool rate) -> std::optional<double> {
      if (!a.contains(key) || a[key].is_null()) return std::nullopt;
      if (!a[key].is_number()) throw ParseError(file.string() + ": metric '" + key + "' is not a number");
      const double v = a[key].get<double>();
      return rate ? v / 100.0 : v;
    };
    row.metrics.edit_succ = get("edit_succ", true);
    row.metrics.portability = get("portability", true);
    row.metrics.locality = get("locality", true);
    row.metrics.fluency = get("fluency", false);
    row.metrics.ppl = get("ppl", false);
    row.metrics.ppl_r = get("ppl_r", false);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string comparison_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os << "method,dataset," << kMetricHeader << '\n';
  auto quoted = [](const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
  };
  for (const auto& r : rows) {
    os << quoted(r.method) << ',' << quoted(r.dataset) << ',' << metric_cells(r.metrics) << '\n';
  }
  return os.str();
}

std::vector<std::string> run_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  const auto rows = load_run_reports(run_dirs);
  HarnessConfig none;
  RunWriter out(out_dir, "report", none, "merged");
  out.write("comparison.csv", comparison_csv(rows));
  return out.finish();
}

}  // namespace icelab
