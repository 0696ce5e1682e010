#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "icelab/config_text.hpp"
#include "icelab/corpus.hpp"
#include "icelab/editing.hpp"
#include "icelab/metrics.hpp"
#include "icelab/pretrain.hpp"

namespace icelab {

// Everything one experiment reads from its key = value file. A single
// `seed` drives the world, the initialization, pretraining and editing.
struct HarnessConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  WorldConfig world;
  PretrainOptions pretrain;
  EditConfig edit;
  MetricsConfig metrics;
  // Process only the first this-many records; 0 means all.
  int max_records = 0;
};

const std::vector<std::string>& harness_keys();
HarnessConfig parse_harness_config(const KeyValues& kv);
std::string harness_config_text(const HarnessConfig& c);

struct RunManifest {
  std::string command;
  std::string config_text;
  std::string dataset;
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::vector<std::string> outputs;  // file names relative to the run directory
  std::string version;
};

std::string manifest_json(const RunManifest& m);

// Edit seed of record `index`; every command derives per-record seeds this way.
std::uint64_t record_seed(std::uint64_t seed, std::uint64_t index);

struct PretrainResult {
  double fact_accuracy = 0.0;
  double initial_nll = 0.0;
  double final_nll = 0.0;
  std::vector<std::string> outputs;
};

// Share of world facts whose canonical question decodes to the object.
double fact_accuracy(const Model& m, const SynthWorld& world);

PretrainResult run_pretrain(const HarnessConfig& config, const std::filesystem::path& out_dir);

struct EditRunResult {
  MetricsReport report;
  std::vector<std::string> outputs;
};

EditRunResult run_edit(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
                       const HarnessConfig& config, const std::filesystem::path& out_dir);

struct ContinualRunResult {
  MetricsReport report;   // record i evaluated right after edit i
  AggregateMetrics baseline;  // the unedited model on the same records
  bool collapsed = false;     // stopped early on non-finite parameters
  std::vector<std::string> outputs;
};

ContinualRunResult run_continual(const std::filesystem::path& checkpoint,
                                 const std::filesystem::path& dataset, const HarnessConfig& config,
                                 const std::filesystem::path& out_dir);

struct AblationGrid {
  std::vector<Variant> variants;
  std::vector<double> lambdas;
  std::vector<double> temperatures;
  std::vector<int> sample_lens;
  std::vector<int> samples;
  // Record used for the convergence and top-token traces.
  int trace_record = 0;
  int trace_tokens = 6;
};

struct AblationCell {
  std::size_t index = 0;
  EditConfig edit;
};

// Named grids: variants, lambda, temperature, sample_len, samples. Otherwise
// a key = value file with comma lists. Missing axes take the base config.
AblationGrid parse_ablation_grid(const std::string& spec_or_path, const EditConfig& base);
std::vector<AblationCell> enumerate_cells(const AblationGrid& grid, const EditConfig& base);

struct AblationRunResult {
  std::vector<AggregateMetrics> rows;  // one per cell
  std::vector<std::string> outputs;
};

AblationRunResult run_ablate(const std::filesystem::path& checkpoint,
                             const std::filesystem::path& dataset, const HarnessConfig& config,
                             const std::string& grid_spec, const std::filesystem::path& out_dir);

struct ReportRow {
  std::string method;
  std::string dataset;
  AggregateMetrics metrics;
};

std::vector<ReportRow> load_run_reports(const std::vector<std::filesystem::path>& run_dirs);
std::string comparison_csv(const std::vector<ReportRow>& rows);
std::vector<std::string> run_report(const std::vector<std::filesystem::path>& run_dirs,
                                    const std::filesystem::path& out_dir);

std::string version_string();

}  // namespace icelab
