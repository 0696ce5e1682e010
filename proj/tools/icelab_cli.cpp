// Command-line driver. Talks to the library only through the C API.
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "icelab/icelab.h"

namespace {

enum Exit { kOk = 0, kUsage = 1, kNumerical = 2, kIo = 3 };

int exit_code(icelab_status s) {
  switch (s) {
    case ICELAB_OK: return kOk;
    case ICELAB_ERR_NUMERICAL: return kNumerical;
    case ICELAB_ERR_IO:
    case ICELAB_ERR_PARSE: return kIo;
    default: return kUsage;
  }
}

int report(icelab_status s, const char* verb) {
  if (s != ICELAB_OK) {
    std::fprintf(stderr, "icelab %s: %s: %s\n", verb, icelab_status_name(s), icelab_last_error());
  }
  return exit_code(s);
}

struct Common {
  std::string config;
  std::optional<long long> seed;
  std::string out;
  std::string checkpoint;
  std::string dataset;
  std::optional<std::string> variant;
  std::optional<double> lambda, temperature, lr, clip, clamp;
  std::optional<int> samples, sample_len, steps, top_k;
  std::string grid;
  std::vector<std::string> runs;
};

void add_edit_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--checkpoint", c.checkpoint, "Model checkpoint")->required();
  cmd->add_option("--dataset", c.dataset, "Edit-record file")->required();
  cmd->add_option("--variant", c.variant, "FT, FT_CLAMPED, FT_SAMPLING, ICE_DYNAMIC, ICE_STATIC, ICE_NO_CONTEXT or ICE_STATIC_NO_CONTEXT");
  cmd->add_option("--lambda", c.lambda, "Weight of the in-context term");
  cmd->add_option("--temperature", c.temperature, "Sampling temperature");
  cmd->add_option("--top-k", c.top_k, "Sample only among the k likeliest tokens (0 = all)");
  cmd->add_option("--samples", c.samples, "Completions per step");
  cmd->add_option("--sample-len", c.sample_len, "Tokens per completion");
  cmd->add_option("--clip", c.clip, "Elementwise gradient bound");
  cmd->add_option("--clamp", c.clamp, "Weight-ball radius");
}

// Builds the configuration: file first, then explicit flags.
icelab_status build_config(const Common& c, bool pretraining, icelab_config** out) {
  icelab_status s = icelab_config_create(out);
  if (s != ICELAB_OK) return s;
  icelab_config* cfg = *out;
  if (!c.config.empty() && (s = icelab_config_load(cfg, c.config.c_str())) != ICELAB_OK) return s;
  std::map<std::string, std::string> set;
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  if (c.seed) set["seed"] = std::to_string(*c.seed);
  if (c.variant) set["variant"] = *c.variant;
  if (c.lambda) set["lambda"] = num(*c.lambda);
  if (c.temperature) set["temperature"] = num(*c.temperature);
  if (c.top_k) set["top_k"] = std::to_string(*c.top_k);
  if (c.samples) set["samples"] = std::to_string(*c.samples);
  if (c.sample_len) set["sample_len"] = std::to_string(*c.sample_len);
  if (c.clip) set["clip_grad"] = num(*c.clip);
  if (c.clamp) set["clamp_radius"] = num(*c.clamp);
  if (c.steps) set[pretraining ? "pretrain_steps" : "max_steps"] = std::to_string(*c.steps);
  if (c.lr) set[pretraining ? "pretrain_lr" : "lr"] = num(*c.lr);
  for (const auto& [k, v] : set) {
    if ((s = icelab_config_set(cfg, k.c_str(), v.c_str())) != ICELAB_OK) return s;
  }
  return ICELAB_OK;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"In-context knowledge editing experiments on small language models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(icelab_version()));
  Common c;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", c.config, "key = value configuration file");
    cmd->add_option("--seed", c.seed, "Master seed");
    cmd->add_option("--out", c.out, "Output directory")->required();
    cmd->add_option("--steps", c.steps, "Optimization steps");
    cmd->add_option("--lr", c.lr, "Learning rate");
  };

  auto* pretrain = app.add_subcommand("pretrain", "Build a synthetic world and pretrain a model on it");
  common(pretrain);
  auto* edit = app.add_subcommand("edit", "Edit each record on a fresh copy of the model");
  common(edit);
  add_edit_flags(edit, c);
  auto* continual = app.add_subcommand("continual", "Apply the records as sequential edits");
  common(continual);
  add_edit_flags(continual, c);
  auto* ablate = app.add_subcommand("ablate", "Run an ablation grid");
  common(ablate);
  add_edit_flags(ablate, c);
  ablate->add_option("--grid", c.grid, "Grid name (variants, lambda, temperature, sample_len, samples) or grid file")
      ->required();
  auto* merge = app.add_subcommand("report", "Merge run directories into one comparison table");
  merge->add_option("--out", c.out, "Output directory")->required();
  merge->add_option("runs", c.runs, "Run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  if (merge->parsed()) {
    std::vector<const char*> dirs;
    for (const auto& r : c.runs) dirs.push_back(r.c_str());
    return report(icelab_run_report(dirs.data(), dirs.size(), c.out.c_str()), "report");
  }

  icelab_config* cfg = nullptr;
  const bool pretraining = pretrain->parsed();
  icelab_status s = build_config(c, pretraining, &cfg);
  if (s == ICELAB_OK) {
    if (pretraining) {
      double accuracy = 0.0;
      s = icelab_run_pretrain(cfg, c.out.c_str(), &accuracy);
      if (s == ICELAB_OK) std::printf("fact accuracy %.2f%%\n", accuracy * 100.0);
    } else if (edit->parsed()) {
      s = icelab_run_edit(cfg, c.checkpoint.c_str(), c.dataset.c_str(), c.out.c_str());
    } else if (continual->parsed()) {
      s = icelab_run_continual(cfg, c.checkpoint.c_str(), c.dataset.c_str(), c.out.c_str());
    } else if (ablate->parsed()) {
      s = icelab_run_ablate(cfg, c.checkpoint.c_str(), c.dataset.c_str(), c.grid.c_str(), c.out.c_str());
    }
  }
  icelab_config_destroy(cfg);
  const char* verb = app.get_subcommands().front()->get_name().c_str();
  return report(s, verb);
}
