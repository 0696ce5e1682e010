#include "icelab/icelab.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "icelab/checkpoint.hpp"
#include "icelab/config_text.hpp"
#include "icelab/corpus.hpp"
#include "icelab/editing.hpp"
#include "icelab/errors.hpp"
#include "icelab/harness.hpp"

struct icelab_model {
  icelab::Model model;
};

struct icelab_dataset {
  icelab::EditDataset dataset;
};

struct icelab_config {
  icelab::KeyValues kv;
};

namespace {

thread_local std::string g_last_error;

icelab_status status_of(icelab::ErrorKind kind) {
  using icelab::ErrorKind;
  switch (kind) {
    case ErrorKind::kConfig: return ICELAB_ERR_CONFIG;
    case ErrorKind::kShape: return ICELAB_ERR_SHAPE;
    case ErrorKind::kContract: return ICELAB_ERR_CONTRACT;
    case ErrorKind::kContextOverflow: return ICELAB_ERR_CONTEXT_OVERFLOW;
    case ErrorKind::kNumerical: return ICELAB_ERR_NUMERICAL;
    case ErrorKind::kSize: return ICELAB_ERR_SIZE;
    case ErrorKind::kParse: return ICELAB_ERR_PARSE;
    case ErrorKind::kIo: return ICELAB_ERR_IO;
    case ErrorKind::kStructural: return ICELAB_ERR_STRUCTURAL;
    case ErrorKind::kInput: return ICELAB_ERR_INPUT;
  }
  return ICELAB_ERR_INTERNAL;
}

icelab_status fail(icelab_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Runs `body` and converts any exception into a status code.
template <typename F>
icelab_status guarded(F&& body) {
  try {
    g_last_error.clear();
    return body();
  } catch (const icelab::Error& e) {
    return fail(status_of(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(ICELAB_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(ICELAB_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(ICELAB_ERR_INTERNAL, "unknown failure");
  }
}

#define ICELAB_REQUIRE(cond, what) \
  if (!(cond)) return fail(ICELAB_ERR_ARGUMENT, what)

std::span<const icelab::Token> tokens(const int32_t* p, size_t n) {
  static_assert(sizeof(icelab::Token) == sizeof(int32_t));
  return {reinterpret_cast<const icelab::Token*>(p), n};
}

icelab::HarnessConfig harness(const icelab_config* c) { return icelab::parse_harness_config(c->kv); }

}  // namespace

extern "C" {

const char* icelab_last_error(void) { return g_last_error.c_str(); }

const char* icelab_status_name(icelab_status s) {
  switch (s) {
    case ICELAB_OK: return "ok";
    case ICELAB_ERR_ARGUMENT: return "invalid argument";
    case ICELAB_ERR_CONFIG: return "configuration error";
    case ICELAB_ERR_SHAPE: return "shape error";
    case ICELAB_ERR_CONTRACT: return "contract violation";
    case ICELAB_ERR_CONTEXT_OVERFLOW: return "context overflow";
    case ICELAB_ERR_NUMERICAL: return "numerical failure";
    case ICELAB_ERR_SIZE: return "size limit exceeded";
    case ICELAB_ERR_PARSE: return "parse error";
    case ICELAB_ERR_IO: return "i/o error";
    case ICELAB_ERR_STRUCTURAL: return "structural error";
    case ICELAB_ERR_INPUT: return "invalid input";
    case ICELAB_ERR_BUFFER: return "buffer too small";
    case ICELAB_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* icelab_version(void) {
  static const std::string v = icelab::version_string();
  return v.c_str();
}

icelab_status icelab_config_create(icelab_config** out) {
  ICELAB_REQUIRE(out, "out is null");
  return guarded([&] {
    *out = new icelab_config{};
    return ICELAB_OK;
  });
}

void icelab_config_destroy(icelab_config* config) { delete config; }

icelab_status icelab_config_load(icelab_config* config, const char* path) {
  ICELAB_REQUIRE(config && path, "null argument");
  return guarded([&] {
    icelab::KeyValues next = config->kv;
    for (auto& [k, v] : icelab::read_key_values(path)) next[k] = v;
    (void)icelab::parse_harness_config(next);
    config->kv = std::move(next);
    return ICELAB_OK;
  });
}

icelab_status icelab_config_set(icelab_config* config, const char* key, const char* value) {
  ICELAB_REQUIRE(config && key && value, "null argument");
  return guarded([&] {
    if (!*key) return fail(ICELAB_ERR_ARGUMENT, "empty config key");
    // Validate against the full set before committing the change.
    icelab::KeyValues next = config->kv;
    next[key] = value;
    (void)icelab::parse_harness_config(next);
    config->kv = std::move(next);
    return ICELAB_OK;
  });
}

icelab_status icelab_config_render(const icelab_config* config, char* buffer, size_t capacity,
                                   size_t* needed) {
  ICELAB_REQUIRE(config && needed, "null argument");
  return guarded([&] {
    const std::string text = icelab::harness_config_text(harness(config));
    *needed = text.size() + 1;
    if (!buffer) return ICELAB_OK;
    if (capacity < *needed) return fail(ICELAB_ERR_BUFFER, "config buffer too small");
    std::memcpy(buffer, text.c_str(), *needed);
    return ICELAB_OK;
  });
}

icelab_status icelab_model_load(const char* path, icelab_model** out) {
  ICELAB_REQUIRE(path && out, "null argument");
  return guarded([&] {
    *out = new icelab_model{icelab::load_checkpoint(path)};
    return ICELAB_OK;
  });
}

icelab_status icelab_model_save(const icelab_model* model, const char* path) {
  ICELAB_REQUIRE(model && path, "null argument");
  return guarded([&] {
    icelab::save_checkpoint(path, model->model);
    return ICELAB_OK;
  });
}

icelab_status icelab_model_clone(const icelab_model* model, icelab_model** out) {
  ICELAB_REQUIRE(model && out, "null argument");
  return guarded([&] {
    *out = new icelab_model{model->model};
    return ICELAB_OK;
  });
}

void icelab_model_destroy(icelab_model* model) { delete model; }

int icelab_model_vocab_size(const icelab_model* model) {
  return model ? model->model.config.vocab_size : 0;
}

int icelab_model_context_window(const icelab_model* model) {
  return model ? model->model.config.context_window : 0;
}

size_t icelab_model_parameter_count(const icelab_model* model) {
  return model ? model->model.params.parameter_count() : 0;
}

icelab_status icelab_model_next_token_log_probs(const icelab_model* model, const int32_t* prefix,
                                                size_t prefix_len, double* out, size_t capacity) {
  ICELAB_REQUIRE(model && out && (prefix || prefix_len == 0), "null argument");
  return guarded([&] {
    const auto lp = icelab::next_token_log_probs(model->model, tokens(prefix, prefix_len));
    if (capacity < lp.size()) return fail(ICELAB_ERR_BUFFER, "distribution buffer too small");
    std::copy(lp.begin(), lp.end(), out);
    return ICELAB_OK;
  });
}

icelab_status icelab_model_sequence_log_prob(const icelab_model* model, const int32_t* prefix,
                                             size_t prefix_len, const int32_t* continuation,
                                             size_t continuation_len, double* out) {
  ICELAB_REQUIRE(model && out && (prefix || prefix_len == 0) &&
                     (continuation || continuation_len == 0),
                 "null argument");
  return guarded([&] {
    *out = icelab::sequence_log_prob(model->model, tokens(prefix, prefix_len),
                                     tokens(continuation, continuation_len));
    return ICELAB_OK;
  });
}

icelab_status icelab_model_greedy_decode(const icelab_model* model, const int32_t* prefix,
                                         size_t prefix_len, int max_len, int32_t* out,
                                         size_t capacity, size_t* out_len) {
  ICELAB_REQUIRE(model && out_len && (prefix || prefix_len == 0), "null argument");
  return guarded([&] {
    const auto seq = icelab::greedy_decode(model->model, tokens(prefix, prefix_len), max_len);
    *out_len = seq.size();
    if (capacity < seq.size() || (!out && !seq.empty())) {
      return fail(ICELAB_ERR_BUFFER, "decode buffer too small");
    }
    std::copy(seq.begin(), seq.end(), out);
    return ICELAB_OK;
  });
}

icelab_status icelab_dataset_load(const char* path, icelab_dataset** out, size_t* warnings) {
  ICELAB_REQUIRE(path && out, "null argument");
  return guarded([&] {
    auto loaded = icelab::load_edit_records(path);
    if (warnings) *warnings = loaded.warnings;
    *out = new icelab_dataset{std::move(loaded.dataset)};
    return ICELAB_OK;
  });
}

icelab_status icelab_dataset_save(const icelab_dataset* dataset, const char* path) {
  ICELAB_REQUIRE(dataset && path, "null argument");
  return guarded([&] {
    icelab::save_edit_records(dataset->dataset, path);
    return ICELAB_OK;
  });
}

void icelab_dataset_destroy(icelab_dataset* dataset) { delete dataset; }

size_t icelab_dataset_size(const icelab_dataset* dataset) {
  return dataset ? dataset->dataset.records.size() : 0;
}

icelab_status icelab_dataset_tokenize(const icelab_dataset* dataset, const char* text,
                                      int32_t* out, size_t capacity, size_t* out_len) {
  ICELAB_REQUIRE(dataset && text && out_len, "null argument");
  return guarded([&] {
    const auto seq = dataset->dataset.vocab.tokenize(text);
    *out_len = seq.size();
    if (capacity < seq.size() || (!out && !seq.empty())) {
      return fail(ICELAB_ERR_BUFFER, "token buffer too small");
    }
    std::copy(seq.begin(), seq.end(), out);
    return ICELAB_OK;
  });
}

icelab_status icelab_edit_record(const icelab_model* model, const icelab_dataset* dataset,
                                 size_t index, const icelab_config* config, icelab_model** edited,
                                 int* steps_taken) {
  ICELAB_REQUIRE(model && dataset && config && edited, "null argument");
  return guarded([&] {
    if (index >= dataset->dataset.records.size()) {
      return fail(ICELAB_ERR_ARGUMENT, "record index out of range");
    }
    if (dataset->dataset.vocab.size() != model->model.config.vocab_size) {
      return fail(ICELAB_ERR_STRUCTURAL, "dataset vocabulary does not match the model");
    }
    const auto h = harness(config);
    const auto record = icelab::tokenize_record(dataset->dataset.vocab, dataset->dataset.records[index]);
    const auto outcome = icelab::ice_edit(model->model, record, h.edit);
    *edited = new icelab_model{icelab::Model{model->model.config, outcome.final_params}};
    if (steps_taken) *steps_taken = outcome.steps_taken;
    return ICELAB_OK;
  });
}

icelab_status icelab_run_pretrain(const icelab_config* config, const char* out_dir,
                                  double* fact_accuracy) {
  ICELAB_REQUIRE(config && out_dir, "null argument");
  return guarded([&] {
    const auto r = icelab::run_pretrain(harness(config), out_dir);
    if (fact_accuracy) *fact_accuracy = r.fact_accuracy;
    return ICELAB_OK;
  });
}

icelab_status icelab_run_edit(const icelab_config* config, const char* checkpoint,
                              const char* dataset, const char* out_dir) {
  ICELAB_REQUIRE(config && checkpoint && dataset && out_dir, "null argument");
  return guarded([&] {
    icelab::run_edit(checkpoint, dataset, harness(config), out_dir);
    return ICELAB_OK;
  });
}

icelab_status icelab_run_continual(const icelab_config* config, const char* checkpoint,
                                   const char* dataset, const char* out_dir) {
  ICELAB_REQUIRE(config && checkpoint && dataset && out_dir, "null argument");
  return guarded([&] {
    const auto r = icelab::run_continual(checkpoint, dataset, harness(config), out_dir);
    if (r.collapsed) {
      return fail(ICELAB_ERR_NUMERICAL, "model collapsed; partial results written");
    }
    return ICELAB_OK;
  });
}

icelab_status icelab_run_ablate(const icelab_config* config, const char* checkpoint,
                                const char* dataset, const char* grid, const char* out_dir) {
  ICELAB_REQUIRE(config && checkpoint && dataset && grid && out_dir, "null argument");
  return guarded([&] {
    icelab::run_ablate(checkpoint, dataset, harness(config), grid, out_dir);
    return ICELAB_OK;
  });
}

icelab_status icelab_run_report(const char* const* run_dirs, size_t count, const char* out_dir) {
  ICELAB_REQUIRE(run_dirs && out_dir, "null argument");
  return guarded([&] {
    std::vector<std::filesystem::path> dirs;
    for (size_t i = 0; i < count; ++i) {
      if (!run_dirs[i]) return fail(ICELAB_ERR_ARGUMENT, "null run directory");
      dirs.emplace_back(run_dirs[i]);
    }
    icelab::run_report(dirs, out_dir);
    return ICELAB_OK;
  });
}

}  // extern "C"
