#ifndef ICELAB_ICELAB_H
#define ICELAB_ICELAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(ICELAB_BUILDING)
#    define ICELAB_API __declspec(dllexport)
#  else
#    define ICELAB_API __declspec(dllimport)
#  endif
#else
#  define ICELAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum icelab_status {
  ICELAB_OK = 0,
  ICELAB_ERR_ARGUMENT = 1,         /* null handle or bad argument */
  ICELAB_ERR_CONFIG = 2,
  ICELAB_ERR_SHAPE = 3,
  ICELAB_ERR_CONTRACT = 4,
  ICELAB_ERR_CONTEXT_OVERFLOW = 5,
  ICELAB_ERR_NUMERICAL = 6,
  ICELAB_ERR_SIZE = 7,
  ICELAB_ERR_PARSE = 8,
  ICELAB_ERR_IO = 9,
  ICELAB_ERR_STRUCTURAL = 10,
  ICELAB_ERR_INPUT = 11,
  ICELAB_ERR_BUFFER = 12,          /* output buffer too small; required size reported */
  ICELAB_ERR_INTERNAL = 13
} icelab_status;

typedef struct icelab_model icelab_model;
typedef struct icelab_dataset icelab_dataset;
typedef struct icelab_config icelab_config;

/* Message of the last failure on the calling thread; empty after success. */
ICELAB_API const char* icelab_last_error(void);
ICELAB_API const char* icelab_status_name(icelab_status status);
ICELAB_API const char* icelab_version(void);

/* Experiment configuration: key = value pairs. */
ICELAB_API icelab_status icelab_config_create(icelab_config** out);
ICELAB_API void icelab_config_destroy(icelab_config* config);
/* Merges a key = value file; keys already set are overwritten. */
ICELAB_API icelab_status icelab_config_load(icelab_config* config, const char* path);
ICELAB_API icelab_status icelab_config_set(icelab_config* config, const char* key,
                                           const char* value);
/* Writes the resolved configuration text. With a NULL buffer only *needed is
   filled (terminator included). */
ICELAB_API icelab_status icelab_config_render(const icelab_config* config, char* buffer,
                                              size_t capacity, size_t* needed);

ICELAB_API icelab_status icelab_model_load(const char* path, icelab_model** out);
ICELAB_API icelab_status icelab_model_save(const icelab_model* model, const char* path);
ICELAB_API icelab_status icelab_model_clone(const icelab_model* model, icelab_model** out);
ICELAB_API void icelab_model_destroy(icelab_model* model);
ICELAB_API int icelab_model_vocab_size(const icelab_model* model);
ICELAB_API int icelab_model_context_window(const icelab_model* model);
ICELAB_API size_t icelab_model_parameter_count(const icelab_model* model);

/* Natural-log next-token distribution after `prefix`; `out` holds vocab_size
   entries. */
ICELAB_API icelab_status icelab_model_next_token_log_probs(const icelab_model* model,
                                                           const int32_t* prefix,
                                                           size_t prefix_len, double* out,
                                                           size_t capacity);
ICELAB_API icelab_status icelab_model_sequence_log_prob(const icelab_model* model,
                                                        const int32_t* prefix, size_t prefix_len,
                                                        const int32_t* continuation,
                                                        size_t continuation_len, double* out);
ICELAB_API icelab_status icelab_model_greedy_decode(const icelab_model* model,
                                                    const int32_t* prefix, size_t prefix_len,
                                                    int max_len, int32_t* out, size_t capacity,
                                                    size_t* out_len);

ICELAB_API icelab_status icelab_dataset_load(const char* path, icelab_dataset** out,
                                             size_t* warnings);
ICELAB_API icelab_status icelab_dataset_save(const icelab_dataset* dataset, const char* path);
ICELAB_API void icelab_dataset_destroy(icelab_dataset* dataset);
ICELAB_API size_t icelab_dataset_size(const icelab_dataset* dataset);
/* Whitespace tokenization under the dataset vocabulary. */
ICELAB_API icelab_status icelab_dataset_tokenize(const icelab_dataset* dataset, const char* text,
                                                 int32_t* out, size_t capacity, size_t* out_len);

/* Edits a copy of `model` on record `index` using the edit keys of `config`.
   The input model is left untouched. */
ICELAB_API icelab_status icelab_edit_record(const icelab_model* model,
                                            const icelab_dataset* dataset, size_t index,
                                            const icelab_config* config,
                                            icelab_model** edited, int* steps_taken);

/* Experiment runs. Each writes its files and a manifest into out_dir. */
ICELAB_API icelab_status icelab_run_pretrain(const icelab_config* config, const char* out_dir,
                                             double* fact_accuracy);
ICELAB_API icelab_status icelab_run_edit(const icelab_config* config, const char* checkpoint,
                                         const char* dataset, const char* out_dir);
ICELAB_API icelab_status icelab_run_continual(const icelab_config* config,
                                              const char* checkpoint, const char* dataset,
                                              const char* out_dir);
ICELAB_API icelab_status icelab_run_ablate(const icelab_config* config, const char* checkpoint,
                                           const char* dataset, const char* grid,
                                           const char* out_dir);
ICELAB_API icelab_status icelab_run_report(const char* const* run_dirs, size_t count,
                                           const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif
