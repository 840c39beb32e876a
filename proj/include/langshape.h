/* langshape.h - C interface to the langshape shared library.
 *
 * Every function that can fail returns an ls_status; LS_OK means success.
 * On failure, ls_last_error() returns a human-readable message for the most
 * recent failing call on the current thread. Objects returned through
 * ls_*_open / ls_*_load / ls_*_generate are opaque and must be released with
 * the matching ls_*_free.
 */
#ifndef LANGSHAPE_H
#define LANGSHAPE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define LS_API __declspec(dllexport)
#else
#define LS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ls_status {
  LS_OK = 0,
  LS_ERROR_IO = 1,       /* file missing or unwritable */
  LS_ERROR_PARSE = 2,    /* malformed input text or checkpoint */
  LS_ERROR_INVALID = 3,  /* domain invariant or argument violation */
  LS_ERROR_CONFIG = 4,   /* missing/bad configuration */
  LS_ERROR_STATE = 5,    /* contract violation (e.g. stepping a dead state) */
  LS_ERROR_INTERNAL = 6
} ls_status;

LS_API const char* ls_version(void);
LS_API const char* ls_status_name(ls_status status);
LS_API const char* ls_last_error(void);

/* ------------------------------------------------------------------ maps */

typedef struct ls_map ls_map;

LS_API ls_status ls_map_load(const char* path, ls_map** out_map);
LS_API ls_status ls_map_generate(int width, int height, double density, uint64_t seed,
                                 ls_map** out_map);
LS_API ls_status ls_map_save(const ls_map* map, const char* path);
LS_API int ls_map_width(const ls_map* map);
LS_API int ls_map_height(const ls_map* map);
LS_API void ls_map_free(ls_map* map);

/* ------------------------------------------------------- data collection */

/* Trains n_agents one-row-forward demonstrators on the map and writes the
 * harvested view/action pairs as a TSV file. */
LS_API ls_status ls_collect_pairs(const ls_map* map, int n_agents, uint64_t seed,
                                  const char* out_path);

typedef struct ls_dataset_stats {
  uint64_t size;
  double top_sentence_share;
  double mean_repetition_share;
} ls_dataset_stats;

/* Annotates the pairs through the grammar at the given oracle accuracy,
 * removes exact duplicates and writes the dataset TSV. */
LS_API ls_status ls_build_dataset(const char* pairs_path, const char* grammar_path,
                                  double accuracy, uint64_t seed, const char* out_path,
                                  ls_dataset_stats* stats /* nullable */);

/* --------------------------------------------------------------- training */

typedef struct ls_train_options {
  int epochs;
  int layers;
  int hidden;
  int embedding;
  int batch;
  double learning_rate;
  uint64_t seed;
} ls_train_options;

LS_API void ls_train_options_init(ls_train_options* options);

LS_API ls_status ls_train_model(const char* dataset_path, const char* grammar_path,
                                const ls_train_options* options /* nullable: defaults */,
                                const char* model_out_path,
                                const char* loss_csv_path /* nullable */,
                                double* final_token_accuracy /* nullable */);

/* ----------------------------------------------------------------- advice */

typedef struct ls_advisor ls_advisor;

LS_API ls_status ls_advisor_open(const char* model_path, const char* dataset_path,
                                 ls_advisor** out_advisor);

/* view_tokens: nine space-separated cell tokens (wall grass road car water
 * log goal). Returns the selected utterance, the five per-action log
 * probabilities (order: up down left right stay) and the Boltzmann
 * distribution at temperature tau. Any output pointer may be NULL. */
LS_API ls_status ls_advisor_query(ls_advisor* advisor, const char* view_tokens, double tau,
                                  int* utterance_id, char* utterance_buf,
                                  size_t utterance_buf_len, double scores[5], double probs[5]);
LS_API void ls_advisor_free(ls_advisor* advisor);

/* Temperature schedule lookup; shape is constant | linear | geometric. */
LS_API ls_status ls_tau_at(double tau0, double tau_max, long horizon, const char* shape,
                           long episode, double* out_tau);

/* ------------------------------------------------------------ experiments */

/* Overrides are "key=value" strings applied on top of the config file.
 * config_path may be NULL when the overrides carry every required key. */
LS_API ls_status ls_run_experiment(const char* config_path, const char* const* overrides,
                                   size_t n_overrides, const char* out_dir);

LS_API ls_status ls_compare_curves(const char* const* curve_paths, size_t n_curves,
                                   const char* out_path);

LS_API ls_status ls_pipeline(const char* config_path, const char* const* overrides,
                             size_t n_overrides, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* LANGSHAPE_H */
