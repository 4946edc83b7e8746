/* vqss — query-free music source separation via a vector-quantized
 * conditioning codebook.
 *
 * C interface over the core library: opaque handles, integer status codes,
 * thread-local error strings. All audio is mono 44.1 kHz; buffers are double
 * samples in [-1, 1] unless a model produces more.
 */
#ifndef VQSS_H
#define VQSS_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define VQSS_API __declspec(dllexport)
#else
#define VQSS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vqss_status {
  VQSS_OK = 0,
  VQSS_ERR_INVALID_ARGUMENT = 1, /* bad config, bad input contract */
  VQSS_ERR_RUNTIME = 2           /* I/O failures and internal errors */
} vqss_status;

/* Library version string, static storage. */
VQSS_API const char* vqss_version(void);

/* Message for the most recent failure on this thread; empty on success. */
VQSS_API const char* vqss_last_error(void);

/* Writes the synthetic 4-class training corpus (240 WAV stems) under
 * out_dir/<class>/stem_NNN.wav. Deterministic for a given seed. */
VQSS_API vqss_status vqss_make_toy_corpus(const char* out_dir, uint64_t seed);

/* Runs training from a key-value config file (see README for the schema).
 * The resolved config, training_log.csv and checkpoints land in the config's
 * run_dir. On success copies the final checkpoint path into checkpoint_out
 * (truncated to checkpoint_cap, always NUL-terminated). checkpoint_out may be
 * NULL. */
VQSS_API vqss_status vqss_train_run(const char* config_path, char* checkpoint_out,
                                    size_t checkpoint_cap);

/* ---- trained models ---- */

typedef struct vqss_model vqss_model;

VQSS_API vqss_status vqss_model_open(const char* checkpoint_path, vqss_model** out);
VQSS_API void vqss_model_close(vqss_model* model);

VQSS_API int32_t vqss_model_codebook_size(const vqss_model* model);
VQSS_API int32_t vqss_model_code_dim(const vqss_model* model);
/* Copies codebook entry `index` (unit L2 norm, code_dim doubles). */
VQSS_API vqss_status vqss_model_codebook_entry(const vqss_model* model, int32_t index,
                                               double* out, int32_t capacity);
/* EMA cluster size of entry `index`. */
VQSS_API vqss_status vqss_model_codebook_usage(const vqss_model* model, int32_t index,
                                               double* ema_size);

/* ---- separation ---- */

/* Sweeps every codebook entry over the mixture in wav_path and writes
 * source_00.wav ... plus sources.json under out_dir. The input must be
 * mono-downmixable WAV at 44.1 kHz. */
VQSS_API vqss_status vqss_separate_file(vqss_model* model, const char* wav_path,
                                        const char* out_dir);

typedef struct vqss_separation vqss_separation;

VQSS_API vqss_status vqss_separate_buffer(vqss_model* model, const double* mix, int64_t length,
                                          double sample_rate, vqss_separation** out);
VQSS_API int32_t vqss_separation_count(const vqss_separation* sep);
VQSS_API int64_t vqss_separation_length(const vqss_separation* sep);
VQSS_API vqss_status vqss_separation_source(const vqss_separation* sep, int32_t index,
                                            double* out, int64_t capacity);
VQSS_API double vqss_separation_energy_dbfs(const vqss_separation* sep, int32_t index);
VQSS_API void vqss_separation_close(vqss_separation* sep);

/* ---- evaluation ---- */

/* Runs the paired L1 protocol and the cluster histogram over a labelled stem
 * directory and writes table.csv, clusters.csv, clusters.png, grid.png and
 * summary.json under out_dir. */
VQSS_API vqss_status vqss_evaluate(vqss_model* model, const char* test_dir, const char* out_dir,
                                   int32_t k_eval, uint64_t seed);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* VQSS_H */
