/* SPDX-License-Identifier: Apache-2.0
 * Copyright (c) 2026 the weightgen authors
 *
 * C API for the weightgen toolkit: model-zoo storage, weight tokenization,
 * sequence-model training, zero-shot weight sampling, merging baselines and
 * evaluation, exposed behind opaque handles and status codes.
 *
 * Conventions:
 *   - every function returns wg_status; WG_OK is success
 *   - on failure, wg_last_error() returns a thread-local message
 *   - handles are released with their matching _close function
 *   - strings returned through char** are owned by the caller and released
 *     with wg_string_free
 */

#ifndef WEIGHTGEN_H
#define WEIGHTGEN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum wg_status {
  WG_OK = 0,
  WG_ERR_VALIDATION = 1,
  WG_ERR_PARSE = 2,
  WG_ERR_INTEGRITY = 3,
  WG_ERR_STORAGE = 4,
  WG_ERR_CONFIG = 5,
  WG_ERR_INCOMPATIBLE = 6,
  WG_ERR_RUNTIME = 7,
  WG_ERR_INVALID_ARGUMENT = 8
} wg_status;

const char* wg_version(void);
/* Message of the most recent failure on this thread ("" if none). */
const char* wg_last_error(void);
void wg_string_free(char* s);

/* ---- zoo access -------------------------------------------------------- */

typedef struct wg_zoo wg_zoo;
typedef struct wg_checkpoint wg_checkpoint;

wg_status wg_zoo_open(const char* dir, wg_zoo** out);
void wg_zoo_close(wg_zoo* zoo);
int wg_zoo_size(const wg_zoo* zoo);
wg_status wg_zoo_id(const wg_zoo* zoo, char** out);
wg_status wg_zoo_dataset_tag(const wg_zoo* zoo, char** out);
wg_status wg_zoo_checkpoint_id(const wg_zoo* zoo, int index, char** out);
/* "train", "val" or "test" */
wg_status wg_zoo_checkpoint_split(const wg_zoo* zoo, int index, char** out);
wg_status wg_zoo_checkpoint_epoch(const wg_zoo* zoo, int index, int* out);

/* Lazy per-checkpoint loading; checkpoints are independent of the zoo
 * handle once loaded. */
wg_status wg_zoo_load_checkpoint(const wg_zoo* zoo, int index, wg_checkpoint** out);
void wg_checkpoint_close(wg_checkpoint* ckpt);
int wg_checkpoint_num_layers(const wg_checkpoint* ckpt);
wg_status wg_checkpoint_layer_name(const wg_checkpoint* ckpt, int layer, char** out);
wg_status wg_checkpoint_layer_shape(const wg_checkpoint* ckpt, int layer, int* rows, int* cols);
/* Copies row-major float32 data; capacity is in elements. */
wg_status wg_checkpoint_layer_data(const wg_checkpoint* ckpt, int layer, float* dst,
                                   size_t capacity);

/* Union of several zoo directories written as a new zoo directory; split
 * assignments and per-checkpoint dataset tags are preserved. */
wg_status wg_zoo_merge(const char* const* dirs, int n_dirs, const char* out_dir);

/* Tokenization layout of the zoo's architecture at the given token size,
 * as a JSON document (per-layer offsets, counts). */
wg_status wg_layout_json(const char* zoo_dir, int token_size, char** out_json);

/* ---- pipeline stages ---------------------------------------------------- */

/* Trains a population of classifiers described by the JSON spec file and
 * writes a zoo directory. */
wg_status wg_zoogen_run(const char* spec_path, const char* data_root, const char* out_dir,
                        int64_t seed, int workers);

/* Trains the sequence encoder/decoder over one or more zoos. */
wg_status wg_train_run(const char* config_path, const char* const* zoo_dirs, int n_zoos,
                       const char* out_dir, int64_t seed);

/* Zero-shot weight generation: anchors from anchor_zoo, candidates decoded
 * from subsampled latents, batch-norm conditioning and validation selection
 * on task_tag (empty: the anchor zoo's dataset tag), survivors written as a
 * zoo. spec_path may be NULL for the protocol defaults. */
wg_status wg_sample_run(const char* sane_dir, const char* anchor_zoo_dir, const char* task_tag,
                        const char* data_root, const char* spec_path, const char* out_dir,
                        int64_t seed);

/* Weight-averaging baseline curve over soup sizes ks (comma separated),
 * optionally re-basin aligned, written as a JSON report. */
wg_status wg_soup_run(const char* zoo_dir, const char* ks_csv, int align, const char* task_tag,
                      const char* data_root, int repeats, const char* report_path, int64_t seed);

/* Aligns target to reference (both checkpoint ids within the zoo) and
 * writes the aligned model plus the permutations to out_dir. */
wg_status wg_rebasin_run(const char* zoo_dir, const char* reference_id, const char* target_id,
                         const char* out_dir);

/* Evaluates every model of a zoo on the ID/NOOD/FOOD suite and writes the
 * structured report. */
wg_status wg_eval_run(const char* models_dir, const char* suite_path, const char* data_root,
                      const char* report_path, int64_t seed);

/* Renders a structured eval report; format is "text" or "json". */
wg_status wg_report_render(const char* report_json_path, const char* format, char** out);

/* Runs a declarative pipeline config. data_root may be NULL, seed < 0 means
 * "use the config"; out parameters may be NULL. */
wg_status wg_pipeline_run(const char* config_path, const char* data_root, int64_t seed,
                          int* stages_run, int* stages_skipped);

#ifdef __cplusplus
}
#endif

#endif /* WEIGHTGEN_H */
