/*
 * C interface to the mani library: MI-maximisation domain adaptation for
 * binary nuclei segmentation.
 *
 * Every object is an opaque handle created by a mani_*_create/load function
 * and released with the matching mani_*_destroy. Functions that can fail
 * return a mani_status; on failure mani_last_error() describes the problem
 * (thread-local, valid until the next failing call on the same thread).
 * Strings returned from handles stay valid until that handle is destroyed or
 * the same getter is called again.
 */
#ifndef MANI_H
#define MANI_H

#include <stddef.h>
#include <stdint.h>

#if defined(MANI_BUILDING_LIBRARY)
#define MANI_API __attribute__((visibility("default")))
#else
#define MANI_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
    MANI_OK = 0,
    MANI_ERR_INVALID_ARGUMENT = 1, /* null handle or bad enum value */
    MANI_ERR_CONFIG = 2,           /* unknown key, malformed value, inconsistent ranges */
    MANI_ERR_DATA = 3,             /* dataset contract violation or unreadable file */
    MANI_ERR_SHAPE = 4,            /* tensor shape mismatch */
    MANI_ERR_NUMERICAL = 5,        /* NaN/Inf loss during training */
    MANI_ERR_MISMATCH = 6,         /* checkpoint does not match the expected configuration */
    MANI_ERR_RUNTIME = 7           /* anything else */
} mani_status;

typedef enum { MANI_ROLE_SOURCE_LABELED = 0, MANI_ROLE_TARGET_UNLABELED = 1 } mani_role;
typedef enum { MANI_SPLIT_TRAIN = 0, MANI_SPLIT_VAL = 1, MANI_SPLIT_TEST = 2 } mani_split;
typedef enum { MANI_METRIC_DICE = 0, MANI_METRIC_AJI, MANI_METRIC_DQ, MANI_METRIC_SQ, MANI_METRIC_PQ } mani_metric;
typedef enum { MANI_GRID_WEIGHTS = 0, MANI_GRID_POOLING = 1, MANI_GRID_BOTH = 2 } mani_grid;

typedef struct mani_config mani_config;
typedef struct mani_dataset mani_dataset;
typedef struct mani_model mani_model;
typedef struct mani_report mani_report;
typedef struct mani_run mani_run;
typedef struct mani_ablation mani_ablation;

MANI_API const char* mani_version(void);
MANI_API const char* mani_last_error(void);

/* ---- configuration --------------------------------------------------- */

/* Built-in defaults. */
MANI_API mani_status mani_config_create(mani_config** out);
MANI_API void mani_config_destroy(mani_config* config);
/* "default", "paper-semantic" or "desk". */
MANI_API mani_status mani_config_apply_preset(mani_config* config, const char* preset);
/* Flat key=value text file. */
MANI_API mani_status mani_config_load_file(mani_config* config, const char* path);
MANI_API mani_status mani_config_set(mani_config* config, const char* key, const char* value);
/* Value of one key, owned by the handle. NULL on unknown key. */
MANI_API const char* mani_config_get(mani_config* config, const char* key);
/* Every key, one "key = value" line each. */
MANI_API const char* mani_config_dump(mani_config* config);
/* Checks all invariants of the resolved configuration. */
MANI_API mani_status mani_config_validate(const mani_config* config);

/* ---- data ------------------------------------------------------------ */

/* Writes out_dir/{source,target}/{images,masks,instances,manifest.txt} for the
 * train/val/test splits. Refuses a non-empty out_dir unless force != 0, in
 * which case the existing source/ and target/ trees are replaced. */
MANI_API mani_status mani_synth_write(const mani_config* config, const char* out_dir, int n_train, int n_val,
                                      int n_test, int force);
MANI_API mani_status mani_dataset_load(const char* root, mani_role role, mani_split split, mani_dataset** out);
MANI_API void mani_dataset_destroy(mani_dataset* dataset);
MANI_API size_t mani_dataset_size(const mani_dataset* dataset);
/* Number of samples carrying a mask. */
MANI_API size_t mani_dataset_labeled_count(const mani_dataset* dataset);

/* ---- training -------------------------------------------------------- */

/* Trains with the configuration. target_val, source_val, target_test and
 * source_test may be NULL. out_dir may be NULL (nothing written). */
MANI_API mani_status mani_train(const mani_config* config, const mani_dataset* source, const mani_dataset* target,
                                const mani_dataset* target_val, const mani_dataset* source_val,
                                const mani_dataset* target_test, const mani_dataset* source_test, const char* out_dir,
                                mani_run** out);
MANI_API void mani_run_destroy(mani_run* run);
MANI_API const char* mani_run_summary_json(mani_run* run);
MANI_API const char* mani_run_history_csv(mani_run* run);
MANI_API size_t mani_run_iterations(const mani_run* run);
/* Selected model of the run (best by target-val dice, else final). The caller owns the copy. */
MANI_API mani_status mani_run_model(const mani_run* run, mani_model** out);

/* ---- models ---------------------------------------------------------- */

/* When expected is non-NULL, its model.base_width must equal the checkpoint's
 * feature dimension, otherwise MANI_ERR_MISMATCH naming both. */
MANI_API mani_status mani_model_load(const char* path, const mani_config* expected, mani_model** out);
MANI_API mani_status mani_model_save(const mani_model* model, const char* path);
MANI_API void mani_model_destroy(mani_model* model);
MANI_API int mani_model_feature_dim(const mani_model* model);

/* ---- evaluation ------------------------------------------------------ */

MANI_API mani_status mani_evaluate(mani_model* model, const mani_dataset* dataset, mani_report** out);
/* Scores prediction masks (loaded as a dataset) against ground truth by sample id. */
MANI_API mani_status mani_evaluate_predictions(const mani_dataset* predictions, const mani_dataset* ground_truth,
                                               mani_report** out);
MANI_API void mani_report_destroy(mani_report* report);
MANI_API const char* mani_report_json(mani_report* report);
MANI_API const char* mani_report_table(mani_report* report);
/* Aggregate value; returns MANI_ERR_DATA when the metric is unavailable. */
MANI_API mani_status mani_report_aggregate(const mani_report* report, mani_metric metric, double* value);
MANI_API size_t mani_report_images(const mani_report* report);

/* ---- ablation -------------------------------------------------------- */

/* Cells of the chosen grid, each trained for `seeds` consecutive seeds starting
 * at the configured seed. target_test may be NULL (target_val is then scored). */
MANI_API mani_status mani_ablate(const mani_config* base, mani_grid grid, int seeds, int jobs,
                                 const mani_dataset* source, const mani_dataset* target,
                                 const mani_dataset* target_val, const mani_dataset* target_test, mani_ablation** out);
MANI_API void mani_ablation_destroy(mani_ablation* ablation);
MANI_API const char* mani_ablation_csv(mani_ablation* ablation);
MANI_API const char* mani_ablation_table(mani_ablation* ablation);
MANI_API size_t mani_ablation_rows(const mani_ablation* ablation);
MANI_API size_t mani_ablation_failed(const mani_ablation* ablation);
/* Mean target dice of one row; MANI_ERR_DATA for a failed row. */
MANI_API mani_status mani_ablation_row(const mani_ablation* ablation, size_t index, const char** label, double* mean_dice);

#ifdef __cplusplus
}
#endif

#endif /* MANI_H */
