/* C interface to the kfbench estimation library. All functions that can fail
 * return a kfb_status and leave a message retrievable with kfb_last_error().
 * Handles are opaque and owned by the caller once returned. */
#ifndef KFBENCH_KFBENCH_H
#define KFBENCH_KFBENCH_H

#include <stddef.h>

#if defined(KFB_BUILDING_LIBRARY)
#define KFB_API __attribute__((visibility("default")))
#else
#define KFB_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum kfb_status {
  KFB_OK = 0,
  KFB_ERR_INTERNAL = 1,
  KFB_ERR_CONFIG = 2,
  KFB_ERR_NUMERIC = 3,
  KFB_ERR_IO = 4,
  KFB_ERR_SCHEMA = 5,
  KFB_ERR_ARGUMENT = 6
} kfb_status;

typedef struct kfb_context kfb_context;
typedef struct kfb_dataset kfb_dataset;
typedef struct kfb_report kfb_report;

KFB_API kfb_context* kfb_context_new(void);
KFB_API void kfb_context_free(kfb_context* ctx);
/* Message of the last failed call on ctx; "" if none. Valid until the next call. */
KFB_API const char* kfb_last_error(const kfb_context* ctx);
KFB_API const char* kfb_status_name(kfb_status status);

/* Simulates a dataset. config_json keys: model ("lorenz"|"linear"), seq_len,
 * num_seq, seed, split ("train"|"val"|"test", default "test") plus any
 * benchmark field accepted by the experiment config (dt_fine, decimation,
 * r2, q2, F, H, Q, R, ...). */
KFB_API kfb_status kfb_simulate(kfb_context* ctx, const char* config_json, kfb_dataset** out);

KFB_API kfb_status kfb_dataset_load(kfb_context* ctx, const char* path, kfb_dataset** out);
KFB_API kfb_status kfb_dataset_save(kfb_context* ctx, const kfb_dataset* ds, const char* path);
KFB_API size_t kfb_dataset_size(const kfb_dataset* ds);
/* Length of trajectory i, or 0 when out of range. */
KFB_API size_t kfb_dataset_length(const kfb_dataset* ds, size_t i);
KFB_API void kfb_dataset_free(kfb_dataset* ds);

/* Trains the method named in config_json and writes a checkpoint. validation may be NULL. */
KFB_API kfb_status kfb_train(kfb_context* ctx, const char* config_json, const kfb_dataset* train,
                             const kfb_dataset* validation, const char* checkpoint_path);

/* Evaluates on a labelled dataset. checkpoint_path may be NULL for untrained methods. */
KFB_API kfb_status kfb_evaluate(kfb_context* ctx, const char* config_json,
                                const kfb_dataset* test, const char* checkpoint_path,
                                kfb_report** out);

/* Full pipeline: data, training if needed, evaluation. */
KFB_API kfb_status kfb_run_experiment(kfb_context* ctx, const char* config_json,
                                      kfb_report** out);

KFB_API kfb_status kfb_report_load(kfb_context* ctx, const char* path, kfb_report** out);
KFB_API kfb_status kfb_report_save(kfb_context* ctx, const kfb_report* report, const char* path);
KFB_API double kfb_report_mean_db(const kfb_report* report);
KFB_API double kfb_report_std_db(const kfb_report* report);
KFB_API size_t kfb_report_sequences(const kfb_report* report);
KFB_API void kfb_report_free(kfb_report* report);

/* Renders reports as "csv" or "markdown" into a string released with kfb_string_free. */
KFB_API kfb_status kfb_render_reports(kfb_context* ctx, const kfb_report* const* reports,
                                      size_t count, const char* format, char** out);
KFB_API void kfb_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif
