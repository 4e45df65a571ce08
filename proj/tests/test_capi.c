/* Exercises the shared library through its C header only. */
#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "kfbench/kfbench.h"

static int failures = 0;

#define EXPECT(cond)                                                 \
  do {                                                               \
    if (!(cond)) {                                                   \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                    \
    }                                                                \
  } while (0)

int main(void) {
  kfb_context* ctx = kfb_context_new();
  EXPECT(ctx != NULL);
  EXPECT(strcmp(kfb_last_error(ctx), "") == 0);
  EXPECT(strcmp(kfb_status_name(KFB_ERR_NUMERIC), "numeric error") == 0);

  const char* sim =
      "{\"model\":\"linear\",\"seq_len\":30,\"num_seq\":4,\"seed\":5,"
      "\"F\":[[0.9]],\"H\":[[1]],\"Q\":[[1]],\"R\":[[1]]}";
  kfb_dataset* ds = NULL;
  EXPECT(kfb_simulate(ctx, sim, &ds) == KFB_OK);
  EXPECT(kfb_dataset_size(ds) == 4);
  EXPECT(kfb_dataset_length(ds, 3) == 30);
  EXPECT(kfb_dataset_length(ds, 4) == 0);

  const char* path = "kfbench_capi_test.ndjson";
  EXPECT(kfb_dataset_save(ctx, ds, path) == KFB_OK);
  kfb_dataset* loaded = NULL;
  EXPECT(kfb_dataset_load(ctx, path, &loaded) == KFB_OK);
  EXPECT(kfb_dataset_size(loaded) == 4);
  remove(path);

  const char* kf =
      "{\"method\":\"kf\",\"benchmark\":{\"model\":\"linear\","
      "\"F\":[[0.9]],\"H\":[[1]],\"Q\":[[1]],\"R\":[[1]]}}";
  const char* noise =
      "{\"method\":\"noise\",\"benchmark\":{\"model\":\"linear\","
      "\"F\":[[0.9]],\"H\":[[1]],\"Q\":[[1]],\"R\":[[1]]}}";
  kfb_report* reports[2] = {NULL, NULL};
  EXPECT(kfb_evaluate(ctx, kf, loaded, NULL, &reports[0]) == KFB_OK);
  EXPECT(kfb_evaluate(ctx, noise, loaded, NULL, &reports[1]) == KFB_OK);
  EXPECT(kfb_report_sequences(reports[0]) == 4);
  EXPECT(kfb_report_mean_db(reports[0]) < kfb_report_mean_db(reports[1]));
  EXPECT(isfinite(kfb_report_std_db(reports[0])));

  char* table = NULL;
  EXPECT(kfb_render_reports(ctx, (const kfb_report* const*)reports, 2, "csv", &table) == KFB_OK);
  EXPECT(table != NULL && strncmp(table, "method,mean_db,std_db,sequences\nkf,", 35) == 0);
  kfb_string_free(table);

  const char* rpath = "kfbench_capi_report.json";
  EXPECT(kfb_report_save(ctx, reports[0], rpath) == KFB_OK);
  kfb_report* back = NULL;
  EXPECT(kfb_report_load(ctx, rpath, &back) == KFB_OK);
  EXPECT(kfb_report_mean_db(back) == kfb_report_mean_db(reports[0]));
  remove(rpath);
  kfb_report_free(back);

  /* Error paths map to status codes and leave a message. */
  kfb_report* none = NULL;
  EXPECT(kfb_evaluate(ctx, "{\"method\":\"magic\"}", loaded, NULL, &none) == KFB_ERR_CONFIG);
  EXPECT(none == NULL);
  EXPECT(strstr(kfb_last_error(ctx), "magic") != NULL);
  EXPECT(kfb_evaluate(ctx, "not json", loaded, NULL, &none) == KFB_ERR_CONFIG);
  EXPECT(kfb_dataset_load(ctx, "/nonexistent/data.ndjson", &ds) == KFB_ERR_IO);
  EXPECT(kfb_simulate(ctx, NULL, &ds) == KFB_ERR_ARGUMENT);
  EXPECT(kfb_evaluate(ctx, "{\"method\":\"knet\"}", loaded, NULL, &none) == KFB_ERR_CONFIG);
  EXPECT(kfb_render_reports(ctx, NULL, 0, "csv", &table) == KFB_ERR_ARGUMENT);
  EXPECT(kfb_render_reports(ctx, (const kfb_report* const*)reports, 2, "html", &table) ==
         KFB_ERR_CONFIG);

  kfb_report_free(reports[0]);
  kfb_report_free(reports[1]);
  kfb_dataset_free(loaded);
  kfb_dataset_free(ds);
  kfb_context_free(ctx);
  if (failures) {
    fprintf(stderr, "%d failures\n", failures);
    return 1;
  }
  puts("capi: all checks passed");
  return 0;
}
