/* C API for the SAC-ViT two-stage adaptive inference engine.
 *
 * All functions return sacvit_status; on failure sacvit_last_error() holds a
 * one-line diagnostic for the calling thread. Strings returned through char**
 * are heap-allocated and must be released with sacvit_string_free().
 */
#ifndef SACVIT_H
#define SACVIT_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sacvit_status {
    SACVIT_OK = 0,
    SACVIT_ERR_INVALID_ARGUMENT = 1,
    SACVIT_ERR_IO = 2,
    SACVIT_ERR_FORMAT = 3,
    SACVIT_ERR_SHAPE = 4,
    SACVIT_ERR_TRUNCATED = 5,
    SACVIT_ERR_TOLERANCE = 6,
    SACVIT_ERR_INTERNAL = 7
} sacvit_status;

typedef struct sacvit_model sacvit_model;
typedef struct sacvit_dataset sacvit_dataset;

const char* sacvit_status_name(sacvit_status status);

/* Thread-local message describing the most recent failure. */
const char* sacvit_last_error(void);

void sacvit_string_free(char* s);

/* ---- model lifecycle ---------------------------------------------------- */

/* config_json: model configuration; NULL selects the built-in default.
 * Parameters are freshly initialized from the config seed. */
sacvit_status sacvit_model_create(const char* config_json, sacvit_model** out);

sacvit_status sacvit_model_load(const char* checkpoint_path, sacvit_model** out);
sacvit_status sacvit_model_save(const sacvit_model* model, const char* checkpoint_path);
sacvit_status sacvit_model_config_json(const sacvit_model* model, char** json_out);
void sacvit_model_free(sacvit_model* model);

/* ---- inference ----------------------------------------------------------- */

typedef struct sacvit_prediction {
    int32_t class_index;
    double confidence;
    uint64_t macs;        /* multiply-accumulates spent on the taken path */
    int32_t exited_early; /* 1: early-exit stage answered; 0: both stages ran */
} sacvit_prediction;

/* data: channel-major float32, channels*height*width values. */
sacvit_status sacvit_infer(const sacvit_model* model, const float* data, int32_t channels,
                           int32_t height, int32_t width, double eta, sacvit_prediction* out);

/* Reads a raw tensor file (magic SACT0001) and classifies it. */
sacvit_status sacvit_infer_file(const sacvit_model* model, const char* tensor_path, double eta,
                                sacvit_prediction* out);

/* ---- datasets ------------------------------------------------------------ */

/* Opens a directory containing raw tensors plus labels.tsv. */
sacvit_status sacvit_dataset_open(const char* dir, sacvit_dataset** out);
int64_t sacvit_dataset_size(const sacvit_dataset* ds);
void sacvit_dataset_free(sacvit_dataset* ds);

/* Writes a synthetic labeled dataset (Gaussian blob per class). */
sacvit_status sacvit_dataset_synth(const char* dir, int32_t classes, int32_t per_class,
                                   int32_t height, int32_t width, uint64_t seed);

/* Runs the pipeline over every sample in dataset order; out_array must hold
 * sacvit_dataset_size() entries. Fan-out is capped by SACVIT_THREADS. */
sacvit_status sacvit_batch_infer(const sacvit_model* model, const sacvit_dataset* ds,
                                 double eta, sacvit_prediction* out_array);

/* ---- reports ------------------------------------------------------------- */

/* CSV with header eta,exit_fraction,ee_acc,overall_acc,expected_macs,throughput.
 * measure_throughput == 0 writes 0 in the throughput column, keeping the
 * output byte-deterministic. */
sacvit_status sacvit_sweep_csv(const sacvit_model* model, const sacvit_dataset* ds,
                               const double* etas, int32_t n_etas, int32_t measure_throughput,
                               char** csv_out);

/* Analytic cost report as JSON; config_json NULL selects the default config. */
sacvit_status sacvit_cost_report_json(const char* config_json, double exit_fraction,
                                      char** json_out);

/* Central finite differences vs. backprop over every parameter, all loss
 * modes and both schedule phases, in 64-bit. config_json NULL selects the
 * built-in tiny config. Returns SACVIT_ERR_TOLERANCE when max_rel_err is not
 * below 1e-4. */
sacvit_status sacvit_gradcheck(const char* config_json, double* max_rel_err);

/* Two-phase training on a labeled dataset. train_config_json may be NULL for
 * defaults; log_path (optional) receives one JSON line per epoch;
 * summary_json_out (optional) receives the final accuracies. */
sacvit_status sacvit_train(sacvit_model* model, const sacvit_dataset* ds,
                           const char* train_config_json, const char* log_path,
                           char** summary_json_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* SACVIT_H */
