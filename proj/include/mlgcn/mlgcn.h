#ifndef MLGCN_MLGCN_H
#define MLGCN_MLGCN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MLGCN_API __declspec(dllexport)
#elif defined(__GNUC__)
#define MLGCN_API __attribute__((visibility("default")))
#else
#define MLGCN_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mlgcn_status {
  MLGCN_OK = 0,
  MLGCN_ERR_INVALID_ARGUMENT = 1,
  MLGCN_ERR_CONFIG = 2,
  MLGCN_ERR_DATA = 3,
  MLGCN_ERR_CHECKPOINT = 4,
  MLGCN_ERR_IO = 5,
  MLGCN_ERR_BUFFER_TOO_SMALL = 6,
  MLGCN_ERR_INTERNAL = 7
} mlgcn_status;

typedef enum mlgcn_task { MLGCN_TASK_CLASSIFICATION = 0, MLGCN_TASK_SEGMENTATION = 1 } mlgcn_task;

typedef struct mlgcn_config mlgcn_config;
typedef struct mlgcn_dataset mlgcn_dataset;
typedef struct mlgcn_cloud mlgcn_cloud;
typedef struct mlgcn_model mlgcn_model;
typedef struct mlgcn_eval_report mlgcn_eval_report;
typedef struct mlgcn_cost_report mlgcn_cost_report;

/* Message of the last failed call on this thread ("" when none). */
MLGCN_API const char* mlgcn_last_error(void);
MLGCN_API const char* mlgcn_status_name(mlgcn_status status);

/*
 * Text getters copy at most cap-1 bytes plus a NUL into buf and store the
 * full length in *len. A short buffer yields MLGCN_ERR_BUFFER_TOO_SMALL;
 * buf may be NULL with cap 0 to query the length.
 */

/* ---- config ------------------------------------------------------------ */

typedef struct mlgcn_config_info {
  size_t n_points;
  size_t num_gnn_blocks;
  size_t trunk_channels;
  size_t num_classes;
  size_t num_parts; /* 0 without a segmentation head */
  size_t parameter_count;
} mlgcn_config_info;

MLGCN_API mlgcn_status mlgcn_config_preset(const char* name, mlgcn_config** out);
MLGCN_API mlgcn_status mlgcn_config_load(const char* path, mlgcn_config** out);
MLGCN_API mlgcn_status mlgcn_config_save(const mlgcn_config* cfg, const char* path);
MLGCN_API mlgcn_status mlgcn_config_clone(const mlgcn_config* cfg, mlgcn_config** out);
MLGCN_API void mlgcn_config_free(mlgcn_config* cfg);

MLGCN_API mlgcn_status mlgcn_config_set_points(mlgcn_config* cfg, size_t n_points);
MLGCN_API mlgcn_status mlgcn_config_set_num_classes(mlgcn_config* cfg, size_t num_classes);
/* Replaces the K set; every block takes the first block's channel layout. */
MLGCN_API mlgcn_status mlgcn_config_set_k(mlgcn_config* cfg, const size_t* ks, size_t count);
/* Adds the default segmentation head (2C -> C -> C/2 -> parts); 0 removes it. */
MLGCN_API mlgcn_status mlgcn_config_set_segmentation(mlgcn_config* cfg, size_t num_parts);
MLGCN_API mlgcn_status mlgcn_config_info_get(const mlgcn_config* cfg, mlgcn_config_info* info);

/* ---- data -------------------------------------------------------------- */

/* Meshes are sampled to n_points; `normalize` centers and scales each cloud
 * to the unit sphere. */
MLGCN_API mlgcn_status mlgcn_dataset_load(const char* manifest, size_t n_points, uint64_t seed, int normalize,
                                          mlgcn_dataset** out);
MLGCN_API size_t mlgcn_dataset_size(const mlgcn_dataset* ds);
MLGCN_API int mlgcn_dataset_label(const mlgcn_dataset* ds, size_t index);
/* Copy of one sample's points. */
MLGCN_API mlgcn_status mlgcn_dataset_cloud(const mlgcn_dataset* ds, size_t index, mlgcn_cloud** out);
MLGCN_API void mlgcn_dataset_free(mlgcn_dataset* ds);

MLGCN_API mlgcn_status mlgcn_cloud_load(const char* path, size_t n_points, uint64_t seed, int normalize,
                                        mlgcn_cloud** out);
/* xyz holds count * 3 coordinates. */
MLGCN_API mlgcn_status mlgcn_cloud_from_points(const double* xyz, size_t count, mlgcn_cloud** out);
MLGCN_API size_t mlgcn_cloud_size(const mlgcn_cloud* cloud);
MLGCN_API void mlgcn_cloud_free(mlgcn_cloud* cloud);

/* ---- model ------------------------------------------------------------- */

MLGCN_API mlgcn_status mlgcn_model_create(const mlgcn_config* cfg, uint64_t seed, mlgcn_model** out);
/* Weights must match cfg exactly, otherwise MLGCN_ERR_CHECKPOINT. */
MLGCN_API mlgcn_status mlgcn_model_load(const mlgcn_config* cfg, const char* checkpoint, mlgcn_model** out);
/* Writes the checkpoint and a `<path>.json` sidecar. */
MLGCN_API mlgcn_status mlgcn_model_save(const mlgcn_model* model, const char* checkpoint);
MLGCN_API mlgcn_status mlgcn_model_config(const mlgcn_model* model, mlgcn_config** out);
MLGCN_API void mlgcn_model_free(mlgcn_model* model);

/* logits needs num_classes slots; predicted may be NULL. */
MLGCN_API mlgcn_status mlgcn_classify(const mlgcn_model* model, const mlgcn_cloud* cloud, float* logits, size_t cap,
                                      size_t* predicted);
/* One part id per point (argmax over all parts). */
MLGCN_API mlgcn_status mlgcn_segment(const mlgcn_model* model, const mlgcn_cloud* cloud, int* parts, size_t cap);
/* Global feature vector fed to the classifier (trunk_channels values). */
MLGCN_API mlgcn_status mlgcn_features(const mlgcn_model* model, const mlgcn_cloud* cloud, float* out, size_t cap);

/* ---- training / evaluation -------------------------------------------- */

typedef struct mlgcn_train_options {
  size_t batch_size;
  size_t epochs;
  double lr;
  double decay;
  size_t decay_start_epoch;
  uint64_t seed;
  mlgcn_task task;
  size_t threads;
  int augment;
} mlgcn_train_options;

typedef struct mlgcn_epoch_log {
  size_t epoch;
  double lr;
  double train_loss;
  double train_acc;
  int has_validation;
  double val_acc;
  double val_class_miou; /* segmentation only */
  double val_instance_miou;
} mlgcn_epoch_log;

/* Called after every epoch with the model being trained. */
typedef void (*mlgcn_epoch_callback)(const mlgcn_epoch_log* log, const mlgcn_model* model, void* user);

MLGCN_API void mlgcn_train_options_default(mlgcn_train_options* opts);
/* validation may be NULL. */
MLGCN_API mlgcn_status mlgcn_train(mlgcn_model* model, const mlgcn_dataset* train, const mlgcn_dataset* validation,
                                   const mlgcn_train_options* opts, mlgcn_epoch_callback callback, void* user);

typedef struct mlgcn_eval_summary {
  mlgcn_task task;
  size_t samples;
  double overall_accuracy;
  double mean_class_accuracy;
  double class_miou;
  double instance_miou;
} mlgcn_eval_summary;

MLGCN_API mlgcn_status mlgcn_evaluate(const mlgcn_model* model, const mlgcn_dataset* ds, mlgcn_task task,
                                      size_t threads, mlgcn_eval_report** out);
MLGCN_API mlgcn_status mlgcn_eval_summary_get(const mlgcn_eval_report* report, mlgcn_eval_summary* out);
MLGCN_API mlgcn_status mlgcn_eval_text(const mlgcn_eval_report* report, int csv, char* buf, size_t cap,
                                       size_t* len);
MLGCN_API void mlgcn_eval_free(mlgcn_eval_report* report);

/* ---- cost analysis ----------------------------------------------------- */

typedef struct mlgcn_cost_summary {
  uint64_t total_flops;
  uint64_t total_comparisons;
  uint64_t total_parameters;
  uint64_t model_size_bytes;
  int has_recompute;
  uint64_t recompute_total_flops;
} mlgcn_cost_summary;

/* Pure config arithmetic; no weights involved. */
MLGCN_API mlgcn_status mlgcn_analyze(const mlgcn_config* cfg, int compare_recompute, mlgcn_cost_report** out);
MLGCN_API mlgcn_status mlgcn_cost_summary_get(const mlgcn_cost_report* report, mlgcn_cost_summary* out);
MLGCN_API mlgcn_status mlgcn_cost_text(const mlgcn_cost_report* report, int csv, char* buf, size_t cap,
                                       size_t* len);
MLGCN_API void mlgcn_cost_free(mlgcn_cost_report* report);

#ifdef __cplusplus
}
#endif

#endif
