/*
 * s3nas: NPU-aware neural architecture search engine.
 *
 * C interface to the search pipeline: supernet construction, latency
 * modeling, single-path differentiable search, compound scaling and SE
 * post-processing. Objects are opaque handles created and destroyed through
 * this API; every function returns a status code and leaves a human-readable
 * message in s3n_last_error() on failure.
 */
#ifndef S3NAS_S3NAS_H
#define S3NAS_S3NAS_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum s3n_status {
  S3N_OK = 0,
  S3N_ERR_CONFIG = 2,     /* bad config/flags, unreadable or malformed file */
  S3N_ERR_INFEASIBLE = 3, /* latency constraint cannot be met */
  S3N_ERR_INVARIANT = 4,  /* domain invariant violated */
  S3N_ERR_NUMERIC = 5     /* numeric divergence (non-finite values) */
} s3n_status;

typedef struct s3n_config s3n_config;
typedef struct s3n_supernet s3n_supernet;
typedef struct s3n_arch s3n_arch;
typedef struct s3n_latency_table s3n_latency_table;

/* Message for the last failing call on this thread; never NULL. */
const char* s3n_last_error(void);
/* Frees strings returned through char** out-parameters. */
void s3n_string_free(char* s);

/* ----- configuration ---------------------------------------------------- */
s3n_status s3n_config_default(s3n_config** out);
s3n_status s3n_config_load(const char* path, s3n_config** out);
/* Dotted-path override, e.g. ("search.lambda1", "0"). */
s3n_status s3n_config_set(s3n_config* cfg, const char* key, const char* value);
s3n_status s3n_config_dump(const s3n_config* cfg, char** json_out);
void s3n_config_free(s3n_config* cfg);

/* ----- supernets --------------------------------------------------------- */
s3n_status s3n_supernet_default(s3n_supernet** out);
s3n_status s3n_supernet_from_config(const s3n_config* cfg, s3n_supernet** out);
s3n_status s3n_supernet_load(const char* path, s3n_supernet** out);
s3n_status s3n_supernet_save(const s3n_supernet* sn, const char* path);
/* Per-stage (width, cumulative depth, ratio) rows plus the monotonicity
 * flag, as JSON. */
s3n_status s3n_supernet_linear_depth_report(const s3n_supernet* sn, char** json_out);
void s3n_supernet_free(s3n_supernet* sn);

/* ----- architectures ----------------------------------------------------- */
s3n_status s3n_arch_load(const char* path, s3n_arch** out);
s3n_status s3n_arch_save(const s3n_arch* arch, const char* path);
/* Parses and validates an architecture or supernet file; when `supernet` is
 * non-NULL, architecture decisions are additionally checked against its
 * candidate sets. */
s3n_status s3n_validate_file(const char* path, const s3n_supernet* supernet, char** json_out);
void s3n_arch_free(s3n_arch* arch);

/* ----- latency ------------------------------------------------------------ */
/* Provider and cost-model parameters come from the config's latency
 * section. */
s3n_status s3n_latency_table_build(const s3n_supernet* sn, const s3n_config* cfg,
                                   s3n_latency_table** out);
s3n_status s3n_latency_table_load(const char* path, s3n_latency_table** out);
s3n_status s3n_latency_table_save(const s3n_latency_table* table, const char* path);
void s3n_latency_table_free(s3n_latency_table* table);

s3n_status s3n_latency_estimate(const s3n_arch* arch, const s3n_latency_table* table,
                                double* ms_out);
/* Direct cost-model evaluation (works for scaled geometries not covered by a
 * table). */
s3n_status s3n_latency_estimate_model(const s3n_arch* arch, const s3n_config* cfg,
                                      double* ms_out);
/* MAPE (percent) of the analytical model against the cycle-approximate
 * simulator over `samples` random architectures. */
s3n_status s3n_latency_validate_model(const s3n_supernet* sn, const s3n_config* cfg, int samples,
                                      double* mape_out);

/* ----- search and baselines ------------------------------------------------
 * Outputs under out_dir: architecture.json, metrics.csv, summary.json and
 * supernet.ckpt for the search; best_architecture.json, summary.json and
 * best.ckpt for baselines. */
s3n_status s3n_search_run(const s3n_supernet* sn, const s3n_config* cfg,
                          const s3n_latency_table* table, const char* out_dir);
s3n_status s3n_baseline_run(const s3n_supernet* sn, const s3n_config* cfg,
                            const s3n_latency_table* table, int full_training,
                            const char* out_dir);

/* ----- scaling and post-processing ---------------------------------------- */
s3n_status s3n_scale(const s3n_arch* arch, const s3n_config* cfg, s3n_arch** out,
                     char** json_report_out);
s3n_status s3n_add_se_hswish(const s3n_arch* arch, s3n_arch** out);
/* Measures the excitation dispersion metric per SE block over synthetic
 * validation images and writes the CSV report. The checkpoint must hold
 * trained weights for this architecture. */
s3n_status s3n_se_dispersion(const s3n_arch* arch, const char* checkpoint_path,
                             const s3n_config* cfg, const char* report_csv_path);
s3n_status s3n_remove_se(const s3n_arch* arch, const char* report_csv_path, double keep_fraction,
                         s3n_arch** out);

/* ----- training and export -------------------------------------------------- */
/* Trains the architecture on the synthetic task; writes a checkpoint when
 * checkpoint_out is non-NULL and reports the validation accuracy. */
s3n_status s3n_train_architecture(const s3n_arch* arch, const s3n_config* cfg, double epochs,
                                  const char* checkpoint_out, double* val_accuracy_out);
/* Extracts the decided architecture from a trained supernet checkpoint. */
s3n_status s3n_export_architecture(const s3n_supernet* sn, const char* checkpoint_path,
                                   unsigned long long seed, const char* arch_out_path);
/* Aggregates search/baseline summary JSON files into one accuracy-vs-latency
 * CSV. */
s3n_status s3n_report(const char* const* summary_paths, size_t count, const char* csv_out_path);

#ifdef __cplusplus
}
#endif

#endif /* S3NAS_S3NAS_H */
