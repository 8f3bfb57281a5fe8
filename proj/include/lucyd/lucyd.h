#ifndef LUCYD_H
#define LUCYD_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define LUCYD_API __declspec(dllexport)
#else
#define LUCYD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes; also the CLI exit codes. */
typedef enum lucyd_status {
  LUCYD_OK = 0,
  LUCYD_ERR_USAGE = 1,
  LUCYD_ERR_DATA = 2,
  LUCYD_ERR_NUMERICAL = 3
} lucyd_status;

typedef struct lucyd_volume lucyd_volume;
typedef struct lucyd_model lucyd_model;

/* Message of the last failed call on this thread; empty after a success. */
LUCYD_API const char* lucyd_last_error(void);

/* ---- volumes: CDHW float32 ---- */

/* `data` may be NULL for a zero volume. */
LUCYD_API lucyd_status lucyd_volume_create(const int shape[4], const float* data,
                                           lucyd_volume** out);
LUCYD_API void lucyd_volume_free(lucyd_volume* v);
LUCYD_API lucyd_status lucyd_volume_shape(const lucyd_volume* v, int shape[4]);
/* Borrowed pointer, valid until the volume is freed. */
LUCYD_API lucyd_status lucyd_volume_data(const lucyd_volume* v, const float** data,
                                         size_t* count);
LUCYD_API lucyd_status lucyd_volume_load(const char* path, lucyd_volume** out);
LUCYD_API lucyd_status lucyd_volume_save(const lucyd_volume* v, const char* path);

/* ---- simulation ---- */

/* kind: dots, spheres, shells or mixed. count <= 0 selects the default
   density; it is ignored for mixed. */
LUCYD_API lucyd_status lucyd_phantom(const char* kind, int d, int h, int w,
                                     int count, uint64_t seed,
                                     lucyd_volume** out);

/* sigma_b_axial < 0 means isotropic blur. sigma_n is on the 0-255 scale. */
typedef struct lucyd_degradation {
  double sigma_b;
  double sigma_b_axial;
  double sigma_n;
  uint64_t seed;
} lucyd_degradation;

LUCYD_API lucyd_status lucyd_degrade(const lucyd_volume* x,
                                     const lucyd_degradation* spec,
                                     lucyd_volume** out);

/* regime: train-mixed, test-grid, regime-A or regime-B. Writes volumes and manifest.json
   into `dir`. */
LUCYD_API lucyd_status lucyd_dataset_build(const char* regime, int n_volumes,
                                           int d, int h, int w, uint64_t seed,
                                           const char* dir);

/* Append to a manifest, creating it if missing. Volume paths are stored
   relative to the manifest directory; a truth count <= 0 is recorded as the
   default count for the volume's shape. */
LUCYD_API lucyd_status lucyd_manifest_add_truth(const char* manifest,
                                                const char* volume, const char* kind,
                                                int count, uint64_t seed);
LUCYD_API lucyd_status lucyd_manifest_add_pair(const char* manifest,
                                               const char* truth,
                                               const char* degraded,
                                               const lucyd_degradation* spec,
                                               const char* split);

/* ---- classic deconvolution with a Gaussian PSF ---- */

LUCYD_API lucyd_status lucyd_wiener(const lucyd_volume* y, double psf_sigma,
                                    double psf_sigma_axial, double nsr,
                                    lucyd_volume** out);
LUCYD_API lucyd_status lucyd_richardson_lucy(const lucyd_volume* y,
                                             double psf_sigma,
                                             double psf_sigma_axial,
                                             int iterations, lucyd_volume** out);

/* ---- model ---- */

LUCYD_API lucyd_status lucyd_model_init(uint64_t seed, lucyd_model** out);
/* Parameters of an LCKP checkpoint. */
LUCYD_API lucyd_status lucyd_model_load(const char* checkpoint, lucyd_model** out);
LUCYD_API void lucyd_model_free(lucyd_model* m);
LUCYD_API size_t lucyd_model_param_count(const lucyd_model* m);
/* Count reported for the reference model. */
LUCYD_API size_t lucyd_reference_param_count(void);

/* Raw network pass on a normalized volume: restored x', estimate y + M,
   update u and mask M. Any output pointer may be NULL. */
LUCYD_API lucyd_status lucyd_model_forward(const lucyd_model* m,
                                           const lucyd_volume* y,
                                           lucyd_volume** restored,
                                           lucyd_volume** estimate,
                                           lucyd_volume** update,
                                           lucyd_volume** mask);

typedef struct lucyd_tile {
  int d;
  int h;
  int w;
  int overlap;
} lucyd_tile;

LUCYD_API void lucyd_tile_default(lucyd_tile* tile);

/* Tiled restoration of a 0-255 volume; the result is on the same scale.
   `tile` may be NULL for the default. */
LUCYD_API lucyd_status lucyd_model_restore(const lucyd_model* m,
                                           const lucyd_volume* y,
                                           const lucyd_tile* tile,
                                           lucyd_volume** out);

/* ---- training ---- */

typedef struct lucyd_train_options {
  double lr;
  int epochs;
  int batch;
  int patches_per_epoch;
  int patch[3];
  uint64_t seed;
  double beta1;
  double beta2;
  double adam_eps;
  /* Rewrite the output checkpoint every this many epochs; 0 only at the end. */
  int checkpoint_every;
  /* Validation pairs scored per epoch; 0 scores all. */
  int val_limit;
} lucyd_train_options;

LUCYD_API void lucyd_train_options_default(lucyd_train_options* options);

/* Receives one JSON line per epoch, without a trailing newline. */
typedef void (*lucyd_log_fn)(const char* line, void* user);

/* `resume` may be NULL. A resumed run keeps the checkpoint's model shape and
   continues its epoch numbering up to options->epochs. */
LUCYD_API lucyd_status lucyd_train(const char* manifest,
                                   const lucyd_train_options* options,
                                   const char* resume, const char* out_checkpoint,
                                   lucyd_log_fn log, void* user);

/* ---- evaluation ---- */

typedef struct lucyd_eval_options {
  int rl_iterations;
  double nsr;
  lucyd_tile tile;
  /* One row per (method, cell) instead of one row per cell. */
  int long_format;
  /* Manifest split to evaluate; NULL means "test". */
  const char* split;
  /* Directory for restored volumes, or NULL. */
  const char* outputs_dir;
} lucyd_eval_options;

LUCYD_API void lucyd_eval_options_default(lucyd_eval_options* options);

/* `checkpoint` may be NULL to score only the baselines. */
LUCYD_API lucyd_status lucyd_eval(const char* manifest, const char* checkpoint,
                                  const lucyd_eval_options* options,
                                  const char* report);

/* SSIM and PSNR of two 0-255 volumes, computed after division by 255. */
LUCYD_API lucyd_status lucyd_score(const lucyd_volume* restored,
                                   const lucyd_volume* truth, double* ssim,
                                   double* psnr);

/* ---- export and checks ---- */

/* axis: lateral or axial. Writes a 16-bit binary PGM. */
LUCYD_API lucyd_status lucyd_project(const lucyd_volume* v, const char* axis,
                                     const char* out_pgm);

typedef void (*lucyd_gradcheck_fn)(const char* name, const char* worst_tensor,
                                   double rel_error, double tolerance,
                                   int passed, void* user);

/* mode: ops or full. `fault_op` names an op whose backward is sign-flipped,
   or is NULL. Returns LUCYD_ERR_NUMERICAL if any case fails. */
LUCYD_API lucyd_status lucyd_gradcheck(const char* mode, uint64_t seed,
                                       const char* fault_op,
                                       lucyd_gradcheck_fn report, void* user);

#ifdef __cplusplus
}
#endif

#endif
