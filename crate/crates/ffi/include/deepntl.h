#ifndef DEEPNTL_H
#define DEEPNTL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by all functions.
typedef enum DntlStatus {
  DNTL_STATUS_OK = 0,
  DNTL_STATUS_NULL_ARGUMENT = 1,
  DNTL_STATUS_INVALID_ARGUMENT = 2,
  DNTL_STATUS_IO = 3,
  DNTL_STATUS_FORMAT = 4,
  DNTL_STATUS_DIMENSION = 5,
  DNTL_STATUS_NUMERIC = 6,
  DNTL_STATUS_INTERNAL = 7,
  DNTL_STATUS_PANIC = 8,
} DntlStatus;

// A trained network loaded from a checkpoint.
typedef struct DntlModel DntlModel;

// A georeferenced single-band raster.
typedef struct DntlRaster DntlRaster;

// Agreement between a ground-truth and a predicted raster.
typedef struct DntlMetrics {
  double pearson_r;
  // Infinite when the rasters are identical.
  double psnr;
  double ssim;
  // Pixels valid in both rasters.
  uint64_t n;
} DntlMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL after a
// successful call. Valid until the next call into this library.
const char *dntl_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *dntl_version(void);

// Builds a raster from `rows * cols` row-major values. Pixels equal to
// `nodata` are treated as missing.
//
// # Safety
// `data` must point to `rows * cols` floats; `out` must be writable.
enum DntlStatus dntl_raster_new(size_t rows,
                                size_t cols,
                                const float *data,
                                float nodata,
                                struct DntlRaster **out);

// Reads a raster file. Files ending in `.asc` are parsed as ASCII grids,
// everything else as the native binary format.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum DntlStatus dntl_raster_load(const char *path, struct DntlRaster **out);

// Writes a raster in the native binary format.
//
// # Safety
// `r` must be a live handle; `path` a NUL-terminated string.
enum DntlStatus dntl_raster_save(const struct DntlRaster *r, const char *path);

// # Safety
// `r` must be a live handle; `rows` and `cols` must be writable.
enum DntlStatus dntl_raster_dims(const struct DntlRaster *r, size_t *rows, size_t *cols);

// Row-major pixel values, owned by the handle. NULL if `r` is NULL.
//
// # Safety
// `r` must be NULL or a live handle.
const float *dntl_raster_data(const struct DntlRaster *r);

// Missing-value sentinel of the raster; NaN if `r` is NULL.
//
// # Safety
// `r` must be NULL or a live handle.
float dntl_raster_nodata(const struct DntlRaster *r);

// # Safety
// `r` must be NULL or a handle not freed before.
void dntl_raster_free(struct DntlRaster *r);

// Sets values below `floor` to 0 and caps values above `ceil`.
//
// # Safety
// `r` must be a live handle; `out` must be writable.
enum DntlStatus dntl_clean_viirs(const struct DntlRaster *r,
                                 float floor,
                                 float ceil,
                                 struct DntlRaster **out);

// Doubles the resolution by bilinear interpolation.
//
// # Safety
// `r` must be a live handle; `out` must be writable.
enum DntlStatus dntl_bilinear_upsample2x(const struct DntlRaster *r, struct DntlRaster **out);

// Pearson r, PSNR and global SSIM of `sr` against `gt` with peak value
// `max_val`.
//
// # Safety
// `gt` and `sr` must be live handles; `out` must be writable.
enum DntlStatus dntl_evaluate(const struct DntlRaster *gt,
                              const struct DntlRaster *sr,
                              double max_val,
                              struct DntlMetrics *out);

// Loads a trained network from a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum DntlStatus dntl_model_load(const char *path, struct DntlModel **out);

// DMSP tile size the network was trained on.
//
// # Safety
// `m` must be a live handle; `h` and `w` must be writable.
enum DntlStatus dntl_model_tile_dims(const struct DntlModel *m, size_t *h, size_t *w);

// Predicts the VIIRS-like raster of the target year from the reference
// and target DMSP rasters and the reference VIIRS raster (twice the
// DMSP size). The output is clamped to `[0, ceil]`; with `overlap`
// nonzero, half-tile-shifted windows are averaged.
//
// # Safety
// All handles must be live; `out` must be writable.
enum DntlStatus dntl_model_reconstruct(const struct DntlModel *m,
                                       const struct DntlRaster *dmsp_ref,
                                       const struct DntlRaster *dmsp_tgt,
                                       const struct DntlRaster *viirs_ref,
                                       float ceil,
                                       int32_t overlap,
                                       struct DntlRaster **out);

// # Safety
// `m` must be NULL or a handle not freed before.
void dntl_model_free(struct DntlModel *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEEPNTL_H */
