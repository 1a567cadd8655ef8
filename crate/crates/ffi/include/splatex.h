#ifndef SPLATEX_H
#define SPLATEX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SplatexStatus {
  SPLATEX_STATUS_OK = 0,
  SPLATEX_STATUS_NULL_POINTER = 1,
  SPLATEX_STATUS_INVALID_ARGUMENT = 2,
  SPLATEX_STATUS_CONFIG = 3,
  SPLATEX_STATUS_IO = 4,
  SPLATEX_STATUS_FORMAT = 5,
  SPLATEX_STATUS_LAYOUT_MISMATCH = 6,
  SPLATEX_STATUS_NUMERIC = 7,
  SPLATEX_STATUS_PANIC = 8,
} SplatexStatus;

/*
 Linear avatar model handle.
 */
typedef struct SplatexGem SplatexGem;

/*
 Gaussian texture handle.
 */
typedef struct SplatexTexture SplatexTexture;

/*
 Pinhole camera; the pose maps world to camera coordinates, quaternion
 `(w, x, y, z)`.
 */
typedef struct SplatexCamera {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
  double rotation[4];
  double translation[3];
} SplatexCamera;

typedef struct SplatexMetrics {
  double psnr;
  double ssim;
  double l1;
  double l2;
} SplatexMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *splatex_version(void);

/*
 Message of the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *splatex_last_error(void);

/*
 Runs the command-line interface with `argc` arguments (excluding the
 program name) and returns its exit code.

 # Safety
 `argv` must point to `argc` valid NUL-terminated strings.
 */
int splatex_run_cli(int argc, const char *const *argv);

/*
 Loads a texture written by the library (`gaussians.bin` and friends).

 # Safety
 `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SplatexStatus splatex_texture_load(const char *path, struct SplatexTexture **out);

/*
 # Safety
 `texture` must come from this library and not be used afterwards.
 */
void splatex_texture_free(struct SplatexTexture *texture);

/*
 # Safety
 `texture` must be a live handle; `path` a NUL-terminated string.
 */
enum SplatexStatus splatex_texture_save(const struct SplatexTexture *texture, const char *path);

/*
 Writes the valid texels as a binary splat PLY.

 # Safety
 `texture` must be a live handle; `path` a NUL-terminated string.
 */
enum SplatexStatus splatex_texture_save_ply(const struct SplatexTexture *texture, const char *path);

/*
 Grid size and valid-texel count.

 # Safety
 `texture` must be a live handle; output pointers may be null.
 */
enum SplatexStatus splatex_texture_info(const struct SplatexTexture *texture,
                                        uint32_t *height,
                                        uint32_t *width,
                                        uint32_t *valid_count);

/*
 The 14 channels of texel `(i, j)`: colour, opacity, position, scale,
 rotation `(w, x, y, z)`.

 # Safety
 `texture` must be a live handle, `channels` must hold 14 doubles and
 `valid` may be null.
 */
enum SplatexStatus splatex_texture_texel(const struct SplatexTexture *texture,
                                         uint32_t i,
                                         uint32_t j,
                                         double *channels,
                                         bool *valid);

/*
 Blend `a → b` by `gamma ∈ [0, 1]` into a new texture.

 # Safety
 `a` and `b` must be live handles and `out` writable.
 */
enum SplatexStatus splatex_texture_interpolate(const struct SplatexTexture *a,
                                               const struct SplatexTexture *b,
                                               double gamma,
                                               struct SplatexTexture **out);

/*
 Adds the `target_expr − target_neutral` residual to `source_neutral`.

 # Safety
 All inputs must be live handles and `out` writable.
 */
enum SplatexStatus splatex_texture_transfer(const struct SplatexTexture *source_neutral,
                                            const struct SplatexTexture *target_neutral,
                                            const struct SplatexTexture *target_expr,
                                            struct SplatexTexture **out);

/*
 Renders `texture` over a black background into `rgb`, which must hold
 `3 · width · height` doubles in row-major interleaved order.

 # Safety
 `texture` must be a live handle, `camera` readable, and `rgb` writable
 for the full image.
 */
enum SplatexStatus splatex_render(const struct SplatexTexture *texture,
                                  const struct SplatexCamera *camera,
                                  double *rgb);

/*
 PSNR (dB, capped at 99), SSIM, L1 and L2 between two interleaved RGB
 images of `width × height` pixels with values in `[0, 1]`.

 # Safety
 `a` and `b` must each hold `3 · width · height` doubles; `out` writable.
 */
enum SplatexStatus splatex_image_metrics(const double *a,
                                         const double *b,
                                         uint32_t width,
                                         uint32_t height,
                                         struct SplatexMetrics *out);

/*
 # Safety
 `path` must be a NUL-terminated string and `out` writable.
 */
enum SplatexStatus splatex_gem_load(const char *path, struct SplatexGem **out);

/*
 # Safety
 `gem` must come from this library and not be used afterwards.
 */
void splatex_gem_free(struct SplatexGem *gem);

/*
 Number of components, or 0 for a null handle.

 # Safety
 `gem` must be null or a live handle.
 */
uint32_t splatex_gem_components(const struct SplatexGem *gem);

/*
 Texture for `k` coefficients (`k` must equal the component count).

 # Safety
 `gem` must be a live handle, `coefficients` must hold `k` doubles and
 `out` writable.
 */
enum SplatexStatus splatex_gem_reconstruct(const struct SplatexGem *gem,
                                           const double *coefficients,
                                           uint32_t k,
                                           struct SplatexTexture **out);

/*
 Least-squares coefficients of `texture`, written to `coefficients`
 (`k` doubles, equal to the component count).

 # Safety
 `gem` and `texture` must be live handles; `coefficients` writable for `k`
 doubles.
 */
enum SplatexStatus splatex_gem_fit(const struct SplatexGem *gem,
                                   const struct SplatexTexture *texture,
                                   double *coefficients,
                                   uint32_t k);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPLATEX_H */
