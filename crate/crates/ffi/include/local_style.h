#ifndef LOCAL_STYLE_H
#define LOCAL_STYLE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every `ls_*` call.
 */
typedef enum LsStatus {
  LS_STATUS_OK = 0,
  LS_STATUS_NULL_POINTER = 1,
  LS_STATUS_INVALID_INPUT = 2,
  LS_STATUS_IO = 3,
  LS_STATUS_PARSE = 4,
  LS_STATUS_GROUNDING = 5,
  LS_STATUS_OPTIMIZATION = 6,
  LS_STATUS_CONFIG = 7,
  LS_STATUS_BACKEND = 8,
  LS_STATUS_PANIC = 9,
} LsStatus;

/**
 * Opaque run configuration.
 */
typedef struct LsConfig LsConfig;

/**
 * Opaque RGB image.
 */
typedef struct LsImage LsImage;

/**
 * Opaque binary mask.
 */
typedef struct LsMask LsMask;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next `ls_*` call on the same thread.
 */
const char *ls_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ls_version(void);

/**
 * Copies `3 * height * width` planar floats into a new image.
 *
 * # Safety
 * `data` points to `3 * height * width` readable floats; `out` is writable.
 */
enum LsStatus ls_image_new(size_t height, size_t width, const float *data, struct LsImage **out);

/**
 * Loads and resizes an image to `resolution x resolution`.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum LsStatus ls_image_load(const char *path, size_t resolution, struct LsImage **out);

/**
 * # Safety
 * `img` is a live image handle; `path` is a NUL-terminated string.
 */
enum LsStatus ls_image_save(const struct LsImage *img, const char *path);

/**
 * # Safety
 * `img` is null or a live image handle.
 */
size_t ls_image_height(const struct LsImage *img);

/**
 * # Safety
 * `img` is null or a live image handle.
 */
size_t ls_image_width(const struct LsImage *img);

/**
 * Copies the pixels into `out`, which must hold exactly `3 * height * width` floats.
 *
 * # Safety
 * `img` is a live image handle; `out` points to `len` writable floats.
 */
enum LsStatus ls_image_copy_data(const struct LsImage *img, float *out, size_t len);

/**
 * # Safety
 * `img` is null or a handle not yet freed.
 */
void ls_image_free(struct LsImage *img);

/**
 * Mask from `height * width` bytes, nonzero meaning inside.
 *
 * # Safety
 * `data` points to `height * width` readable bytes; `out` is writable.
 */
enum LsStatus ls_mask_new(size_t height, size_t width, const uint8_t *data, struct LsMask **out);

/**
 * Loads a mask image resized to `height x width`.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum LsStatus ls_mask_load(const char *path, size_t height, size_t width, struct LsMask **out);

/**
 * Number of foreground pixels.
 *
 * # Safety
 * `mask` is null or a live mask handle.
 */
size_t ls_mask_count(const struct LsMask *mask);

/**
 * # Safety
 * `mask` is null or a handle not yet freed.
 */
void ls_mask_free(struct LsMask *mask);

/**
 * Default configuration with endpoint defaults from the environment.
 *
 * # Safety
 * `out` is writable.
 */
enum LsStatus ls_config_new(struct LsConfig **out);

/**
 * Sets one configuration key, using the same names as the config file.
 *
 * # Safety
 * `cfg` is a live handle; `key` and `value` are NUL-terminated strings.
 */
enum LsStatus ls_config_set(struct LsConfig *cfg, const char *key, const char *value);

/**
 * Applies a `key = value` file on top of the current values.
 *
 * # Safety
 * `cfg` is a live handle; `path` is a NUL-terminated string.
 */
enum LsStatus ls_config_load_file(struct LsConfig *cfg, const char *path);

/**
 * # Safety
 * `cfg` is null or a handle not yet freed.
 */
void ls_config_free(struct LsConfig *cfg);

/**
 * Stylizes the region named by `prompt`.
 *
 * With a `mask`, grounding's box and segmentation stages are skipped. The
 * VLM comes from `fixture_jsonl` when non-null, else from the configured
 * endpoint. `content` must match the configured resolution. Loss outputs
 * may be null.
 *
 * # Safety
 * Handles are live or null where allowed; strings are NUL-terminated;
 * `out` is writable.
 */
enum LsStatus ls_stylize(const struct LsImage *content,
                         const char *prompt,
                         const struct LsMask *mask,
                         const struct LsConfig *cfg,
                         const char *fixture_jsonl,
                         struct LsImage **out,
                         double *initial_loss,
                         double *final_loss);

/**
 * Masked-crop score of `image` against `style` with the offline encoders.
 *
 * # Safety
 * Handles are live; `style` is NUL-terminated; `out` is writable.
 */
enum LsStatus ls_masked_clip_score(const struct LsImage *image,
                                   const struct LsMask *mask,
                                   const char *style,
                                   const struct LsConfig *cfg,
                                   double *out);

/**
 * Parses a VLM reply into a normalized `x0, y0, x1, y1` box and a style
 * phrase. Free the phrase with [`ls_string_free`].
 *
 * # Safety
 * `text` is NUL-terminated; `out_box` holds 4 writable doubles; `out_style` is writable.
 */
enum LsStatus ls_parse_vlm_response(const char *text, double *out_box, char **out_style);

/**
 * # Safety
 * `s` is null or a string returned by this library and not yet freed.
 */
void ls_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOCAL_STYLE_H */
