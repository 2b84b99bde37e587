#ifndef FILAMENT_H
#define FILAMENT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FilamentStatus {
  FILAMENT_STATUS_OK = 0,
  FILAMENT_STATUS_INVALID_ARGUMENT = 1,
  FILAMENT_STATUS_NUMERICAL = 2,
  FILAMENT_STATUS_NON_FINITE = 3,
  FILAMENT_STATUS_OUT_OF_COVERAGE = 4,
  FILAMENT_STATUS_IO = 5,
  FILAMENT_STATUS_JSON = 6,
  FILAMENT_STATUS_RUN = 7,
  FILAMENT_STATUS_NULL_POINTER = 8,
  FILAMENT_STATUS_UTF8 = 9,
  FILAMENT_STATUS_BUFFER_TOO_SMALL = 10,
  FILAMENT_STATUS_PANIC = 11,
} FilamentStatus;

/*
 Parsed run configuration.
 */
typedef struct FilamentConfig FilamentConfig;

/*
 Self-similar profile with its extracted corner data.
 */
typedef struct FilamentProfile FilamentProfile;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the calling thread's last error message into `buf`.

 Returns the message length including the NUL; nothing is written when `len` is smaller.

 # Safety
 `buf` must be null or valid for `len` bytes.
 */
size_t filament_last_error(char *buf, size_t len);

/*
 Integrates the profile for curvature `a` on `[-s_max, s_max]`.

 Non-positive `s_max` or `step` select the defaults.

 # Safety
 `out` must be valid for writing one pointer.
 */
enum FilamentStatus filament_profile_new(double a,
                                         double s_max,
                                         double step,
                                         struct FilamentProfile **out);

/*
 # Safety
 `h` must be null or a handle from [`filament_profile_new`] not yet freed.
 */
void filament_profile_free(struct FilamentProfile *h);

/*
 Writes the tangent and the position at `s` as two xyz triples.

 # Safety
 `h` must be a live profile handle; `tangent` and `position` must each hold 3 doubles.
 */
enum FilamentStatus filament_profile_eval(const struct FilamentProfile *h,
                                          double s,
                                          double *tangent,
                                          double *position);

/*
 Corner angle between the two asymptotic tangents, in radians.

 # Safety
 `h` must be a live profile handle; `theta` must be writable.
 */
enum FilamentStatus filament_profile_corner_angle(const struct FilamentProfile *h, double *theta);

/*
 Parses a JSON run configuration.

 # Safety
 `json` must be a NUL-terminated string; `out` must be valid for writing one pointer.
 */
enum FilamentStatus filament_config_from_json(const char *json, struct FilamentConfig **out);

/*
 Default configuration.

 # Safety
 `out` must be valid for writing one pointer.
 */
enum FilamentStatus filament_config_default(struct FilamentConfig **out);

/*
 # Safety
 `h` must be null or a handle from this library not yet freed.
 */
void filament_config_free(struct FilamentConfig *h);

/*
 Serializes the configuration; see [`filament_last_error`] for the buffer convention.

 # Safety
 `h` must be a live config handle; `buf` null or valid for `len` bytes; `needed` null or writable.
 */
enum FilamentStatus filament_config_to_json(const struct FilamentConfig *h,
                                            char *buf,
                                            size_t len,
                                            size_t *needed);

/*
 Runs the configured stages into `run_dir`; `checks_passed` receives 1, 0, or -1 when no analysis ran.

 # Safety
 `h` must be a live config handle; `run_dir` a NUL-terminated string; `checks_passed` null or writable.
 */
enum FilamentStatus filament_run_pipeline(const struct FilamentConfig *h,
                                          const char *run_dir,
                                          int32_t *checks_passed);

/*
 Exports a dataset of the run in `run_dir` and writes the produced path into `buf`.

 # Safety
 String arguments must be NUL-terminated; `buf` null or valid for `len` bytes; `needed` null or writable.
 */
enum FilamentStatus filament_export(const char *run_dir,
                                    const char *what,
                                    const char *format,
                                    char *buf,
                                    size_t len,
                                    size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FILAMENT_H */
