#ifndef LINFVAR_H
#define LINFVAR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum LinfvarStatus {
  LinfvarStatus_Ok = 0,
  /**
   * Null pointer, bad UTF-8, or an argument outside its domain.
   */
  LinfvarStatus_InvalidArgument = 1,
  /**
   * Invalid grid geometry or subdomain.
   */
  LinfvarStatus_Domain = 2,
  /**
   * Evaluation hit a declared singular set.
   */
  LinfvarStatus_Singularity = 3,
  /**
   * I/O or file-format failure.
   */
  LinfvarStatus_Io = 4,
  /**
   * The requested check ran and failed.
   */
  LinfvarStatus_CheckFailed = 5,
  LinfvarStatus_Internal = 6,
} LinfvarStatus;

/**
 * Opaque handle to a sampled map.
 */
typedef struct LinfvarMap {
  uint8_t _opaque[0];
} LinfvarMap;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *linfvar_last_error(void);

/**
 * Samples a registered reference map on a regular grid.
 *
 * `bounds` holds `dim` (lo, hi) pairs, `resolution` holds `dim` node
 * counts. On success `*out` owns the new map; free it with
 * [`linfvar_map_free`].
 *
 * # Safety
 * `id` must be a valid NUL-terminated string; `bounds` must point to
 * `2 * dim` doubles, `resolution` to `dim` usizes, `out` to a writable
 * pointer slot.
 */
enum LinfvarStatus linfvar_map_from_corpus(const char *id,
                                           const double *bounds,
                                           const uintptr_t *resolution,
                                           uintptr_t dim,
                                           bool acknowledge_singular,
                                           struct LinfvarMap **out);

/**
 * Reads a map from the JSON-header + CSV format.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a writable slot.
 */
enum LinfvarStatus linfvar_map_read_csv(const char *path, struct LinfvarMap **out);

/**
 * Writes a map in the JSON-header + CSV format.
 *
 * # Safety
 * `map` must be a live handle from this library; `path` a valid string.
 */
enum LinfvarStatus linfvar_map_write_csv(const struct LinfvarMap *map, const char *path);

/**
 * Releases a map handle. Null is a no-op.
 *
 * # Safety
 * `map` must be null or a handle previously returned by this library and
 * not yet freed.
 */
void linfvar_map_free(struct LinfvarMap *map);

/**
 * Number of grid nodes of a map, or 0 for a null handle.
 *
 * # Safety
 * `map` must be null or a live handle.
 */
uintptr_t linfvar_map_node_count(const struct LinfvarMap *map);

/**
 * Mask-excluded maximum of the pointwise operator residual over the grid.
 * Pass `rank_tol <= 0` or `blowup_threshold <= 0` for the defaults.
 *
 * # Safety
 * `map` must be a live handle, `operator_tag` a valid string, `out_max` a
 * writable double.
 */
enum LinfvarStatus linfvar_residual_max(const struct LinfvarMap *map,
                                        const char *operator_tag,
                                        double p,
                                        double rank_tol,
                                        double blowup_threshold,
                                        double *out_max);

/**
 * Supremal energy `max |Du|^2` over a box subdomain given by center and
 * half-widths (each `dim` doubles).
 *
 * # Safety
 * `map` must be a live handle; `center` and `half_widths` must point to
 * `dim` doubles; `out` must be writable.
 */
enum LinfvarStatus linfvar_sup_energy(const struct LinfvarMap *map,
                                      const double *center,
                                      const double *half_widths,
                                      double *out);

/**
 * Runs a full JSON run configuration, writing reports under `out_dir`.
 * `*out_exit_code` follows the CLI contract: 0 all checks passed,
 * 1 at least one check failed, 2 config/usage error. The call itself
 * returns Ok when the run executed (even with failing checks) and
 * CheckFailed/InvalidArgument accordingly otherwise.
 *
 * # Safety
 * `config_json` and `out_dir` must be valid strings; `out_exit_code` must
 * be writable.
 */
enum LinfvarStatus linfvar_run_json(const char *config_json,
                                    const char *out_dir,
                                    int32_t *out_exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LINFVAR_H */
