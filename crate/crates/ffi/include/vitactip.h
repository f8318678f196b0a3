#ifndef VITACTIP_H
#define VITACTIP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values 1 to 3 match the CLI exit codes.
 */
typedef enum VtStatus {
  VT_STATUS_OK = 0,
  /**
   * Invalid configuration or arguments.
   */
  VT_STATUS_VALIDATION = 1,
  /**
   * Solver failure or infeasible contact.
   */
  VT_STATUS_RUNTIME = 2,
  VT_STATUS_IO = 3,
  VT_STATUS_NULL_POINTER = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  VT_STATUS_PANIC = 5,
} VtStatus;

typedef enum VtSensorMode {
  VT_SENSOR_MODE_TAC_TIP = 0,
  VT_SENSOR_MODE_VI_TAC = 1,
  VT_SENSOR_MODE_VI_TAC_TIP = 2,
} VtSensorMode;

typedef enum VtStimulusKind {
  /**
   * `size_mm` is the line spacing; ridges and grooves are 1 mm.
   */
  VT_STIMULUS_KIND_GRATING = 0,
  /**
   * `size_mm` is the cube side.
   */
  VT_STIMULUS_KIND_SQUARE_EDGE = 1,
  /**
   * `size_mm` is the radius.
   */
  VT_STIMULUS_KIND_SPHERE = 2,
  /**
   * `size_mm` is ignored.
   */
  VT_STIMULUS_KIND_FLAT_PLATE = 3,
} VtStimulusKind;

typedef enum VtTask {
  VT_TASK_GRATING = 0,
  VT_TASK_POSE = 1,
  VT_TASK_FORCE = 2,
} VtTask;

/**
 * An RGB8 image, row-major, 3 bytes per pixel.
 */
typedef struct VtFrame VtFrame;

/**
 * Sensor geometry and configuration, shared by all modes.
 */
typedef struct VtSensor VtSensor;

typedef struct VtStimulus {
  enum VtStimulusKind kind;
  double size_mm;
} VtStimulus;

typedef struct VtPose {
  double x_mm;
  double y_mm;
  double z_mm;
  double theta_deg;
  double shear_x_mm;
  double shear_y_mm;
} VtPose;

typedef struct VtWrench {
  double fx;
  double fy;
  double fz;
  double px;
  double py;
  double pz;
  bool in_contact;
} VtWrench;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next call into this library from the same thread.
 */
const char *vt_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *vt_version(void);

/**
 * Creates a sensor from a TOML/JSON config file, or the defaults when
 * `config_path` is NULL.
 *
 * # Safety
 * `config_path` must be NULL or a NUL-terminated string; `out` must be a
 * valid pointer to write the handle to.
 */
enum VtStatus vt_sensor_new(const char *config_path, struct VtSensor **out);

/**
 * # Safety
 * `sensor` must be NULL or a handle from [`vt_sensor_new`] not yet freed.
 */
void vt_sensor_free(struct VtSensor *sensor);

/**
 * Number of pins on the sensor, 0 for a NULL handle.
 *
 * # Safety
 * `sensor` must be NULL or a live handle.
 */
uint32_t vt_sensor_pin_count(const struct VtSensor *sensor);

/**
 * Solves the contact of `stimulus` at `pose` and renders the frame seen by
 * `mode` under `ambient_light`. Either output may be NULL when not wanted.
 *
 * # Safety
 * `sensor`, `stimulus` and `pose` must be valid pointers; `wrench_out` and
 * `frame_out` must be NULL or valid for writes.
 */
enum VtStatus vt_sensor_render(const struct VtSensor *sensor,
                               enum VtSensorMode mode,
                               const struct VtStimulus *stimulus,
                               const struct VtPose *pose,
                               double ambient_light,
                               struct VtWrench *wrench_out,
                               struct VtFrame **frame_out);

/**
 * # Safety
 * `frame` must be NULL or a handle from this library not yet freed.
 */
void vt_frame_free(struct VtFrame *frame);

/**
 * # Safety
 * `frame` must be NULL or a live handle.
 */
uint32_t vt_frame_width(const struct VtFrame *frame);

/**
 * # Safety
 * `frame` must be NULL or a live handle.
 */
uint32_t vt_frame_height(const struct VtFrame *frame);

/**
 * Pointer to `width * height * 3` bytes owned by the frame, or NULL.
 *
 * # Safety
 * `frame` must be NULL or a live handle; the data lives as long as the frame.
 */
const uint8_t *vt_frame_data(const struct VtFrame *frame);

/**
 * # Safety
 * `frame` must be a live handle and `path` a NUL-terminated string.
 */
enum VtStatus vt_frame_save_png(const struct VtFrame *frame, const char *path);

/**
 * SSIM on luminance (8x8 windows) and PSNR over all channels.
 *
 * # Safety
 * `a` and `b` must be live handles; `ssim_out` and `psnr_out` valid for writes.
 */
enum VtStatus vt_frame_similarity(const struct VtFrame *a,
                                  const struct VtFrame *b,
                                  double *ssim_out,
                                  double *psnr_out);

/**
 * Generates a dataset of `samples` samples (per class for gratings) in all
 * three modes into `out_dir`. `config_path` may be NULL for the defaults.
 *
 * # Safety
 * `out_dir` must be a NUL-terminated string; `config_path` NULL or one.
 */
enum VtStatus vt_generate_dataset(const char *config_path,
                                  enum VtTask task,
                                  uint32_t samples,
                                  uint64_t seed,
                                  const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VITACTIP_H */
