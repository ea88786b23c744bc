/* C interface for the chainfusion pose-fusion engine.
 *
 * Opaque handles, integer status codes, plain double buffers. Link this
 * against the `chainfusion_ffi` cdylib or staticlib. Handles are not
 * thread-safe; guard a handle with a mutex to share it across threads.
 *
 * Conventions: navigation frame is North-East-Down with gravity along +z,
 * quaternions are scalar-first [w x y z], SI units throughout.
 */

#ifndef CHAINFUSION_H
#define CHAINFUSION_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Opaque handle types. */
typedef struct CfChain CfChain;
typedef struct CfFilter CfFilter;

typedef enum CfStatus {
  CF_OK = 0,
  CF_NULL_ARGUMENT = 1,
  CF_INVALID_ARGUMENT = 2,
  CF_INVALID_UTF8 = 3,
  CF_IO_ERROR = 4,
  CF_BAD_CONFIG = 5,
  CF_DIMENSION_MISMATCH = 6,
  CF_FILTER_DIVERGED = 7,
  CF_INTERNAL_PANIC = 8
} CfStatus;

/* Library version / static status description; never free these strings. */
const char *cf_version(void);
const char *cf_status_message(CfStatus status);

/* Chain construction. `cf_chain_load` reads the key-value chain format
 * (`link.<id> = label`, `joint.<n> = i,j`, `camera_link`, `gravity`). */
CfStatus cf_chain_arm3(CfChain **out_chain);
CfStatus cf_chain_load(const char *path, CfChain **out_chain);
void cf_chain_free(CfChain *chain);
uint32_t cf_chain_num_links(const CfChain *chain);
uint32_t cf_chain_state_dim(const CfChain *chain);
uint32_t cf_chain_error_dim(const CfChain *chain);

/* Filter lifecycle. `kind`: 0 = error-state EKF, 1 = square-root UKF.
 * The estimate starts zeroed with identity attitudes; push known initial
 * link states before the first step. */
CfStatus cf_filter_new(const CfChain *chain, int kind, double t0,
                       CfFilter **out_filter);
void cf_filter_free(CfFilter *filter);
CfStatus cf_filter_set_link_state(CfFilter *filter, uint32_t link,
                                  const double pos[3], const double vel[3],
                                  const double quat_wxyz[4]);

/* Streaming. `raw` carries num_links * 6 doubles, per link
 * [fx fy fz wx wy wz]; `len` is the total double count. Epoch times must be
 * strictly increasing. Fixes queue up and apply at the next step. */
CfStatus cf_filter_step(CfFilter *filter, double t, const double *raw,
                        size_t len);
CfStatus cf_filter_push_fix(CfFilter *filter, double t, const double pos[3],
                            double sigma);

/* Estimate access. Output pointers may be NULL where noted. */
CfStatus cf_filter_time(const CfFilter *filter, double *out_t);
CfStatus cf_filter_link_pose(const CfFilter *filter, uint32_t link,
                             double *out_pos /* 3, nullable */,
                             double *out_vel /* 3, nullable */,
                             double *out_quat_wxyz /* 4, nullable */);
CfStatus cf_filter_link_biases(const CfFilter *filter, uint32_t link,
                               double *out_bias_accel /* 3, nullable */,
                               double *out_bias_gyro /* 3, nullable */);
CfStatus cf_filter_segment(const CfFilter *filter, uint32_t owner,
                           uint32_t other, double out_lever[3]);
CfStatus cf_filter_camera_lever(const CfFilter *filter, double out_lever[3]);
CfStatus cf_filter_covariance_diagonal(const CfFilter *filter, double *out,
                                       size_t len);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* CHAINFUSION_H */
