/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef HUMANDET_H
#define HUMANDET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HdStatus {
  HD_STATUS_OK = 0,
  HD_STATUS_NULL_POINTER = 1,
  HD_STATUS_INVALID_ARGUMENT = 2,
  // No ground plane was found for the frame.
  HD_STATUS_NO_PLANE = 3,
  HD_STATUS_INDEX_OUT_OF_RANGE = 4,
  HD_STATUS_BUFFER_TOO_SMALL = 5,
  // The library panicked; the handle involved should be freed.
  HD_STATUS_INTERNAL = 6,
} HdStatus;

typedef enum HdEncoding {
  HD_ENCODING_DG = 0,
  HD_ENCODING_CD = 1,
  HD_ENCODING_CE = 2,
  HD_ENCODING_CECD = 3,
} HdEncoding;

// Opaque configured pipeline.
typedef struct HdPipeline HdPipeline;

// Opaque result of ROI selection for one frame.
typedef struct HdProposalList HdProposalList;

// Pinhole intrinsics in pixels.
typedef struct HdIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
} HdIntrinsics;

// Square window; `depth_m` is the depth at its anchor pixel.
typedef struct HdProposal {
  int32_t x;
  int32_t y;
  uint32_t side;
  double depth_m;
} HdProposal;

// Plane `normal . p + offset = 0`, meters, camera frame (y down).
typedef struct HdPlane {
  double normal[3];
  double offset;
  size_t inlier_count;
  double inlier_rms;
} HdPlane;

typedef struct HdDetection {
  int32_t x;
  int32_t y;
  uint32_t side;
  double p_color;
  double p_depth;
  double p_fused;
} HdDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *hd_last_error(void);

// Creates a pipeline. `config_toml` is a TOML document in the format of the
// CLI config file, or null for defaults. Scoring goes through
// [`hd_fuse_nms`], so the scorer settings of the config are ignored.
//
// # Safety
// `intrinsics` and `out` must be valid pointers; `config_toml`, if not null,
// a NUL-terminated string.
enum HdStatus hd_pipeline_new(const struct HdIntrinsics *intrinsics,
                              const char *config_toml,
                              struct HdPipeline **out);

// # Safety
// `pipeline` must come from [`hd_pipeline_new`] and not be used afterwards.
// Null is ignored.
void hd_pipeline_free(struct HdPipeline *pipeline);

// Ground-plane detection, window search and filtering on one frame, as
// enabled in the pipeline config.
//
// # Safety
// `depth_mm` must point to `width * height` values; `pipeline` and `out`
// must be valid.
enum HdStatus hd_select_rois(const struct HdPipeline *pipeline,
                             uint64_t frame,
                             const uint16_t *depth_mm,
                             size_t width,
                             size_t height,
                             struct HdProposalList **out);

// # Safety
// `list` must be a valid handle or null (yields 0).
size_t hd_proposals_len(const struct HdProposalList *list);

// Contiguous array of [`hd_proposals_len`] proposals, owned by `list`.
//
// # Safety
// `list` must be a valid handle or null (yields null).
const struct HdProposal *hd_proposals_data(const struct HdProposalList *list);

// # Safety
// `list` and `out` must be valid.
enum HdStatus hd_proposals_get(const struct HdProposalList *list,
                               size_t index,
                               struct HdProposal *out);

// Ground plane found for the frame; [`HdStatus::NoPlane`] when GPD was off
// or found none.
//
// # Safety
// `list` and `out` must be valid.
enum HdStatus hd_proposals_plane(const struct HdProposalList *list, struct HdPlane *out);

// # Safety
// `list` must come from [`hd_select_rois`] and not be used afterwards.
// Null is ignored.
void hd_proposals_free(struct HdProposalList *list);

// Hole filling and normalization as configured, then `scheme`. Writes
// `3 * width * height` bytes of interleaved RGB.
//
// # Safety
// `depth_mm` must hold `width * height` values and `out_rgb` room for
// `out_capacity` bytes.
enum HdStatus hd_encode(const struct HdPipeline *pipeline,
                        const uint16_t *depth_mm,
                        size_t width,
                        size_t height,
                        enum HdEncoding scheme,
                        uint8_t *out_rgb,
                        size_t out_capacity);

// Fusion weight of the depth modality at `depth_m`: 1 up to `d_near`, 0 from
// `d_far`, linear between. NaN for an invalid range.
double hd_fusion_weight(double depth_m, double d_near, double d_far);

// Normalized log-linear pooling of the two probabilities with depth weight
// `omega`.
double hd_fuse(double p_color, double p_depth, double omega);

// Fuses externally computed probabilities for every proposal of `list`
// (`p_color[i]`, `p_depth[i]` belong to proposal `i`), then applies NMS.
// Sets `out_len` to the number of detections and writes them to `out`; if
// that exceeds `capacity`, nothing is written and the call returns
// [`HdStatus::BufferTooSmall`].
//
// # Safety
// Score arrays must hold `n` values, `out` room for `capacity` detections.
enum HdStatus hd_fuse_nms(const struct HdPipeline *pipeline,
                          const struct HdProposalList *list,
                          const double *p_color,
                          const double *p_depth,
                          size_t n,
                          struct HdDetection *out,
                          size_t capacity,
                          size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HUMANDET_H */
