//! C ABI over the `humandet` pipeline.
//!
//! Every fallible call returns an [`HdStatus`]; on failure the message is
//! available from [`hd_last_error`] on the same thread until the next failing
//! call. Handles are opaque and must be released with their `_free` function.
//! Depth buffers are row-major `uint16_t` millimeters with 0 marking invalid
//! pixels.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use humandet::depthimage::DepthImage;
use humandet::encoding::EncodingScheme;
use humandet::fusion::{fuse, nms, weight, FusionWeightParams, ScoredProposal, Scorer};
use humandet::geometry::{CameraIntrinsics, GroundPlane};
use humandet::pipeline::{Detector, PipelineConfig};
use humandet::roi::Proposal;
use humandet::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// No ground plane was found for the frame.
    NoPlane = 3,
    IndexOutOfRange = 4,
    BufferTooSmall = 5,
    /// The library panicked; the handle involved should be freed.
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdEncoding {
    Dg = 0,
    Cd = 1,
    Ce = 2,
    Cecd = 3,
}

impl From<HdEncoding> for EncodingScheme {
    fn from(e: HdEncoding) -> Self {
        match e {
            HdEncoding::Dg => EncodingScheme::Dg,
            HdEncoding::Cd => EncodingScheme::Cd,
            HdEncoding::Ce => EncodingScheme::Ce,
            HdEncoding::Cecd => EncodingScheme::Cecd,
        }
    }
}

/// Pinhole intrinsics in pixels.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HdIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Square window; `depth_m` is the depth at its anchor pixel.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HdProposal {
    pub x: i32,
    pub y: i32,
    pub side: u32,
    pub depth_m: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HdDetection {
    pub x: i32,
    pub y: i32,
    pub side: u32,
    pub p_color: f64,
    pub p_depth: f64,
    pub p_fused: f64,
}

/// Plane `normal . p + offset = 0`, meters, camera frame (y down).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HdPlane {
    pub normal: [f64; 3],
    pub offset: f64,
    pub inlier_count: usize,
    pub inlier_rms: f64,
}

/// Opaque configured pipeline.
pub struct HdPipeline {
    detector: Detector,
}

/// Opaque result of ROI selection for one frame.
pub struct HdProposalList {
    frame: u64,
    proposals: Vec<HdProposal>,
    plane: Option<GroundPlane>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: HdStatus, msg: impl Into<String>) -> HdStatus {
    set_error(msg);
    status
}

fn status_of(err: &Error) -> HdStatus {
    match err {
        Error::NoPlane(_) => HdStatus::NoPlane,
        _ => HdStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), HdStatus>) -> HdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HdStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(HdStatus::Internal, "internal panic"),
    }
}

fn check(err: Error) -> HdStatus {
    fail(status_of(&err), err.to_string())
}

unsafe fn depth_image(depth_mm: *const u16, width: usize, height: usize) -> Result<DepthImage, HdStatus> {
    if depth_mm.is_null() {
        return Err(fail(HdStatus::NullPointer, "depth buffer is null"));
    }
    if width == 0 || height == 0 {
        return Err(fail(HdStatus::InvalidArgument, "image has zero size"));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| fail(HdStatus::InvalidArgument, "image too large"))?;
    let mm = std::slice::from_raw_parts(depth_mm, n);
    DepthImage::from_millimeters(width, height, mm).map_err(check)
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Creates a pipeline. `config_toml` is a TOML document in the format of the
/// CLI config file, or null for defaults. Scoring goes through
/// [`hd_fuse_nms`], so the scorer settings of the config are ignored.
///
/// # Safety
/// `intrinsics` and `out` must be valid pointers; `config_toml`, if not null,
/// a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hd_pipeline_new(
    intrinsics: *const HdIntrinsics,
    config_toml: *const c_char,
    out: *mut *mut HdPipeline,
) -> HdStatus {
    guard(|| {
        if intrinsics.is_null() || out.is_null() {
            return Err(fail(HdStatus::NullPointer, "null argument"));
        }
        *out = ptr::null_mut();
        let config = if config_toml.is_null() {
            PipelineConfig::default()
        } else {
            let text = CStr::from_ptr(config_toml)
                .to_str()
                .map_err(|_| fail(HdStatus::InvalidArgument, "config is not UTF-8"))?;
            PipelineConfig::from_toml(text).map_err(check)?
        };
        let k = *intrinsics;
        let k = CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy);
        if !(k.fx > 0.0 && k.fy > 0.0 && k.cx.is_finite() && k.cy.is_finite()) {
            return Err(fail(HdStatus::InvalidArgument, "focal lengths must be positive"));
        }
        let detector = Detector::with_scorers(config, k, Box::new(NoScorer), Box::new(NoScorer));
        *out = Box::into_raw(Box::new(HdPipeline { detector }));
        Ok(())
    })
}

struct NoScorer;

impl Scorer for NoScorer {
    fn score(&self, _: u64, _: &Proposal) -> humandet::Result<f64> {
        Ok(0.0)
    }
}

/// # Safety
/// `pipeline` must come from [`hd_pipeline_new`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hd_pipeline_free(pipeline: *mut HdPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Ground-plane detection, window search and filtering on one frame, as
/// enabled in the pipeline config.
///
/// # Safety
/// `depth_mm` must point to `width * height` values; `pipeline` and `out`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn hd_select_rois(
    pipeline: *const HdPipeline,
    frame: u64,
    depth_mm: *const u16,
    width: usize,
    height: usize,
    out: *mut *mut HdProposalList,
) -> HdStatus {
    guard(|| {
        if pipeline.is_null() || out.is_null() {
            return Err(fail(HdStatus::NullPointer, "null argument"));
        }
        *out = ptr::null_mut();
        let det = &(*pipeline).detector;
        let img = depth_image(depth_mm, width, height)?;
        det.intrinsics.validate(width, height).map_err(check)?;
        let (plane, proposals) = det.select_rois(frame, &img);
        let proposals = proposals
            .iter()
            .map(|p| HdProposal { x: p.x, y: p.y, side: p.side, depth_m: p.depth_m })
            .collect();
        *out = Box::into_raw(Box::new(HdProposalList { frame, proposals, plane }));
        Ok(())
    })
}

/// # Safety
/// `list` must be a valid handle or null (yields 0).
#[no_mangle]
pub unsafe extern "C" fn hd_proposals_len(list: *const HdProposalList) -> usize {
    list.as_ref().map_or(0, |l| l.proposals.len())
}

/// Contiguous array of [`hd_proposals_len`] proposals, owned by `list`.
///
/// # Safety
/// `list` must be a valid handle or null (yields null).
#[no_mangle]
pub unsafe extern "C" fn hd_proposals_data(list: *const HdProposalList) -> *const HdProposal {
    list.as_ref().map_or(ptr::null(), |l| l.proposals.as_ptr())
}

/// # Safety
/// `list` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hd_proposals_get(list: *const HdProposalList, index: usize, out: *mut HdProposal) -> HdStatus {
    guard(|| {
        let (Some(l), false) = (list.as_ref(), out.is_null()) else {
            return Err(fail(HdStatus::NullPointer, "null argument"));
        };
        let p = l.proposals.get(index).ok_or_else(|| {
            fail(
                HdStatus::IndexOutOfRange,
                format!("index {index} out of range for {} proposals", l.proposals.len()),
            )
        })?;
        *out = *p;
        Ok(())
    })
}

/// Ground plane found for the frame; [`HdStatus::NoPlane`] when GPD was off
/// or found none.
///
/// # Safety
/// `list` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hd_proposals_plane(list: *const HdProposalList, out: *mut HdPlane) -> HdStatus {
    guard(|| {
        let (Some(l), false) = (list.as_ref(), out.is_null()) else {
            return Err(fail(HdStatus::NullPointer, "null argument"));
        };
        let p = l
            .plane
            .ok_or_else(|| fail(HdStatus::NoPlane, format!("no ground plane for frame {}", l.frame)))?;
        *out = HdPlane {
            normal: p.normal,
            offset: p.offset,
            inlier_count: p.inlier_count,
            inlier_rms: p.inlier_rms,
        };
        Ok(())
    })
}

/// # Safety
/// `list` must come from [`hd_select_rois`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hd_proposals_free(list: *mut HdProposalList) {
    if !list.is_null() {
        drop(Box::from_raw(list));
    }
}

/// Hole filling and normalization as configured, then `scheme`. Writes
/// `3 * width * height` bytes of interleaved RGB.
///
/// # Safety
/// `depth_mm` must hold `width * height` values and `out_rgb` room for
/// `out_capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn hd_encode(
    pipeline: *const HdPipeline,
    depth_mm: *const u16,
    width: usize,
    height: usize,
    scheme: HdEncoding,
    out_rgb: *mut u8,
    out_capacity: usize,
) -> HdStatus {
    guard(|| {
        if pipeline.is_null() || out_rgb.is_null() {
            return Err(fail(HdStatus::NullPointer, "null argument"));
        }
        let det = &(*pipeline).detector;
        let img = depth_image(depth_mm, width, height)?;
        let needed = width * height * 3;
        if out_capacity < needed {
            return Err(fail(
                HdStatus::BufferTooSmall,
                format!("output needs {needed} bytes, got {out_capacity}"),
            ));
        }
        let filled = det.preprocess(&img);
        let rgb = humandet::encoding::encode_with(&filled, scheme.into(), det.config.normalize);
        std::ptr::copy_nonoverlapping(rgb.data.as_ptr(), out_rgb, needed);
        Ok(())
    })
}

/// Fusion weight of the depth modality at `depth_m`: 1 up to `d_near`, 0 from
/// `d_far`, linear between. NaN for an invalid range.
#[no_mangle]
pub extern "C" fn hd_fusion_weight(depth_m: f64, d_near: f64, d_far: f64) -> f64 {
    let params = FusionWeightParams { d_near, d_far };
    if params.validate().is_err() {
        return f64::NAN;
    }
    weight(depth_m, &params)
}

/// Normalized log-linear pooling of the two probabilities with depth weight
/// `omega`.
#[no_mangle]
pub extern "C" fn hd_fuse(p_color: f64, p_depth: f64, omega: f64) -> f64 {
    fuse(p_color, p_depth, omega)
}

/// Fuses externally computed probabilities for every proposal of `list`
/// (`p_color[i]`, `p_depth[i]` belong to proposal `i`), then applies NMS.
/// Sets `out_len` to the number of detections and writes them to `out`; if
/// that exceeds `capacity`, nothing is written and the call returns
/// [`HdStatus::BufferTooSmall`].
///
/// # Safety
/// Score arrays must hold `n` values, `out` room for `capacity` detections.
#[no_mangle]
pub unsafe extern "C" fn hd_fuse_nms(
    pipeline: *const HdPipeline,
    list: *const HdProposalList,
    p_color: *const f64,
    p_depth: *const f64,
    n: usize,
    out: *mut HdDetection,
    capacity: usize,
    out_len: *mut usize,
) -> HdStatus {
    guard(|| {
        let (Some(pl), Some(l)) = (pipeline.as_ref(), list.as_ref()) else {
            return Err(fail(HdStatus::NullPointer, "null handle"));
        };
        if out_len.is_null() || (n > 0 && (p_color.is_null() || p_depth.is_null())) || (capacity > 0 && out.is_null()) {
            return Err(fail(HdStatus::NullPointer, "null buffer"));
        }
        *out_len = 0;
        if n != l.proposals.len() {
            return Err(fail(
                HdStatus::InvalidArgument,
                format!("{n} scores for {} proposals", l.proposals.len()),
            ));
        }
        let (pc, pd) = if n == 0 {
            (&[][..], &[][..])
        } else {
            (std::slice::from_raw_parts(p_color, n), std::slice::from_raw_parts(p_depth, n))
        };
        if let Some(bad) = pc.iter().chain(pd).find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(fail(HdStatus::InvalidArgument, format!("probability {bad} outside [0, 1]")));
        }
        let cfg = &pl.detector.config;
        let scored: Vec<ScoredProposal> = l
            .proposals
            .iter()
            .zip(pc.iter().zip(pd))
            .map(|(p, (&p_color, &p_depth))| ScoredProposal {
                proposal: Proposal { x: p.x, y: p.y, side: p.side, depth_m: p.depth_m },
                p_color,
                p_depth,
                p_fused: fuse(p_color, p_depth, weight(p.depth_m, &cfg.fusion)),
            })
            .collect();
        let kept = nms(&scored, cfg.nms.iou_threshold, cfg.nms.score_min);
        *out_len = kept.len();
        if kept.len() > capacity {
            return Err(fail(
                HdStatus::BufferTooSmall,
                format!("{} detections, capacity {capacity}", kept.len()),
            ));
        }
        for (i, d) in kept.iter().enumerate() {
            *out.add(i) = HdDetection {
                x: d.proposal.x,
                y: d.proposal.y,
                side: d.proposal.side,
                p_color: d.p_color,
                p_depth: d.p_depth,
                p_fused: d.p_fused,
            };
        }
        Ok(())
    })
}
