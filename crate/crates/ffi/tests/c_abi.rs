use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use approx::assert_abs_diff_eq;
use humandet::synth::{render, SceneSampler};
use humandet_ffi::*;

fn kinect() -> HdIntrinsics {
    HdIntrinsics { fx: 525.0, fy: 525.0, cx: 319.5, cy: 239.5 }
}

fn scene_mm(seed: u64) -> (Vec<u16>, humandet::synth::RenderedScene) {
    let scene = render(&SceneSampler::default().sample(seed)).unwrap();
    (scene.depth.to_millimeters(), scene)
}

fn last_error() -> String {
    let p = hd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn pipeline(config: Option<&str>) -> *mut HdPipeline {
    let cfg = config.map(|c| CString::new(c).unwrap());
    let mut p = ptr::null_mut();
    let st = hd_pipeline_new(&kinect(), cfg.as_ref().map_or(ptr::null(), |c| c.as_ptr()), &mut p);
    assert_eq!(st, HdStatus::Ok);
    p
}

#[test]
fn rois_match_the_library() {
    unsafe {
        let p = pipeline(None);
        let (mm, _) = scene_mm(3);
        let mut list = ptr::null_mut();
        assert_eq!(hd_select_rois(p, 7, mm.as_ptr(), 640, 480, &mut list), HdStatus::Ok);

        let img = humandet::DepthImage::from_millimeters(640, 480, &mm).unwrap();
        let det = humandet::Detector::with_scorers(
            humandet::PipelineConfig::default(),
            humandet::CameraIntrinsics::kinect_vga(),
            Box::new(humandet::fusion::ConstantScorer(0.0)),
            Box::new(humandet::fusion::ConstantScorer(0.0)),
        );
        let (plane, expected) = det.select_rois(7, &img);
        let n = hd_proposals_len(list);
        assert_eq!(n, expected.len());
        assert!(n > 0);
        let data = std::slice::from_raw_parts(hd_proposals_data(list), n);
        for (got, want) in data.iter().zip(&expected) {
            assert_eq!((got.x, got.y, got.side, got.depth_m), (want.x, want.y, want.side, want.depth_m));
        }
        let mut one = HdProposal { x: 0, y: 0, side: 0, depth_m: 0.0 };
        assert_eq!(hd_proposals_get(list, n - 1, &mut one), HdStatus::Ok);
        assert_eq!(one, data[n - 1]);
        assert_eq!(hd_proposals_get(list, n, &mut one), HdStatus::IndexOutOfRange);
        assert!(last_error().contains("out of range"));

        let mut hp = std::mem::zeroed::<HdPlane>();
        assert_eq!(hd_proposals_plane(list, &mut hp), HdStatus::Ok);
        assert_eq!(hp.normal, plane.unwrap().normal);

        hd_proposals_free(list);
        hd_pipeline_free(p);
    }
}

#[test]
fn plane_absent_without_gpd() {
    unsafe {
        let p = pipeline(Some("stages = \"sis,cpf\"\n"));
        let (mm, _) = scene_mm(1);
        let mut list = ptr::null_mut();
        assert_eq!(hd_select_rois(p, 0, mm.as_ptr(), 640, 480, &mut list), HdStatus::Ok);
        let mut hp = std::mem::zeroed::<HdPlane>();
        assert_eq!(hd_proposals_plane(list, &mut hp), HdStatus::NoPlane);
        assert!(last_error().contains("frame 0"));
        hd_proposals_free(list);
        hd_pipeline_free(p);
    }
}

#[test]
fn encode_writes_rgb() {
    unsafe {
        let p = pipeline(None);
        let mm: Vec<u16> = vec![1000, 2000, 0, 3000];
        let mut rgb = vec![7u8; 12];
        assert_eq!(hd_encode(p, mm.as_ptr(), 2, 2, HdEncoding::Dg, rgb.as_mut_ptr(), 12), HdStatus::Ok);
        // Gray encodings replicate one channel.
        for px in rgb.chunks(3) {
            assert!(px[0] == px[1] && px[1] == px[2]);
        }
        assert_eq!(hd_encode(p, mm.as_ptr(), 2, 2, HdEncoding::Cecd, rgb.as_mut_ptr(), 11), HdStatus::BufferTooSmall);
        hd_pipeline_free(p);
    }
}

#[test]
fn fusion_entry_points() {
    assert_eq!(hd_fusion_weight(0.5, 1.0, 6.0), 1.0);
    assert_eq!(hd_fusion_weight(7.0, 1.0, 6.0), 0.0);
    assert_abs_diff_eq!(hd_fusion_weight(3.5, 1.0, 6.0), 0.5, epsilon = 1e-12);
    assert!(hd_fusion_weight(3.0, 6.0, 1.0).is_nan());
    assert_abs_diff_eq!(hd_fuse(0.9, 0.5, 0.5), 0.75, epsilon = 1e-12);
    assert_abs_diff_eq!(hd_fuse(0.3, 0.8, 0.0), 0.3, epsilon = 1e-12);
}

#[test]
fn fuse_nms_keeps_the_annotated_windows() {
    unsafe {
        let p = pipeline(None);
        let (mm, scene) = scene_mm(5);
        let mut list = ptr::null_mut();
        assert_eq!(hd_select_rois(p, 0, mm.as_ptr(), 640, 480, &mut list), HdStatus::Ok);
        let n = hd_proposals_len(list);
        let props = std::slice::from_raw_parts(hd_proposals_data(list), n);
        // Score = overlap with the nearest annotation.
        let scores: Vec<f64> = props
            .iter()
            .map(|q| {
                let r = humandet::Rect::square(q.x, q.y, q.side);
                scene
                    .annotations
                    .iter()
                    .map(|a| humandet::fusion::iou(&r, &a.rect()))
                    .fold(0.0, f64::max)
            })
            .collect();
        let mut out = vec![std::mem::zeroed::<HdDetection>(); 64];
        let mut len = 0usize;
        let st = hd_fuse_nms(p, list, scores.as_ptr(), scores.as_ptr(), n, out.as_mut_ptr(), out.len(), &mut len);
        assert_eq!(st, HdStatus::Ok, "{}", last_error());
        assert_eq!(len, scene.annotations.len());
        for d in &out[..len] {
            assert!(d.p_fused >= 0.5);
            assert_abs_diff_eq!(d.p_fused, d.p_color, epsilon = 1e-9);
        }

        let st = hd_fuse_nms(p, list, scores.as_ptr(), scores.as_ptr(), n, out.as_mut_ptr(), 0, &mut len);
        assert_eq!(st, HdStatus::BufferTooSmall);
        assert_eq!(len, scene.annotations.len());
        let st = hd_fuse_nms(p, list, scores.as_ptr(), scores.as_ptr(), n - 1, out.as_mut_ptr(), 64, &mut len);
        assert_eq!(st, HdStatus::InvalidArgument);
        hd_proposals_free(list);
        hd_pipeline_free(p);
    }
}

#[test]
fn bad_arguments_are_reported() {
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(hd_pipeline_new(ptr::null(), ptr::null(), &mut p), HdStatus::NullPointer);
        let bad = CString::new("[roi]\nstride = \"x\"\n").unwrap();
        assert_eq!(hd_pipeline_new(&kinect(), bad.as_ptr(), &mut p), HdStatus::InvalidArgument);
        assert!(p.is_null());
        assert!(last_error().contains("stride"));
        let neg = HdIntrinsics { fx: -1.0, ..kinect() };
        assert_eq!(hd_pipeline_new(&neg, ptr::null(), &mut p), HdStatus::InvalidArgument);

        let p = pipeline(None);
        let mut list = ptr::null_mut();
        assert_eq!(hd_select_rois(p, 0, ptr::null(), 640, 480, &mut list), HdStatus::NullPointer);
        let mm = [0u16; 4];
        assert_eq!(hd_select_rois(p, 0, mm.as_ptr(), 0, 4, &mut list), HdStatus::InvalidArgument);
        assert!(list.is_null());
        assert_eq!(hd_proposals_len(ptr::null()), 0);
        hd_proposals_free(ptr::null_mut());
        hd_pipeline_free(p);
        hd_pipeline_free(ptr::null_mut());
    }
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/humandet.h")).unwrap();
    let src = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|s| s.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 12);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    for ty in ["typedef struct HdPipeline HdPipeline;", "HD_STATUS_OK = 0", "HD_ENCODING_CECD = 3"] {
        assert!(header.contains(ty), "{ty}");
    }
}

/// Compiles and runs a C program against the static library.
#[test]
fn c_program_links_and_runs() {
    let target = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = target.join("libhumandet_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let dir = tempfile_dir();
    let c = dir.join("smoke.c");
    std::fs::write(
        &c,
        r#"
#include <stdio.h>
#include <math.h>
#include "humandet.h"
int main(void) {
    HdIntrinsics k = {525.0, 525.0, 319.5, 239.5};
    HdPipeline *p = NULL;
    if (hd_pipeline_new(&k, NULL, &p) != HD_STATUS_OK) return 1;
    static uint16_t depth[640 * 480];
    for (int i = 0; i < 640 * 480; i++) depth[i] = 3000;
    HdProposalList *list = NULL;
    if (hd_select_rois(p, 0, depth, 640, 480, &list) != HD_STATUS_OK) return 2;
    size_t n = hd_proposals_len(list);
    HdProposal first;
    if (n == 0 || hd_proposals_get(list, 0, &first) != HD_STATUS_OK) return 3;
    if (first.side != 105) return 4;
    if (fabs(hd_fuse(0.9, 0.5, 0.5) - 0.75) > 1e-12) return 5;
    if (hd_proposals_get(list, n, &first) != HD_STATUS_INDEX_OUT_OF_RANGE) return 6;
    if (hd_last_error() == NULL) return 7;
    printf("%zu\n", n);
    hd_proposals_free(list);
    hd_pipeline_free(p);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.join("smoke");
    let status = Command::new("cc")
        .arg(&c)
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("run cc");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "4800");
}

fn tempfile_dir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("humandet-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
