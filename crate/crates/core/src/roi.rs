//! Depth-driven region-of-interest selection.
//!
//! Three stages, each usable on its own for ablation:
//!
//! * **GPD** (ground plane detection): lower-half pixels are back-projected,
//!   bucketed into a 10x10 grid over their x-z footprint, cells whose height
//!   spread (VSTD) exceeds a threshold are discarded and the rest feed a
//!   RANSAC plane fit.
//! * **SIS** (scale-informed search): every valid anchor on a stride lattice
//!   that is not near the ground plane emits one square window whose side is
//!   `fx * W / Z`.
//! * **CPF** (candidate filtering): windows whose valid-pixel fraction,
//!   read from an integral image, is below a threshold are dropped.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depthimage::{DepthImage, ValidityIntegral};
use crate::error::{Error, Result};
use crate::geometry::{back_project, fit_plane_ransac, plane_distance, CameraIntrinsics, GroundPlane, Point3, Rect};

/// Square candidate window. `depth_m` is the depth at the anchor pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub x: i32,
    pub y: i32,
    pub side: u32,
    pub depth_m: f64,
}

impl Proposal {
    pub fn rect(&self) -> Rect {
        Rect::square(self.x, self.y, self.side)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiConfig {
    /// Rough shoulder width of a person, meters.
    pub human_width_m: f64,
    /// Grid cells with a larger height standard deviation are not ground.
    pub vstd_threshold: f64,
    /// Anchors within this distance of the ground plane are skipped.
    pub plane_dist_threshold: f64,
    /// Minimum fraction of valid pixels for a window to survive CPF.
    pub valid_fraction_min: f64,
    /// Anchor lattice spacing, also the GPD point subsampling, pixels.
    pub stride: usize,
    pub min_side: u32,
    pub grid_cells: usize,
    pub ransac_iterations: usize,
    pub ransac_inlier_tol: f64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self {
            human_width_m: 0.6,
            vstd_threshold: 0.15,
            plane_dist_threshold: 0.10,
            valid_fraction_min: 1.0 / 3.0,
            stride: 8,
            min_side: 50,
            grid_cells: 10,
            ransac_iterations: 200,
            ransac_inlier_tol: 0.05,
        }
    }
}

impl RoiConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("human_width_m", self.human_width_m),
            ("vstd_threshold", self.vstd_threshold),
            ("ransac_inlier_tol", self.ransac_inlier_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.plane_dist_threshold >= 0.0) {
            return Err(Error::InvalidParameter("plane_dist_threshold must be non-negative".into()));
        }
        if !(self.valid_fraction_min > 0.0 && self.valid_fraction_min <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "valid_fraction_min must be in (0, 1], got {}",
                self.valid_fraction_min
            )));
        }
        if self.stride == 0 || self.min_side == 0 || self.grid_cells == 0 {
            return Err(Error::InvalidParameter(
                "stride, min_side and grid_cells must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-cell statistics of the GPD grid.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellStats {
    pub count: usize,
    /// Standard deviation of the points' y coordinate, meters.
    pub vstd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridStats {
    pub cells_per_side: usize,
    pub x_range: (f64, f64),
    pub z_range: (f64, f64),
    /// Row-major over (z, x).
    pub cells: Vec<CellStats>,
}

impl GridStats {
    pub fn build(points: &[Point3], cells_per_side: usize) -> Self {
        let n = cells_per_side.max(1);
        let mut x_range = (f64::INFINITY, f64::NEG_INFINITY);
        let mut z_range = (f64::INFINITY, f64::NEG_INFINITY);
        for p in points {
            x_range = (x_range.0.min(p.x), x_range.1.max(p.x));
            z_range = (z_range.0.min(p.z), z_range.1.max(p.z));
        }
        let mut grid = Self {
            cells_per_side: n,
            x_range,
            z_range,
            cells: vec![CellStats::default(); n * n],
        };
        let mut sums = vec![(0f64, 0f64); n * n];
        for p in points {
            let c = grid.cell_of(p);
            grid.cells[c].count += 1;
            sums[c].0 += p.y;
            sums[c].1 += p.y * p.y;
        }
        for (cell, (s, sq)) in grid.cells.iter_mut().zip(sums) {
            if cell.count > 0 {
                let n = cell.count as f64;
                let mean = s / n;
                cell.vstd = (sq / n - mean * mean).max(0.0).sqrt();
            }
        }
        grid
    }

    fn axis_bin(v: f64, (lo, hi): (f64, f64), n: usize) -> usize {
        let span = hi - lo;
        if !(span > 0.0) {
            return 0;
        }
        (((v - lo) / span * n as f64) as usize).min(n - 1)
    }

    /// Index into `cells` of the cell containing `p`.
    pub fn cell_of(&self, p: &Point3) -> usize {
        let n = self.cells_per_side;
        Self::axis_bin(p.z, self.z_range, n) * n + Self::axis_bin(p.x, self.x_range, n)
    }
}

/// Lower-half points sampled for GPD together with their grid.
#[derive(Debug, Clone)]
pub struct GroundCandidates {
    pub sampled: Vec<Point3>,
    pub grid: GridStats,
    /// Points of the cells that passed the VSTD test.
    pub kept: Vec<Point3>,
}

pub fn ground_candidates(img: &DepthImage, k: &CameraIntrinsics, cfg: &RoiConfig) -> GroundCandidates {
    let stride = cfg.stride.max(1);
    let mut sampled = Vec::new();
    for v in (img.height() / 2..img.height()).step_by(stride) {
        for u in (0..img.width()).step_by(stride) {
            let d = img.get(u, v);
            if d > 0.0 {
                sampled.push(back_project(u as f64, v as f64, d as f64, k).expect("positive depth"));
            }
        }
    }
    let grid = GridStats::build(&sampled, cfg.grid_cells);
    let kept = sampled
        .iter()
        .copied()
        .filter(|p| grid.cells[grid.cell_of(p)].vstd <= cfg.vstd_threshold)
        .collect();
    GroundCandidates { sampled, grid, kept }
}

/// Ground plane of the frame, or `None` when too few ground candidates
/// survive or they are degenerate.
pub fn detect_ground_plane(
    img: &DepthImage,
    k: &CameraIntrinsics,
    cfg: &RoiConfig,
    seed: u64,
) -> Option<GroundPlane> {
    let candidates = ground_candidates(img, k, cfg);
    if candidates.kept.len() < 3 {
        return None;
    }
    fit_plane_ransac(&candidates.kept, cfg.ransac_iterations, cfg.ransac_inlier_tol, seed).ok()
}

/// Window side in pixels for a person at `depth_m`: `round(fx * W / Z)`,
/// floored at `min_side`.
pub fn window_width(depth_m: f64, k: &CameraIntrinsics, cfg: &RoiConfig) -> Result<u32> {
    if !(depth_m > 0.0) {
        return Err(Error::InvalidParameter(format!("depth must be positive, got {depth_m}")));
    }
    let side = (k.fx * cfg.human_width_m / depth_m).round();
    Ok((side.min(u32::MAX as f64) as u32).max(cfg.min_side))
}

/// Square window of `side` centered on `(u, v)`, shifted (and if necessary
/// shrunk) to lie inside the image.
fn place_window(u: usize, v: usize, side: u32, width: usize, height: usize) -> (i32, i32, u32) {
    let side = side.min(width as u32).min(height as u32);
    let half = (side / 2) as i64;
    let x = (u as i64 - half).clamp(0, width as i64 - side as i64);
    let y = (v as i64 - half).clamp(0, height as i64 - side as i64);
    (x as i32, y as i32, side)
}

#[inline]
fn anchor_proposal(
    img: &DepthImage,
    u: usize,
    v: usize,
    plane: Option<&GroundPlane>,
    k: &CameraIntrinsics,
    cfg: &RoiConfig,
) -> Option<Proposal> {
    let d = img.get(u, v);
    if d <= 0.0 {
        return None;
    }
    let depth_m = d as f64 / 1000.0;
    if let Some(plane) = plane {
        let p = back_project(u as f64, v as f64, d as f64, k).ok()?;
        if plane_distance(p, plane) <= cfg.plane_dist_threshold {
            return None;
        }
    }
    let side = window_width(depth_m, k, cfg).ok()?;
    let (x, y, side) = place_window(u, v, side, img.width(), img.height());
    Some(Proposal { x, y, side, depth_m })
}

/// Number of lattice anchors scanned by SIS, valid or not.
pub fn lattice_size(img: &DepthImage, cfg: &RoiConfig) -> usize {
    let s = cfg.stride.max(1);
    img.width().div_ceil(s) * img.height().div_ceil(s)
}

/// SIS over the anchor lattice, in row-major anchor order.
pub fn generate_proposals(
    img: &DepthImage,
    plane: Option<&GroundPlane>,
    k: &CameraIntrinsics,
    cfg: &RoiConfig,
) -> Vec<Proposal> {
    let stride = cfg.stride.max(1);
    let mut out = Vec::new();
    for v in (0..img.height()).step_by(stride) {
        for u in (0..img.width()).step_by(stride) {
            if let Some(p) = anchor_proposal(img, u, v, plane, k, cfg) {
                out.push(p);
            }
        }
    }
    out
}

/// Row-parallel SIS; same output and order as [`generate_proposals`].
pub fn generate_proposals_par(
    img: &DepthImage,
    plane: Option<&GroundPlane>,
    k: &CameraIntrinsics,
    cfg: &RoiConfig,
) -> Vec<Proposal> {
    let stride = cfg.stride.max(1);
    let rows: Vec<usize> = (0..img.height()).step_by(stride).collect();
    rows.par_iter()
        .flat_map_iter(|&v| {
            (0..img.width())
                .step_by(stride)
                .filter_map(move |u| anchor_proposal(img, u, v, plane, k, cfg))
        })
        .collect()
}

/// CPF: keeps the proposals whose valid-pixel fraction reaches
/// `cfg.valid_fraction_min`, preserving order.
pub fn filter_proposals(proposals: &[Proposal], integral: &ValidityIntegral, cfg: &RoiConfig) -> Vec<Proposal> {
    proposals
        .iter()
        .filter(|p| {
            integral
                .valid_fraction(&p.rect())
                .is_ok_and(|f| f >= cfg.valid_fraction_min)
        })
        .copied()
        .collect()
}

/// Which ROI stages run. SIS is always on; without it there are no windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Stages {
    pub gpd: bool,
    pub cpf: bool,
}

impl Stages {
    pub const ALL: Stages = Stages { gpd: true, cpf: true };
    pub const SIS_ONLY: Stages = Stages { gpd: false, cpf: false };
}

impl Default for Stages {
    fn default() -> Self {
        Self::ALL
    }
}

impl FromStr for Stages {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut stages = Stages::SIS_ONLY;
        let mut sis = false;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "gpd" => stages.gpd = true,
                "sis" => sis = true,
                "cpf" => stages.cpf = true,
                other => {
                    return Err(Error::InvalidParameter(format!(
                        "unknown ROI stage `{other}` (expected gpd, sis, cpf)"
                    )))
                }
            }
        }
        if !sis {
            return Err(Error::InvalidParameter("ROI stages must include sis".into()));
        }
        Ok(stages)
    }
}

impl TryFrom<String> for Stages {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Stages> for String {
    fn from(s: Stages) -> String {
        s.to_string()
    }
}

impl fmt::Display for Stages {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.gpd {
            parts.push("gpd");
        }
        parts.push("sis");
        if self.cpf {
            parts.push("cpf");
        }
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone)]
pub struct RoiSelection {
    pub plane: Option<GroundPlane>,
    pub proposals: Vec<Proposal>,
}

/// Runs the enabled stages in order GPD, SIS, CPF.
pub fn select_rois(
    img: &DepthImage,
    k: &CameraIntrinsics,
    cfg: &RoiConfig,
    stages: Stages,
    seed: u64,
) -> RoiSelection {
    let plane = if stages.gpd {
        detect_ground_plane(img, k, cfg, seed)
    } else {
        None
    };
    let mut proposals = generate_proposals(img, plane.as_ref(), k, cfg);
    if stages.cpf {
        let integral = crate::depthimage::build_validity_integral(img);
        proposals = filter_proposals(&proposals, &integral, cfg);
    }
    RoiSelection { plane, proposals }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depthimage::build_validity_integral;
    use proptest::prelude::*;

    fn k525() -> CameraIntrinsics {
        CameraIntrinsics::new(525.0, 525.0, 320.0, 240.0)
    }

    #[test]
    fn window_width_examples() {
        let cfg = RoiConfig { min_side: 1, ..RoiConfig::default() };
        assert_eq!(window_width(3.0, &k525(), &cfg).unwrap(), 105);
        assert_eq!(window_width(1.5, &k525(), &cfg).unwrap(), 210);
        let k500 = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0);
        assert_eq!(window_width(0.6, &k500, &cfg).unwrap(), 500);
        assert!(window_width(0.0, &k525(), &cfg).is_err());
        assert!(window_width(-1.0, &k525(), &cfg).is_err());
    }

    #[test]
    fn window_width_floor() {
        let cfg = RoiConfig::default();
        // 525 * 0.6 / 10 = 31.5 -> floored at 50
        assert_eq!(window_width(10.0, &k525(), &cfg).unwrap(), 50);
    }

    #[test]
    fn empty_frame_has_no_proposals() {
        let img = DepthImage::invalid(64, 48);
        assert!(generate_proposals(&img, None, &k525(), &RoiConfig::default()).is_empty());
        assert!(detect_ground_plane(&img, &k525(), &RoiConfig::default(), 0).is_none());
    }

    #[test]
    fn single_anchor_window() {
        let mut img = DepthImage::invalid(640, 480);
        img.set(320, 240, 3000.0);
        let props = generate_proposals(&img, None, &k525(), &RoiConfig::default());
        assert_eq!(props.len(), 1);
        let p = props[0];
        assert_eq!(p.side, 105);
        assert_eq!((p.x, p.y), (320 - 52, 240 - 52));
        assert_eq!(p.depth_m, 3.0);
    }

    #[test]
    fn windows_are_shifted_inside_the_image() {
        let mut img = DepthImage::invalid(200, 100);
        img.set(0, 0, 3000.0);
        img.set(192, 96, 1000.0);
        let props = generate_proposals(&img, None, &k525(), &RoiConfig::default());
        assert_eq!(props[0], Proposal { x: 0, y: 0, side: 100, depth_m: 3.0 });
        // 315 px window shrinks to the image height.
        assert_eq!((props[1].x, props[1].y, props[1].side), (100, 0, 100));
    }

    #[test]
    fn plane_removes_ground_anchors() {
        let k = k525();
        let cfg = RoiConfig::default();
        let mut img = DepthImage::invalid(640, 480);
        // (320, 400) on the floor y = 1.4: z = 1.4 * 525 / 160
        let z_floor = 1.4 * 525.0 / 160.0;
        img.set(320, 400, (z_floor * 1000.0) as f32);
        img.set(320, 240, 3000.0);
        let plane = GroundPlane::horizontal(1.4);
        let props = generate_proposals(&img, Some(&plane), &k, &cfg);
        assert_eq!(props.len(), 1);
        assert_eq!(props[0].depth_m, 3.0);
        assert_eq!(generate_proposals(&img, None, &k, &cfg).len(), 2);
    }

    #[test]
    fn cpf_examples() {
        let cfg = RoiConfig::default();
        let full = DepthImage::new(20, 20, vec![1000.0; 400]).unwrap();
        let props = vec![
            Proposal { x: 0, y: 0, side: 10, depth_m: 1.0 },
            Proposal { x: 5, y: 5, side: 15, depth_m: 1.0 },
        ];
        assert_eq!(filter_proposals(&props, &build_validity_integral(&full), &cfg), props);

        let mut half = DepthImage::invalid(20, 20);
        for y in 0..20 {
            for x in 10..20 {
                half.set(x, y, 1000.0);
            }
        }
        let s = build_validity_integral(&half);
        let dark = Proposal { x: 0, y: 0, side: 10, depth_m: 1.0 };
        assert!(filter_proposals(&[dark], &s, &cfg).is_empty());

        // 4 of 9 valid
        let mut img = DepthImage::invalid(3, 3);
        for (x, y) in [(0, 0), (2, 0), (1, 1), (0, 2)] {
            img.set(x, y, 1000.0);
        }
        let s = build_validity_integral(&img);
        let p = [Proposal { x: 0, y: 0, side: 3, depth_m: 1.0 }];
        assert_eq!(filter_proposals(&p, &s, &cfg).len(), 1);
        let strict = RoiConfig { valid_fraction_min: 0.5, ..cfg };
        assert!(filter_proposals(&p, &s, &strict).is_empty());
    }

    #[test]
    fn stage_parsing() {
        assert_eq!("gpd,sis,cpf".parse::<Stages>().unwrap(), Stages::ALL);
        assert_eq!("sis".parse::<Stages>().unwrap(), Stages::SIS_ONLY);
        assert_eq!(
            "sis, gpd".parse::<Stages>().unwrap(),
            Stages { gpd: true, cpf: false }
        );
        assert!("gpd,cpf".parse::<Stages>().is_err());
        assert!("sis,foo".parse::<Stages>().is_err());
        assert_eq!(Stages::ALL.to_string(), "gpd,sis,cpf");
    }

    #[test]
    fn grid_vstd() {
        // A vertical column of points at one spot has a large height spread.
        let mut pts: Vec<Point3> = (0..20).map(|i| Point3::new(0.0, 0.1 * i as f64, 3.0)).collect();
        pts.push(Point3::new(1.0, 1.4, 5.0));
        pts.push(Point3::new(-1.0, 1.4, 1.0));
        let g = GridStats::build(&pts, 10);
        let col = &g.cells[g.cell_of(&pts[0])];
        assert_eq!(col.count, 20);
        assert!((col.vstd - 0.5766281297).abs() < 1e-6);
        assert_eq!(g.cells[g.cell_of(&pts[20])].vstd, 0.0);
        assert_eq!(g.cells.iter().map(|c| c.count).sum::<usize>(), pts.len());
    }

    #[test]
    fn config_validation() {
        assert!(RoiConfig::default().validate().is_ok());
        assert!(RoiConfig { valid_fraction_min: 0.0, ..Default::default() }.validate().is_err());
        assert!(RoiConfig { stride: 0, ..Default::default() }.validate().is_err());
        assert!(RoiConfig { human_width_m: -0.6, ..Default::default() }.validate().is_err());
    }

    fn sparse_depth() -> impl Strategy<Value = DepthImage> {
        (8usize..40, 8usize..40).prop_flat_map(|(w, h)| {
            prop::collection::vec(prop_oneof![Just(0.0f32), 500.0f32..8000.0], w * h)
                .prop_map(move |d| DepthImage::new(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn width_halves_with_double_depth(z in 0.3f64..20.0, fx in 100.0f64..2000.0) {
            let cfg = RoiConfig { min_side: 1, ..RoiConfig::default() };
            let k = CameraIntrinsics::new(fx, fx, 0.0, 0.0);
            let near = window_width(z, &k, &cfg).unwrap() as f64;
            let far = window_width(2.0 * z, &k, &cfg).unwrap() as f64;
            prop_assert!((far - (near / 2.0).round()).abs() <= 1.0);
        }

        #[test]
        fn proposals_are_square_and_inside(img in sparse_depth(), stride in 1usize..6, min_side in 1u32..10) {
            let cfg = RoiConfig { stride, min_side, ..RoiConfig::default() };
            let k = CameraIntrinsics::new(50.0, 50.0, 4.0, 4.0);
            for p in generate_proposals(&img, None, &k, &cfg) {
                prop_assert!(p.x >= 0 && p.y >= 0);
                prop_assert!(p.x as usize + p.side as usize <= img.width());
                prop_assert!(p.y as usize + p.side as usize <= img.height());
                prop_assert!(p.side >= min_side.min(img.width().min(img.height()) as u32));
                prop_assert!(p.depth_m > 0.0);
            }
        }

        #[test]
        fn sis_without_plane_is_a_lattice_count(img in sparse_depth(), stride in 1usize..6) {
            let cfg = RoiConfig { stride, plane_dist_threshold: 0.0, ..RoiConfig::default() };
            let k = CameraIntrinsics::new(50.0, 50.0, 4.0, 4.0);
            let mut expected = 0;
            for v in 0..img.height() {
                for u in 0..img.width() {
                    if u % stride == 0 && v % stride == 0 && img.get(u, v) > 0.0 {
                        expected += 1;
                    }
                }
            }
            prop_assert_eq!(generate_proposals(&img, None, &k, &cfg).len(), expected);
        }

        #[test]
        fn parallel_sis_matches_sequential(img in sparse_depth(), stride in 1usize..6) {
            let cfg = RoiConfig { stride, ..RoiConfig::default() };
            let k = CameraIntrinsics::new(50.0, 50.0, 4.0, 4.0);
            let plane = GroundPlane::horizontal(1.0);
            prop_assert_eq!(
                generate_proposals(&img, Some(&plane), &k, &cfg),
                generate_proposals_par(&img, Some(&plane), &k, &cfg)
            );
        }

        #[test]
        fn cpf_is_an_idempotent_subset(img in sparse_depth(), frac in 0.05f64..1.0) {
            let cfg = RoiConfig { stride: 2, min_side: 1, valid_fraction_min: frac, ..RoiConfig::default() };
            let k = CameraIntrinsics::new(20.0, 20.0, 4.0, 4.0);
            let props = generate_proposals(&img, None, &k, &cfg);
            let s = build_validity_integral(&img);
            let once = filter_proposals(&props, &s, &cfg);
            prop_assert!(once.iter().all(|p| props.contains(p)));
            prop_assert_eq!(filter_proposals(&once, &s, &cfg), once.clone());
        }
    }
}
