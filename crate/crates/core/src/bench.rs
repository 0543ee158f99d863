//! Per-stage timing of the detection chain.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::depthimage::{build_validity_integral, DepthImage};
use crate::error::Result;
use crate::fusion::nms;
use crate::pipeline::Detector;
use crate::roi::{detect_ground_plane, filter_proposals, generate_proposals, lattice_size, RoiConfig};

/// Stages in report order. `integral` is the validity integral image that CPF
/// queries; `roi_total` is GPD + SIS + integral + CPF.
pub const STAGES: [&str; 8] = ["gpd", "sis", "integral", "cpf", "roi_total", "fusion", "nms", "total"];

/// One frame's measurements.
#[derive(Debug, Clone, Default)]
pub struct FrameTiming {
    pub gpd: Duration,
    pub sis: Duration,
    pub integral: Duration,
    pub cpf: Duration,
    pub fusion: Duration,
    pub nms: Duration,
    pub anchors: usize,
    pub proposals_sis: usize,
    pub proposals_cpf: usize,
    pub detections: usize,
}

impl FrameTiming {
    pub fn roi_total(&self) -> Duration {
        self.gpd + self.sis + self.integral + self.cpf
    }

    pub fn total(&self) -> Duration {
        self.roi_total() + self.fusion + self.nms
    }

    fn stage(&self, name: &str) -> Duration {
        match name {
            "gpd" => self.gpd,
            "sis" => self.sis,
            "integral" => self.integral,
            "cpf" => self.cpf,
            "roi_total" => self.roi_total(),
            "fusion" => self.fusion,
            "nms" => self.nms,
            "total" => self.total(),
            _ => unreachable!("unknown stage {name}"),
        }
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

/// Runs the configured chain on one frame, timing each stage. Hole filling
/// and encoding are not timed; stages disabled in the config report zero.
pub fn time_frame(det: &Detector, frame: u64, depth: &DepthImage) -> Result<FrameTiming> {
    let cfg = &det.config;
    let k = &det.intrinsics;
    let mut t = FrameTiming { anchors: lattice_size(depth, &cfg.roi), ..Default::default() };

    let (plane, gpd) = timed(|| {
        cfg.stages
            .gpd
            .then(|| detect_ground_plane(depth, k, &cfg.roi, det.frame_seed(frame)))
            .flatten()
    });
    t.gpd = gpd;
    let (mut proposals, sis) = timed(|| generate_proposals(depth, plane.as_ref(), k, &cfg.roi));
    t.sis = sis;
    t.proposals_sis = proposals.len();
    if cfg.stages.cpf {
        let (integral, ti) = timed(|| build_validity_integral(depth));
        let (kept, tc) = timed(|| filter_proposals(&proposals, &integral, &cfg.roi));
        t.integral = ti;
        t.cpf = tc;
        proposals = kept;
    }
    t.proposals_cpf = proposals.len();
    let (scored, tf) = timed(|| det.score(frame, &proposals));
    t.fusion = tf;
    let scored = scored?;
    let (dets, tn) = timed(|| nms(&scored, cfg.nms.iou_threshold, cfg.nms.score_min));
    t.nms = tn;
    t.detections = dets.len();
    Ok(t)
}

/// One CSV row: a stage time in milliseconds or a per-frame count.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SummaryRow {
    pub metric: String,
    pub unit: &'static str,
    pub frames: usize,
    pub median: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl SummaryRow {
    fn of(metric: &str, unit: &'static str, mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let (median, mean, min, max) = if n == 0 {
            (0.0, 0.0, 0.0, 0.0)
        } else {
            (
                median_sorted(&values),
                values.iter().sum::<f64>() / n as f64,
                values[0],
                values[n - 1],
            )
        };
        Self { metric: metric.to_string(), unit, frames: n, median, mean, min, max }
    }
}

pub fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    median_sorted(&v)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub timings: Vec<FrameTiming>,
}

impl BenchReport {
    pub fn rows(&self) -> Vec<SummaryRow> {
        let mut rows: Vec<SummaryRow> = STAGES
            .iter()
            .map(|s| SummaryRow::of(s, "ms", self.timings.iter().map(|t| ms(t.stage(s))).collect()))
            .collect();
        let count = |f: fn(&FrameTiming) -> usize| self.timings.iter().map(|t| f(t) as f64).collect();
        rows.push(SummaryRow::of("anchors", "count", count(|t| t.anchors)));
        rows.push(SummaryRow::of("proposals_sis", "count", count(|t| t.proposals_sis)));
        rows.push(SummaryRow::of("proposals_cpf", "count", count(|t| t.proposals_cpf)));
        rows.push(SummaryRow::of("detections", "count", count(|t| t.detections)));
        rows
    }

    pub fn median_ms(&self, stage: &str) -> f64 {
        median(&self.timings.iter().map(|t| ms(t.stage(stage))).collect::<Vec<_>>())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        write_rows(out, &self.rows())
    }
}

pub fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Times every frame `repeats` times (at least once). Each repeat adds one
/// sample per stage, so medians are over `frames x repeats` runs.
pub fn run(det: &Detector, frames: &[(u64, DepthImage)], repeats: usize) -> Result<BenchReport> {
    let mut timings = Vec::with_capacity(frames.len() * repeats.max(1));
    for _ in 0..repeats.max(1) {
        for (id, depth) in frames {
            timings.push(time_frame(det, *id, depth)?);
        }
    }
    Ok(BenchReport { timings })
}

/// SIS + CPF cost at one anchor stride.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct StrideRow {
    pub stride: usize,
    /// Lattice anchors per frame.
    pub anchors: usize,
    /// Proposals per frame after CPF (mean).
    pub proposals: f64,
    /// Median over frames and repeats of SIS + CPF filtering, milliseconds.
    /// Excludes the integral image, whose cost does not depend on the stride.
    pub sis_cpf_ms: f64,
}

/// Measures SIS + CPF at each stride with GPD off, so only the anchor count
/// changes between rows.
pub fn stride_scaling(
    det: &Detector,
    frames: &[(u64, DepthImage)],
    strides: &[usize],
    repeats: usize,
) -> Vec<StrideRow> {
    let k = &det.intrinsics;
    let integrals: Vec<_> = frames.iter().map(|(_, d)| build_validity_integral(d)).collect();
    strides
        .iter()
        .map(|&stride| {
            let cfg = RoiConfig { stride, ..det.config.roi.clone() };
            let mut times = Vec::new();
            let mut kept = 0usize;
            for _ in 0..repeats.max(1) {
                kept = 0;
                for ((_, depth), integral) in frames.iter().zip(&integrals) {
                    let (p, t) = timed(|| {
                        let sis = generate_proposals(depth, None, k, &cfg);
                        filter_proposals(&sis, integral, &cfg)
                    });
                    kept += p.len();
                    times.push(ms(t));
                }
            }
            StrideRow {
                stride,
                anchors: frames.first().map_or(0, |(_, d)| lattice_size(d, &cfg)),
                proposals: kept as f64 / frames.len().max(1) as f64,
                sis_cpf_ms: if times.is_empty() { 0.0 } else { median(&times) },
            }
        })
        .collect()
}
