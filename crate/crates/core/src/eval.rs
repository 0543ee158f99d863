//! Detection-vs-annotation matching and precision/recall evaluation.
//!
//! Matching is greedy in descending score order with one-to-one consumption
//! of care annotations at `iou_min` overlap. A detection that re-detects an
//! already matched person counts as a false positive. A detection whose best
//! overlap is a don't-care region is ignored (no reward, no penalty).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{iou, ScoredProposal};
use crate::geometry::Rect;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub frame: u64,
    pub x: i32,
    pub y: i32,
    pub side: u32,
    #[serde(default = "default_care")]
    pub care: bool,
}

fn default_care() -> bool {
    true
}

impl Annotation {
    pub fn rect(&self) -> Rect {
        Rect::square(self.x, self.y, self.side)
    }
}

/// One line of a detections file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: u64,
    pub x: i32,
    pub y: i32,
    pub side: u32,
    pub p_color: f64,
    pub p_depth: f64,
    pub p_fused: f64,
}

impl Detection {
    pub fn new(frame: u64, s: &ScoredProposal) -> Self {
        Self {
            frame,
            x: s.proposal.x,
            y: s.proposal.y,
            side: s.proposal.side,
            p_color: s.p_color,
            p_depth: s.p_depth,
            p_fused: s.p_fused,
        }
    }

    pub fn rect(&self) -> Rect {
        Rect::square(self.x, self.y, self.side)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ignored: usize,
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.ignored += o.ignored;
    }
}

fn by_score(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.p_fused
        .total_cmp(&a.p_fused)
        .then(a.y.cmp(&b.y))
        .then(a.x.cmp(&b.x))
        .then(a.side.cmp(&b.side))
}

/// Matches one frame's detections against its annotations. Detections are
/// processed by descending score (ties: smaller y, then smaller x).
pub fn match_frame(dets: &[Detection], anns: &[Annotation], iou_min: f64) -> MatchCounts {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| by_score(a, b));
    let ann_rects: Vec<Rect> = anns.iter().map(Annotation::rect).collect();
    let mut consumed = vec![false; anns.len()];
    let mut counts = MatchCounts::default();

    for det in order {
        let r = det.rect();
        let mut best_free: Option<(usize, f64)> = None;
        let mut best_other: Option<(usize, f64)> = None;
        for (i, ann) in anns.iter().enumerate() {
            let o = iou(&r, &ann_rects[i]);
            if o < iou_min {
                continue;
            }
            let slot = if ann.care && !consumed[i] {
                &mut best_free
            } else {
                &mut best_other
            };
            if slot.is_none_or(|(_, b)| o > b) {
                *slot = Some((i, o));
            }
        }
        match (best_free, best_other) {
            (Some((i, _)), _) => {
                consumed[i] = true;
                counts.tp += 1;
            }
            (None, Some((i, _))) if !anns[i].care => counts.ignored += 1,
            _ => counts.fp += 1,
        }
    }
    counts.fn_ = anns
        .iter()
        .zip(&consumed)
        .filter(|(a, &c)| a.care && !c)
        .count();
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl PrPoint {
    /// Precision is 1 when nothing is detected; recall is 1 when there is
    /// nothing to find.
    fn from_counts(threshold: f64, c: MatchCounts) -> Self {
        let precision = if c.tp + c.fp > 0 {
            c.tp as f64 / (c.tp + c.fp) as f64
        } else {
            1.0
        };
        let recall = if c.tp + c.fn_ > 0 {
            c.tp as f64 / (c.tp + c.fn_) as f64
        } else {
            1.0
        };
        Self {
            threshold,
            precision,
            recall,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
        }
    }
}

struct FrameData<'a> {
    dets: Vec<&'a Detection>,
    anns: Vec<Annotation>,
}

fn group_frames<'a>(dets: &'a [Detection], anns: &[Annotation]) -> BTreeMap<u64, FrameData<'a>> {
    let mut frames: BTreeMap<u64, FrameData<'a>> = BTreeMap::new();
    for d in dets {
        frames
            .entry(d.frame)
            .or_insert_with(|| FrameData { dets: Vec::new(), anns: Vec::new() })
            .dets
            .push(d);
    }
    for a in anns {
        frames
            .entry(a.frame)
            .or_insert_with(|| FrameData { dets: Vec::new(), anns: Vec::new() })
            .anns
            .push(*a);
    }
    frames
}

/// Distinct detection scores, descending: the thresholds at which the curve
/// changes.
pub fn score_thresholds(dets: &[Detection]) -> Vec<f64> {
    let mut t: Vec<f64> = dets.iter().map(|d| d.p_fused).collect();
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t
}

/// Total counts over all frames for the detections scoring at least
/// `threshold`.
pub fn counts_at(dets: &[Detection], anns: &[Annotation], threshold: f64, iou_min: f64) -> MatchCounts {
    let mut total = MatchCounts::default();
    for frame in group_frames(dets, anns).values() {
        let kept: Vec<Detection> = frame
            .dets
            .iter()
            .filter(|d| d.p_fused >= threshold)
            .map(|d| **d)
            .collect();
        total += match_frame(&kept, &frame.anns, iou_min);
    }
    total
}

/// One precision/recall point per threshold (thresholds descending).
pub fn pr_curve(dets: &[Detection], anns: &[Annotation], thresholds: &[f64], iou_min: f64) -> Vec<PrPoint> {
    let frames = group_frames(dets, anns);
    thresholds
        .iter()
        .map(|&t| {
            let mut total = MatchCounts::default();
            let mut kept = Vec::new();
            for frame in frames.values() {
                kept.clear();
                kept.extend(frame.dets.iter().filter(|d| d.p_fused >= t).map(|d| **d));
                total += match_frame(&kept, &frame.anns, iou_min);
            }
            PrPoint::from_counts(t, total)
        })
        .collect()
}

/// Trapezoidal area under precision over recall, with the curve extended to
/// recall 0 at the first point's precision.
pub fn average_precision(curve: &[PrPoint]) -> Result<f64> {
    let first = curve.first().ok_or(Error::EmptyCurve)?;
    let mut prev = (0.0, first.precision);
    let mut area = 0.0;
    for p in curve {
        area += (p.recall - prev.0) * (p.precision + prev.1) / 2.0;
        prev = (p.recall, p.precision);
    }
    Ok(area)
}

/// Curve over the detections' own score levels and its AP. An empty
/// detection set yields AP 0 when there is anything to find.
pub fn evaluate(dets: &[Detection], anns: &[Annotation], iou_min: f64) -> (Vec<PrPoint>, f64) {
    let thresholds = score_thresholds(dets);
    let curve = pr_curve(dets, anns, &thresholds, iou_min);
    let ap = match average_precision(&curve) {
        Ok(ap) => ap,
        Err(_) => {
            if anns.iter().any(|a| a.care) {
                0.0
            } else {
                1.0
            }
        }
    };
    (curve, ap)
}
