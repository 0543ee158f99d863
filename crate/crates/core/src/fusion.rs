//! Per-proposal scoring, depth-adaptive color/depth fusion and non-maximum
//! suppression.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::roi::Proposal;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredProposal {
    pub proposal: Proposal,
    pub p_color: f64,
    pub p_depth: f64,
    pub p_fused: f64,
}

/// Source of per-proposal person probabilities for one modality.
pub trait Scorer: Send + Sync {
    fn score(&self, frame: u64, proposal: &Proposal) -> Result<f64>;
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn score(&self, frame: u64, proposal: &Proposal) -> Result<f64> {
        (**self).score(frame, proposal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn score(&self, _frame: u64, _proposal: &Proposal) -> Result<f64> {
        Ok(self.0.clamp(0.0, 1.0))
    }
}

/// One line of an external scores file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub frame: u64,
    pub x: i32,
    pub y: i32,
    pub side: u32,
    pub p: f64,
}

/// Scores loaded ahead of time, keyed by frame and window.
#[derive(Debug, Clone, Default)]
pub struct FileScorer {
    scores: HashMap<(u64, i32, i32, u32), f64>,
}

impl FileScorer {
    pub fn from_records(records: impl IntoIterator<Item = ScoreRecord>) -> Result<Self> {
        let mut scores = HashMap::new();
        for r in records {
            if !(0.0..=1.0).contains(&r.p) {
                return Err(Error::InvalidParameter(format!(
                    "score {} for frame {} window ({}, {}, {}) is not a probability",
                    r.p, r.frame, r.x, r.y, r.side
                )));
            }
            scores.insert((r.frame, r.x, r.y, r.side), r.p);
        }
        Ok(Self { scores })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let records: Vec<ScoreRecord> = crate::io::read_jsonl(path)?;
        Self::from_records(records).map_err(|e| Error::format(path, e))
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl Scorer for FileScorer {
    fn score(&self, frame: u64, p: &Proposal) -> Result<f64> {
        self.scores
            .get(&(frame, p.x, p.y, p.side))
            .copied()
            .ok_or(Error::MissingScore {
                frame,
                x: p.x,
                y: p.y,
                side: p.side,
            })
    }
}

/// Depth thresholds of the adaptive weight: depth only up to `d_near`, color
/// only from `d_far`, linear in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionWeightParams {
    pub d_near: f64,
    pub d_far: f64,
}

impl Default for FusionWeightParams {
    fn default() -> Self {
        Self {
            d_near: 1.0,
            d_far: 6.0,
        }
    }
}

impl FusionWeightParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_near > 0.0 && self.d_near < self.d_far) {
            return Err(Error::InvalidParameter(format!(
                "fusion weight needs 0 < d_near < d_far, got {} and {}",
                self.d_near, self.d_far
            )));
        }
        Ok(())
    }
}

/// Weight of the depth modality for a proposal at `d` meters.
pub fn weight(d: f64, params: &FusionWeightParams) -> f64 {
    if d <= params.d_near {
        1.0
    } else if d >= params.d_far {
        0.0
    } else {
        1.0 - (d - params.d_near) / (params.d_far - params.d_near)
    }
}

/// Log-linear pooling of the two posteriors, normalized over both classes:
/// `pc^(1-w) pd^w / (pc^(1-w) pd^w + (1-pc)^(1-w) (1-pd)^w)`.
pub fn fuse(p_color: f64, p_depth: f64, omega: f64) -> f64 {
    let pc = p_color.clamp(EPS, 1.0 - EPS);
    let pd = p_depth.clamp(EPS, 1.0 - EPS);
    let w = omega.clamp(0.0, 1.0);
    let pos = (1.0 - w) * pc.ln() + w * pd.ln();
    let neg = (1.0 - w) * (1.0 - pc).ln() + w * (1.0 - pd).ln();
    1.0 / (1.0 + (neg - pos).exp())
}

pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    inter as f64 / (a.area() + b.area() - inter) as f64
}

/// Descending score, then top-most, then left-most, then smaller window.
pub(crate) fn detection_order(a: &ScoredProposal, b: &ScoredProposal) -> Ordering {
    b.p_fused
        .total_cmp(&a.p_fused)
        .then(a.proposal.y.cmp(&b.proposal.y))
        .then(a.proposal.x.cmp(&b.proposal.x))
        .then(a.proposal.side.cmp(&b.proposal.side))
}

/// Greedy NMS on `p_fused`. Entries below `score_min` are dropped first; a
/// kept window suppresses every later one with IoU strictly above
/// `iou_threshold`. Output is in keep order.
pub fn nms(scored: &[ScoredProposal], iou_threshold: f64, score_min: f64) -> Vec<ScoredProposal> {
    let mut order: Vec<ScoredProposal> = scored.iter().copied().filter(|s| s.p_fused >= score_min).collect();
    order.sort_by(detection_order);
    let rects: Vec<Rect> = order.iter().map(|s| s.proposal.rect()).collect();
    let mut suppressed = vec![false; order.len()];
    let mut keep = Vec::new();
    for i in 0..order.len() {
        if suppressed[i] {
            continue;
        }
        keep.push(order[i]);
        for j in i + 1..order.len() {
            if !suppressed[j] && iou(&rects[i], &rects[j]) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsParams {
    pub iou_threshold: f64,
    pub score_min: f64,
}

impl Default for NmsParams {
    fn default() -> Self {
        Self {
            iou_threshold: 0.3,
            score_min: 0.5,
        }
    }
}

/// Scores every proposal with both modalities and fuses with the
/// proposal-depth weight.
pub fn score_frame(
    frame: u64,
    proposals: &[Proposal],
    color: &dyn Scorer,
    depth: &dyn Scorer,
    params: &FusionWeightParams,
) -> Result<Vec<ScoredProposal>> {
    proposals
        .iter()
        .map(|p| {
            let p_color = color.score(frame, p)?.clamp(0.0, 1.0);
            let p_depth = depth.score(frame, p)?.clamp(0.0, 1.0);
            let omega = weight(p.depth_m, params);
            Ok(ScoredProposal {
                proposal: *p,
                p_color,
                p_depth,
                p_fused: fuse(p_color, p_depth, omega),
            })
        })
        .collect()
}

/// Which probability drives NMS and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    #[default]
    Fused,
    Color,
    Depth,
}

impl std::str::FromStr for ScoreSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(Self::Fused),
            "color" => Ok(Self::Color),
            "depth" => Ok(Self::Depth),
            _ => Err(Error::InvalidParameter(format!(
                "unknown score source `{s}` (expected fused, color or depth)"
            ))),
        }
    }
}

/// Copies `p_color` or `p_depth` into `p_fused` for single-modality runs.
pub fn select_score(scored: &mut [ScoredProposal], source: ScoreSource) {
    for s in scored {
        s.p_fused = match source {
            ScoreSource::Fused => s.p_fused,
            ScoreSource::Color => s.p_color,
            ScoreSource::Depth => s.p_depth,
        };
    }
}
