//! End-to-end per-frame detection and its configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::depthimage::{build_validity_integral, fill_holes, DepthImage, NormalizeRange};
use crate::encoding::{encode_with, EncodingScheme, RgbImage};
use crate::error::{Error, Result};
use crate::eval::{Annotation, Detection};
use crate::fusion::{
    nms, score_frame, select_score, ConstantScorer, FileScorer, FusionWeightParams, NmsParams, ScoreSource,
    ScoredProposal, Scorer,
};
use crate::geometry::{CameraIntrinsics, GroundPlane};
use crate::roi::{detect_ground_plane, filter_proposals, generate_proposals, Proposal, RoiConfig, Stages};
use crate::synth::{OracleNoise, OracleScorer};

/// The default configuration file, embedded.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../config/default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoleFillConfig {
    pub enabled: bool,
    pub kernel_radius: usize,
    pub max_passes: usize,
}

impl Default for HoleFillConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            kernel_radius: 2,
            max_passes: 3,
        }
    }
}

/// Where a modality's probabilities come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScorerSpec {
    /// Synthetic oracle driven by the ground-truth annotations.
    Oracle,
    /// External per-proposal scores, JSON lines.
    File(PathBuf),
    Constant(f64),
}

impl FromStr for ScorerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "oracle" {
            return Ok(Self::Oracle);
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(Self::File(PathBuf::from(path)));
        }
        if let Some(p) = s.strip_prefix("constant:") {
            let p: f64 = p
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad constant score `{p}`")))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("constant score {p} outside [0, 1]")));
            }
            return Ok(Self::Constant(p));
        }
        Err(Error::InvalidParameter(format!(
            "unknown scorer `{s}` (expected oracle, file:PATH or constant:P)"
        )))
    }
}

impl TryFrom<String> for ScorerSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Oracle => f.write_str("oracle"),
            Self::File(p) => write!(f, "file:{}", p.display()),
            Self::Constant(p) => write!(f, "constant:{p}"),
        }
    }
}

impl From<ScorerSpec> for String {
    fn from(s: ScorerSpec) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Ground truth for the oracle scorers (JSON lines annotations).
    pub annotations: Option<PathBuf>,
    pub color: OracleNoise,
    pub depth: OracleNoise,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            annotations: None,
            color: OracleNoise::color_profile(),
            depth: OracleNoise::depth_profile(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub intrinsics: Option<PathBuf>,
    pub seed: u64,
    /// Worker threads for frame-level parallelism; 0 = all cores.
    pub jobs: usize,
    pub encoding: EncodingScheme,
    pub normalize: NormalizeRange,
    pub hole_fill: HoleFillConfig,
    pub stages: Stages,
    pub roi: RoiConfig,
    pub fusion: FusionWeightParams,
    pub nms: NmsParams,
    pub score_source: ScoreSource,
    pub color_scorer: ScorerSpec,
    pub depth_scorer: ScorerSpec,
    pub oracle: OracleConfig,
    /// Overlap needed for a detection to match an annotation.
    pub eval_iou: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            intrinsics: None,
            seed: 0,
            jobs: 1,
            encoding: EncodingScheme::Cecd,
            normalize: NormalizeRange::PerFrame,
            hole_fill: HoleFillConfig::default(),
            stages: Stages::ALL,
            roi: RoiConfig::default(),
            fusion: FusionWeightParams::default(),
            nms: NmsParams::default(),
            score_source: ScoreSource::Fused,
            color_scorer: ScorerSpec::Oracle,
            depth_scorer: ScorerSpec::Oracle,
            oracle: OracleConfig::default(),
            eval_iou: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::format(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.roi.validate()?;
        self.fusion.validate()?;
        if !(0.0..=1.0).contains(&self.nms.iou_threshold) || !(0.0..=1.0).contains(&self.nms.score_min) {
            return Err(Error::InvalidParameter("nms thresholds must be in [0, 1]".into()));
        }
        if !(self.eval_iou > 0.0 && self.eval_iou <= 1.0) {
            return Err(Error::InvalidParameter("eval_iou must be in (0, 1]".into()));
        }
        if self.hole_fill.enabled && self.hole_fill.kernel_radius == 0 {
            return Err(Error::InvalidParameter("hole_fill.kernel_radius must be at least 1".into()));
        }
        Ok(())
    }
}

fn build_scorer(
    spec: &ScorerSpec,
    annotations: Option<&[Annotation]>,
    noise: OracleNoise,
    seed: u64,
) -> Result<Box<dyn Scorer>> {
    Ok(match spec {
        ScorerSpec::Oracle => {
            let anns = annotations.ok_or_else(|| {
                Error::InvalidParameter("oracle scorer needs ground-truth annotations".into())
            })?;
            Box::new(OracleScorer::new(anns, noise, seed))
        }
        ScorerSpec::File(path) => Box::new(FileScorer::load(path)?),
        ScorerSpec::Constant(p) => Box::new(ConstantScorer(*p)),
    })
}

/// Everything one frame produces.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub frame: u64,
    pub plane: Option<GroundPlane>,
    /// Windows after ROI selection, before scoring.
    pub proposals: Vec<Proposal>,
    /// All scored windows, before NMS.
    pub scored: Vec<ScoredProposal>,
    /// Final windows after NMS.
    pub detections: Vec<ScoredProposal>,
    pub encoded: Option<RgbImage>,
}

impl FrameResult {
    pub fn detection_records(&self) -> Vec<Detection> {
        self.detections.iter().map(|d| Detection::new(self.frame, d)).collect()
    }
}

/// Configured pipeline with its two scorers.
pub struct Detector {
    pub config: PipelineConfig,
    pub intrinsics: CameraIntrinsics,
    color: Box<dyn Scorer>,
    depth: Box<dyn Scorer>,
}

impl fmt::Debug for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Detector")
            .field("config", &self.config)
            .field("intrinsics", &self.intrinsics)
            .finish_non_exhaustive()
    }
}

impl Detector {
    /// Builds the scorers named in `config`. `annotations` are required only
    /// for oracle scorers.
    pub fn new(config: PipelineConfig, intrinsics: CameraIntrinsics, annotations: Option<&[Annotation]>) -> Result<Self> {
        config.validate()?;
        let color = build_scorer(&config.color_scorer, annotations, config.oracle.color, config.seed ^ 0xC0105)?;
        let depth = build_scorer(&config.depth_scorer, annotations, config.oracle.depth, config.seed ^ 0xDE9_7400)?;
        Ok(Self::with_scorers(config, intrinsics, color, depth))
    }

    pub fn with_scorers(
        config: PipelineConfig,
        intrinsics: CameraIntrinsics,
        color: Box<dyn Scorer>,
        depth: Box<dyn Scorer>,
    ) -> Self {
        Self {
            config,
            intrinsics,
            color,
            depth,
        }
    }

    /// Per-frame RANSAC seed; independent of processing order.
    pub fn frame_seed(&self, frame: u64) -> u64 {
        self.config.seed ^ frame.wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }

    /// Hole filling as configured.
    pub fn preprocess(&self, depth: &DepthImage) -> DepthImage {
        let hf = &self.config.hole_fill;
        if hf.enabled {
            fill_holes(depth, hf.kernel_radius, hf.max_passes)
        } else {
            depth.clone()
        }
    }

    pub fn encode(&self, filled: &DepthImage) -> RgbImage {
        encode_with(filled, self.config.encoding, self.config.normalize)
    }

    /// GPD, SIS and CPF on the raw (unfilled) frame.
    pub fn select_rois(&self, frame: u64, depth: &DepthImage) -> (Option<GroundPlane>, Vec<Proposal>) {
        let cfg = &self.config;
        let k = &self.intrinsics;
        let plane = if cfg.stages.gpd {
            detect_ground_plane(depth, k, &cfg.roi, self.frame_seed(frame))
        } else {
            None
        };
        let mut proposals = generate_proposals(depth, plane.as_ref(), k, &cfg.roi);
        if cfg.stages.cpf {
            let integral = build_validity_integral(depth);
            proposals = filter_proposals(&proposals, &integral, &cfg.roi);
        }
        (plane, proposals)
    }

    pub fn score(&self, frame: u64, proposals: &[Proposal]) -> Result<Vec<ScoredProposal>> {
        let mut scored = score_frame(frame, proposals, &self.color, &self.depth, &self.config.fusion)?;
        select_score(&mut scored, self.config.score_source);
        Ok(scored)
    }

    /// Full chain for one frame: fill, encode, ROI selection, scoring, fusion
    /// and NMS.
    pub fn process(&self, frame: u64, depth: &DepthImage, keep_encoding: bool) -> Result<FrameResult> {
        let run = || -> Result<FrameResult> {
            if depth.width() == 0 || depth.height() == 0 {
                return Err(Error::InvalidParameter("empty depth frame".into()));
            }
            let filled = self.preprocess(depth);
            let encoded = keep_encoding.then(|| self.encode(&filled));
            let (plane, proposals) = self.select_rois(frame, depth);
            let scored = self.score(frame, &proposals)?;
            let nms_cfg = &self.config.nms;
            let detections = nms(&scored, nms_cfg.iou_threshold, nms_cfg.score_min);
            Ok(FrameResult {
                frame,
                plane,
                proposals,
                scored,
                detections,
                encoded,
            })
        };
        run().map_err(|e| e.in_frame(frame))
    }

    /// Processes frames on `config.jobs` threads; results are in input order.
    pub fn process_all(&self, frames: &[(u64, DepthImage)], keep_encoding: bool) -> Result<Vec<FrameResult>> {
        use rayon::prelude::*;
        let work = || {
            frames
                .par_iter()
                .map(|(id, d)| self.process(*id, d, keep_encoding))
                .collect::<Result<Vec<_>>>()
        };
        if self.config.jobs == 1 {
            return frames.iter().map(|(id, d)| self.process(*id, d, keep_encoding)).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.jobs)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        pool.install(work)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render, SceneSampler};

    #[test]
    fn default_config_file_matches_defaults() {
        let parsed = PipelineConfig::from_toml(DEFAULT_CONFIG_TOML).unwrap();
        assert_eq!(parsed, PipelineConfig::default());
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 9\n[roi]\nstride = 4\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.roi.stride, 4);
        assert_eq!(cfg.roi.min_side, 50);
        assert!(PipelineConfig::from_toml("[roi]\nstrid = 4\n").is_err());
        assert!(PipelineConfig::from_toml("stages = \"gpd,cpf\"\n").is_err());
        assert!(PipelineConfig::from_toml("[fusion]\nd_near = 7.0\n").is_err());
    }

    #[test]
    fn scorer_spec_parsing() {
        assert_eq!("oracle".parse::<ScorerSpec>().unwrap(), ScorerSpec::Oracle);
        assert_eq!("constant:0.25".parse::<ScorerSpec>().unwrap(), ScorerSpec::Constant(0.25));
        assert_eq!(
            "file:/tmp/s.jsonl".parse::<ScorerSpec>().unwrap(),
            ScorerSpec::File("/tmp/s.jsonl".into())
        );
        assert!("constant:2".parse::<ScorerSpec>().is_err());
        assert!("cnn".parse::<ScorerSpec>().is_err());
        for s in ["oracle", "constant:0.5", "file:x.jsonl"] {
            assert_eq!(s.parse::<ScorerSpec>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn oracle_without_annotations_is_rejected() {
        let err = Detector::new(PipelineConfig::default(), CameraIntrinsics::kinect_vga(), None).unwrap_err();
        assert!(err.to_string().contains("annotations"));
    }

    #[test]
    fn missing_file_score_names_the_frame() {
        let cfg = PipelineConfig {
            color_scorer: ScorerSpec::Constant(0.9),
            ..PipelineConfig::default()
        };
        let det = Detector::with_scorers(
            cfg,
            CameraIntrinsics::kinect_vga(),
            Box::new(ConstantScorer(0.9)),
            Box::new(FileScorer::default()),
        );
        let scene = render(&SceneSampler::default().sample(1)).unwrap();
        let err = det.process(42, &scene.depth, false).unwrap_err();
        assert!(matches!(err, Error::Frame { frame: 42, .. }));
        assert!(err.to_string().contains("no score for frame 42"));
    }

    #[test]
    fn parallel_frames_keep_order() {
        let sampler = SceneSampler::default();
        let scenes: Vec<_> = (0..4).map(|i| render(&sampler.sample(i)).unwrap().with_frame(i)).collect();
        let anns: Vec<Annotation> = scenes.iter().flat_map(|s| s.annotations.clone()).collect();
        let frames: Vec<(u64, DepthImage)> = scenes.into_iter().enumerate().map(|(i, s)| (i as u64, s.depth)).collect();
        let k = CameraIntrinsics::kinect_vga();
        let serial = Detector::new(PipelineConfig::default(), k, Some(&anns)).unwrap();
        let parallel = Detector::new(PipelineConfig { jobs: 3, ..PipelineConfig::default() }, k, Some(&anns)).unwrap();
        let a: Vec<Vec<Detection>> = serial.process_all(&frames, false).unwrap().iter().map(|r| r.detection_records()).collect();
        let b: Vec<Vec<Detection>> = parallel.process_all(&frames, false).unwrap().iter().map(|r| r.detection_records()).collect();
        assert_eq!(a, b);
    }
}
