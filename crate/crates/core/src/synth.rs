//! Synthetic depth scenes with known geometry, and an oracle scorer that
//! stands in for trained classifiers.
//!
//! Scenes are ray-cast: a level camera looks at a floor plane `y = floor`,
//! optionally a back wall `z = wall`, and upright person slabs of constant
//! depth. Ground truth for each person is the square upper-body box (the top
//! `width x width` part of the slab).

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::depthimage::DepthImage;
use crate::error::{Error, Result};
use crate::eval::Annotation;
use crate::fusion::{iou, Scorer};
use crate::geometry::{CameraIntrinsics, GroundPlane, Rect};
use crate::roi::Proposal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonSpec {
    /// Lateral position of the slab center, meters.
    pub x_m: f64,
    /// Depth of the slab, meters.
    pub z_m: f64,
    pub width_m: f64,
    pub height_m: f64,
    #[serde(default = "yes")]
    pub care: bool,
}

fn yes() -> bool {
    true
}

fn default_max_range() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub camera: CameraIntrinsics,
    /// Floor height below the camera center, meters (y axis points down).
    pub floor_height_m: f64,
    #[serde(default)]
    pub persons: Vec<PersonSpec>,
    /// Optional back wall at this depth.
    #[serde(default)]
    pub wall_z_m: Option<f64>,
    /// Surfaces beyond this depth read as invalid.
    #[serde(default = "default_max_range")]
    pub max_range_m: f64,
    #[serde(default)]
    pub depth_noise_sigma_mm: f64,
    #[serde(default)]
    pub invalid_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn empty_room(width: usize, height: usize, camera: CameraIntrinsics, floor_height_m: f64) -> Self {
        Self {
            width,
            height,
            camera,
            floor_height_m,
            persons: Vec::new(),
            wall_z_m: None,
            max_range_m: default_max_range(),
            depth_noise_sigma_mm: 0.0,
            invalid_fraction: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate(self.width, self.height)?;
        if !(self.floor_height_m > 0.0) {
            return Err(Error::InvalidParameter("floor must be below the camera (floor_height_m > 0)".into()));
        }
        if !(0.0..=1.0).contains(&self.invalid_fraction) {
            return Err(Error::InvalidParameter(format!(
                "invalid_fraction must be in [0, 1], got {}",
                self.invalid_fraction
            )));
        }
        if !(self.depth_noise_sigma_mm >= 0.0) || !(self.max_range_m > 0.0) {
            return Err(Error::InvalidParameter("noise sigma and max range must be non-negative".into()));
        }
        if self.wall_z_m.is_some_and(|z| !(z > 0.0)) {
            return Err(Error::InvalidParameter("wall must be in front of the camera".into()));
        }
        for p in &self.persons {
            if !(p.z_m > 0.0 && p.width_m > 0.0 && p.height_m > 0.0) {
                return Err(Error::InvalidParameter(format!("person {p:?} must be in front of the camera with positive size")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        spec.validate().map_err(|e| Error::format(path, e))?;
        Ok(spec)
    }

    pub fn ground_plane(&self) -> GroundPlane {
        GroundPlane::horizontal(self.floor_height_m)
    }

    /// Upper-body box of `person` in pixels.
    pub fn upper_body_box(&self, person: &PersonSpec) -> Rect {
        let k = &self.camera;
        let z = person.z_m;
        let side = (k.fx * person.width_m / z).round().max(1.0) as u32;
        let left = k.fx * (person.x_m - person.width_m / 2.0) / z + k.cx;
        let top = k.fy * (self.floor_height_m - person.height_m) / z + k.cy;
        Rect::square(left.round() as i32, top.round() as i32, side)
    }
}

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub depth: DepthImage,
    pub annotations: Vec<Annotation>,
    pub plane: GroundPlane,
}

impl RenderedScene {
    pub fn with_frame(mut self, frame: u64) -> Self {
        for a in &mut self.annotations {
            a.frame = frame;
        }
        self
    }
}

/// Ray-casts `spec`, then applies depth noise and random dropouts. Annotations
/// carry frame id 0.
pub fn render(spec: &SceneSpec) -> Result<RenderedScene> {
    spec.validate()?;
    let k = &spec.camera;
    let (w, h) = (spec.width, spec.height);
    let mut data = vec![0f32; w * h];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = (spec.depth_noise_sigma_mm > 0.0)
        .then(|| Normal::new(0.0, spec.depth_noise_sigma_mm).expect("finite sigma"));

    for v in 0..h {
        let dy = (v as f64 - k.cy) / k.fy;
        for u in 0..w {
            let dx = (u as f64 - k.cx) / k.fx;
            let mut z = f64::INFINITY;
            if dy > 0.0 {
                z = spec.floor_height_m / dy;
            }
            if let Some(wall) = spec.wall_z_m {
                z = z.min(wall);
            }
            for p in &spec.persons {
                if p.z_m >= z {
                    continue;
                }
                let x = dx * p.z_m;
                let y = dy * p.z_m;
                if (x - p.x_m).abs() <= p.width_m / 2.0
                    && y >= spec.floor_height_m - p.height_m
                    && y <= spec.floor_height_m
                {
                    z = p.z_m;
                }
            }
            let mut d = if z.is_finite() && z <= spec.max_range_m {
                z * 1000.0
            } else {
                0.0
            };
            if let Some(n) = &noise {
                let e: f64 = n.sample(&mut rng);
                if d > 0.0 {
                    d = (d + e).max(1.0);
                }
            }
            if spec.invalid_fraction > 0.0 && rng.gen::<f64>() < spec.invalid_fraction {
                d = 0.0;
            }
            data[v * w + u] = d as f32;
        }
    }

    let annotations = spec
        .persons
        .iter()
        .filter_map(|p| {
            let r = spec.upper_body_box(p);
            r.clip(w, h).map(|_| Annotation {
                frame: 0,
                x: r.x,
                y: r.y,
                side: r.width,
                care: p.care,
            })
        })
        .collect();

    Ok(RenderedScene {
        depth: DepthImage::new(w, h, data)?,
        annotations,
        plane: spec.ground_plane(),
    })
}

/// Draws random scenes: 1-3 people standing apart, optional back wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSampler {
    pub width: usize,
    pub height: usize,
    pub camera: CameraIntrinsics,
    pub floor_height_m: (f64, f64),
    pub persons: (usize, usize),
    pub person_depth_m: (f64, f64),
    pub person_width_m: (f64, f64),
    pub person_height_m: (f64, f64),
    /// Probability that the scene has a back wall, placed in `wall_depth_m`.
    pub wall_probability: f64,
    pub wall_depth_m: (f64, f64),
    pub depth_noise_sigma_mm: f64,
    pub invalid_fraction: f64,
}

impl Default for SceneSampler {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            camera: CameraIntrinsics::kinect_vga(),
            floor_height_m: (1.1, 1.6),
            persons: (1, 3),
            person_depth_m: (1.5, 5.0),
            person_width_m: (0.6, 0.6),
            person_height_m: (1.6, 1.9),
            wall_probability: 0.5,
            wall_depth_m: (6.5, 9.0),
            depth_noise_sigma_mm: 0.0,
            invalid_fraction: 0.0,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

impl SceneSampler {
    pub fn noisy(sigma_mm: f64, invalid_fraction: f64) -> Self {
        Self {
            depth_noise_sigma_mm: sigma_mm,
            invalid_fraction,
            ..Self::default()
        }
    }

    /// Scene for `seed`. People do not overlap in the image and stay fully
    /// inside it horizontally.
    pub fn sample(&self, seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE7_E5EE_D000_0000);
        let floor_height_m = uniform(&mut rng, self.floor_height_m);
        let wanted = rng.gen_range(self.persons.0..=self.persons.1.max(self.persons.0));
        let k = self.camera;
        let margin_px = 8.0;
        let mut spans: Vec<(f64, f64)> = Vec::new();
        let mut persons = Vec::new();
        for _ in 0..200 {
            if persons.len() == wanted {
                break;
            }
            let z = uniform(&mut rng, self.person_depth_m);
            let width = uniform(&mut rng, self.person_width_m);
            let height = uniform(&mut rng, self.person_height_m);
            let half_px = k.fx * width / z / 2.0;
            let lo = -(k.cx - half_px - margin_px) * z / k.fx;
            let hi = (self.width as f64 - 1.0 - k.cx - half_px - margin_px) * z / k.fx;
            if hi <= lo {
                continue;
            }
            let x = rng.gen_range(lo..hi);
            let center = k.fx * x / z + k.cx;
            let span = (center - half_px - margin_px, center + half_px + margin_px);
            if spans.iter().any(|s| span.0 < s.1 && s.0 < span.1) {
                continue;
            }
            spans.push(span);
            persons.push(PersonSpec {
                x_m: x,
                z_m: z,
                width_m: width,
                height_m: height,
                care: true,
            });
        }
        let wall_z_m = (rng.gen::<f64>() < self.wall_probability).then(|| uniform(&mut rng, self.wall_depth_m));
        SceneSpec {
            width: self.width,
            height: self.height,
            camera: k,
            floor_height_m,
            persons,
            wall_z_m,
            max_range_m: default_max_range(),
            depth_noise_sigma_mm: self.depth_noise_sigma_mm,
            invalid_fraction: self.invalid_fraction,
            seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1),
        }
    }
}

/// Noise of an oracle scorer, applied on the logit scale.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleNoise {
    /// Constant logit noise standard deviation.
    pub logit_sigma: f64,
    /// Extra logit noise per meter of proposal depth.
    pub range_sigma_per_m: f64,
    /// Logit shift per meter beyond 1 m; models a sensor degrading with range.
    pub range_penalty_per_m: f64,
    /// Probability that the output is replaced by its complement.
    pub flip_prob: f64,
}

impl OracleNoise {
    pub const NONE: OracleNoise = OracleNoise {
        logit_sigma: 0.0,
        range_sigma_per_m: 0.0,
        range_penalty_per_m: 0.0,
        flip_prob: 0.0,
    };

    /// Color classifier: moderate noise, independent of range.
    pub fn color_profile() -> Self {
        Self {
            logit_sigma: 2.0,
            ..Self::NONE
        }
    }

    /// Depth classifier: sharp up close, increasingly unreliable with range.
    pub fn depth_profile() -> Self {
        Self {
            logit_sigma: 0.0,
            range_sigma_per_m: 0.5,
            range_penalty_per_m: 0.15,
            flip_prob: 0.0,
        }
    }
}

/// Scores a proposal by its best overlap with the ground-truth boxes,
/// through a logistic curve plus seeded noise. Noise depends only on the
/// seed, the frame and the window, never on query order.
#[derive(Debug, Clone)]
pub struct OracleScorer {
    boxes: HashMap<u64, Vec<Rect>>,
    noise: OracleNoise,
    seed: u64,
    /// Logistic slope over IoU.
    pub gain: f64,
    /// IoU at which the noise-free score is 0.5.
    pub center: f64,
}

pub const ORACLE_GAIN: f64 = 12.0;
pub const ORACLE_CENTER: f64 = 0.5;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl OracleScorer {
    pub fn new(annotations: &[Annotation], noise: OracleNoise, seed: u64) -> Self {
        let mut boxes: HashMap<u64, Vec<Rect>> = HashMap::new();
        for a in annotations {
            boxes.entry(a.frame).or_default().push(a.rect());
        }
        Self {
            boxes,
            noise,
            seed,
            gain: ORACLE_GAIN,
            center: ORACLE_CENTER,
        }
    }

    pub fn max_iou(&self, frame: u64, p: &Proposal) -> f64 {
        let r = p.rect();
        self.boxes
            .get(&frame)
            .map_or(0.0, |v| v.iter().map(|b| iou(&r, b)).fold(0.0, f64::max))
    }

    fn mean_logit(&self, overlap: f64, depth_m: f64) -> f64 {
        self.gain * (overlap - self.center) - self.noise.range_penalty_per_m * (depth_m - 1.0).max(0.0)
    }

    /// Noise-free score for a given overlap and proposal depth.
    pub fn expected_score(&self, overlap: f64, depth_m: f64) -> f64 {
        sigmoid(self.mean_logit(overlap, depth_m))
    }

    fn rng_for(&self, frame: u64, p: &Proposal) -> ChaCha8Rng {
        let mut h = splitmix(self.seed);
        for v in [frame, p.x as u32 as u64, p.y as u32 as u64, p.side as u64] {
            h = splitmix(h ^ v);
        }
        ChaCha8Rng::seed_from_u64(h)
    }
}

impl Scorer for OracleScorer {
    fn score(&self, frame: u64, p: &Proposal) -> Result<f64> {
        let mut logit = self.mean_logit(self.max_iou(frame, p), p.depth_m);
        let sigma = self.noise.logit_sigma + self.noise.range_sigma_per_m * p.depth_m;
        let mut rng = self.rng_for(frame, p);
        if sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            logit += sigma * z;
        }
        let mut prob = sigmoid(logit);
        if self.noise.flip_prob > 0.0 && rng.gen::<f64>() < self.noise.flip_prob {
            prob = 1.0 - prob;
        }
        Ok(prob)
    }
}

pub fn oracle_scorer(annotations: &[Annotation], noise: OracleNoise, seed: u64) -> OracleScorer {
    OracleScorer::new(annotations, noise, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{back_project, plane_distance};

    fn room() -> SceneSpec {
        SceneSpec::empty_room(640, 480, CameraIntrinsics::new(525.0, 525.0, 320.0, 240.0), 1.4)
    }

    #[test]
    fn empty_floor_back_projects_onto_plane() {
        let spec = room();
        let scene = render(&spec).unwrap();
        let mut checked = 0;
        for v in 240..480 {
            for u in 0..640 {
                let d = scene.depth.get(u, v);
                if d > 0.0 {
                    let p = back_project(u as f64, v as f64, d as f64, &spec.camera).unwrap();
                    assert!(plane_distance(p, &scene.plane) < 1e-6);
                    checked += 1;
                }
            }
        }
        assert!(checked > 100_000);
        assert!(scene.annotations.is_empty());
    }

    #[test]
    fn annotation_side_matches_projection() {
        let mut spec = room();
        spec.persons.push(PersonSpec { x_m: 0.0, z_m: 3.0, width_m: 0.6, height_m: 1.75, care: true });
        let scene = render(&spec).unwrap();
        assert_eq!(scene.annotations.len(), 1);
        assert!((scene.annotations[0].side as i64 - 105).abs() <= 1);
        // Box center sits on the person's slab at the person's depth.
        let a = scene.annotations[0];
        let c = scene.depth.get((a.x + a.side as i32 / 2) as usize, (a.y + a.side as i32 / 2) as usize);
        assert_eq!(c, 3000.0);
    }

    #[test]
    fn dropout_fraction() {
        let mut spec = room();
        spec.wall_z_m = Some(8.0);
        spec.invalid_fraction = 0.5;
        spec.seed = 11;
        let scene = render(&spec).unwrap();
        let frac = scene.depth.valid_count() as f64 / (640.0 * 480.0);
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn rendering_is_deterministic() {
        let sampler = SceneSampler::noisy(10.0, 0.1);
        let spec = sampler.sample(5);
        let a = render(&spec).unwrap();
        let b = render(&spec).unwrap();
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.annotations, b.annotations);
        assert_eq!(sampler.sample(5), spec);
    }

    #[test]
    fn sampler_keeps_people_apart() {
        let sampler = SceneSampler::default();
        for seed in 0..30 {
            let spec = sampler.sample(seed);
            assert!((1..=3).contains(&spec.persons.len()));
            let boxes: Vec<Rect> = spec.persons.iter().map(|p| spec.upper_body_box(p)).collect();
            for (i, a) in boxes.iter().enumerate() {
                assert!(a.x >= 0 && a.right() <= 640);
                for b in &boxes[i + 1..] {
                    assert_eq!(a.intersection_area(b), 0);
                }
            }
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = room();
        s.floor_height_m = -1.0;
        assert!(render(&s).is_err());
        let mut s = room();
        s.persons.push(PersonSpec { x_m: 0.0, z_m: -2.0, width_m: 0.6, height_m: 1.7, care: true });
        assert!(s.validate().is_err());
    }

    fn anns() -> Vec<Annotation> {
        vec![Annotation { frame: 0, x: 100, y: 50, side: 105, care: true }]
    }

    #[test]
    fn oracle_saturates_without_noise() {
        let o = oracle_scorer(&anns(), OracleNoise::NONE, 1);
        let hit = Proposal { x: 100, y: 50, side: 105, depth_m: 3.0 };
        let miss = Proposal { x: 400, y: 300, side: 105, depth_m: 3.0 };
        assert!(o.score(0, &hit).unwrap() >= 0.95);
        assert!(o.score(0, &miss).unwrap() <= 0.05);
        assert!(o.score(7, &hit).unwrap() <= 0.05);
    }

    #[test]
    fn depth_profile_degrades_with_range() {
        let o = oracle_scorer(&anns(), OracleNoise::depth_profile(), 1);
        for overlap in [0.0, 0.3, 0.5, 0.8, 1.0] {
            assert!(o.expected_score(overlap, 7.0) < o.expected_score(overlap, 1.0));
        }
        let c = oracle_scorer(&anns(), OracleNoise::color_profile(), 1);
        assert_eq!(c.expected_score(0.8, 7.0), c.expected_score(0.8, 1.0));
    }

    #[test]
    fn oracle_noise_is_query_order_independent() {
        let o = oracle_scorer(&anns(), OracleNoise::color_profile(), 9);
        let p = Proposal { x: 90, y: 40, side: 100, depth_m: 2.5 };
        let q = Proposal { x: 10, y: 40, side: 100, depth_m: 2.5 };
        let first = o.score(0, &p).unwrap();
        o.score(0, &q).unwrap();
        assert_eq!(o.score(0, &p).unwrap(), first);
        let other_seed = oracle_scorer(&anns(), OracleNoise::color_profile(), 10);
        assert_ne!(other_seed.score(0, &p).unwrap(), first);
        let v = o.score(0, &q).unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}
