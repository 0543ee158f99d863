//! Pinhole camera model, planes and axis-aligned pixel boxes.
//!
//! Camera frame: x right, y down, z forward. A level camera therefore sees
//! the floor as a plane with normal close to `(0, 1, 0)`.

use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Focal lengths and principal point, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    /// Typical structured-light sensor at 640x480.
    pub fn kinect_vga() -> Self {
        Self::new(525.0, 525.0, 319.5, 239.5)
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        let inside = |c: f64, n: usize| c >= 0.0 && c < n as f64;
        if !inside(self.cx, width) || !inside(self.cy, height) {
            return Err(Error::InvalidParameter(format!(
                "principal point ({}, {}) outside a {}x{} image",
                self.cx, self.cy, width, height
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let k: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(Error::format(path, "fx and fy must be positive"));
        }
        Ok(k)
    }

    /// Pixel coordinates of a camera-frame point.
    pub fn project(&self, p: Point3) -> (f64, f64) {
        (p.x * self.fx / p.z + self.cx, p.y * self.fy / p.z + self.cy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    fn vec(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// Plane `normal . p + offset = 0` with the statistics of the inlier set it
/// was fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub normal: [f64; 3],
    pub offset: f64,
    pub inlier_count: usize,
    pub inlier_rms: f64,
}

impl GroundPlane {
    /// Plane with the given (not necessarily unit) normal; no inlier statistics.
    pub fn from_normal_offset(normal: [f64; 3], offset: f64) -> Self {
        let n = Vector3::from(normal);
        let len = n.norm();
        Self {
            normal: (n / len).into(),
            offset: offset / len,
            inlier_count: 0,
            inlier_rms: 0.0,
        }
    }

    /// Horizontal plane `y = height` in the camera frame.
    pub fn horizontal(height: f64) -> Self {
        Self::from_normal_offset([0.0, 1.0, 0.0], -height)
    }

    pub fn signed_distance(&self, p: Point3) -> f64 {
        self.normal[0] * p.x + self.normal[1] * p.y + self.normal[2] * p.z + self.offset
    }

    /// Angle between the two plane normals in degrees, ignoring orientation.
    pub fn angle_to(&self, other: &GroundPlane) -> f64 {
        let dot = Vector3::from(self.normal).dot(&Vector3::from(other.normal));
        dot.abs().min(1.0).acos().to_degrees()
    }

    /// Offset difference after aligning the normals' orientation.
    pub fn offset_error(&self, other: &GroundPlane) -> f64 {
        let dot = Vector3::from(self.normal).dot(&Vector3::from(other.normal));
        let other_offset = if dot < 0.0 { -other.offset } else { other.offset };
        (self.offset - other_offset).abs()
    }
}

/// Axis-aligned pixel rectangle; `x`, `y` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: i32,
    pub y: i32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub const fn new(x: i32, y: i32, width: u32, height: u32) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub const fn square(x: i32, y: i32, side: u32) -> Self {
        Self::new(x, y, side, side)
    }

    pub fn right(&self) -> i64 {
        self.x as i64 + self.width as i64
    }

    pub fn bottom(&self) -> i64 {
        self.y as i64 + self.height as i64
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn intersection_area(&self, other: &Rect) -> u64 {
        let w = self.right().min(other.right()) - (self.x.max(other.x) as i64);
        let h = self.bottom().min(other.bottom()) - (self.y.max(other.y) as i64);
        if w <= 0 || h <= 0 {
            0
        } else {
            (w * h) as u64
        }
    }

    /// Intersection with `[0, width) x [0, height)` as half-open bounds
    /// `(x0, y0, x1, y1)`, or `None` when empty.
    pub fn clip(&self, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
        let x0 = (self.x as i64).clamp(0, width as i64);
        let y0 = (self.y as i64).clamp(0, height as i64);
        let x1 = self.right().clamp(0, width as i64);
        let y1 = self.bottom().clamp(0, height as i64);
        (x1 > x0 && y1 > y0).then_some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
    }
}

/// Back-projects pixel `(u, v)` with depth in millimeters to the camera frame
/// (meters).
pub fn back_project(u: f64, v: f64, depth_mm: f64, k: &CameraIntrinsics) -> Result<Point3> {
    if !(depth_mm > 0.0) {
        return Err(Error::InvalidDepth { u, v });
    }
    let z = depth_mm / 1000.0;
    Ok(Point3::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z))
}

pub fn plane_distance(p: Point3, plane: &GroundPlane) -> f64 {
    plane.signed_distance(p).abs()
}

fn canonical_sign(n: Vector3<f64>) -> f64 {
    // Largest-magnitude component positive; the first one wins on ties.
    let mut idx = 0;
    for i in 1..3 {
        if n[i].abs() > n[idx].abs() {
            idx = i;
        }
    }
    if n[idx] < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn plane_through(a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>) -> Option<(Vector3<f64>, f64)> {
    let ab = b - a;
    let ac = c - a;
    let n = ab.cross(&ac);
    let len = n.norm();
    if len <= 1e-12 * (ab.norm_squared() + ac.norm_squared()) || len == 0.0 {
        return None;
    }
    let n = n / len;
    Some((n, -n.dot(&a)))
}

fn count_inliers(points: &[Point3], normal: &Vector3<f64>, offset: f64, tol: f64) -> usize {
    points
        .iter()
        .filter(|p| (normal.dot(&p.vec()) + offset).abs() <= tol)
        .count()
}

/// Orthogonal least-squares plane: normal is the eigenvector of the smallest
/// eigenvalue of the scatter matrix.
fn least_squares_plane(points: &[Point3]) -> Option<(Vector3<f64>, f64)> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.vec()) / n;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p.vec() - centroid;
        scatter += d * d.transpose();
    }
    let eig = SymmetricEigen::new(scatter / n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    // A rank-deficient spread (collinear points) has two null directions.
    if eig.eigenvalues[order[1]] <= 1e-18 * eig.eigenvalues[order[2]].max(f64::MIN_POSITIVE) {
        return None;
    }
    let normal: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned().normalize();
    Some((normal, -normal.dot(&centroid)))
}

/// RANSAC plane fit: `iterations` exact three-point hypotheses scored by
/// inlier count at `inlier_tol`, then a least-squares refit on the winning
/// inliers. Deterministic for a given `seed`.
pub fn fit_plane_ransac(
    points: &[Point3],
    iterations: usize,
    inlier_tol: f64,
    seed: u64,
) -> Result<GroundPlane> {
    if points.len() < 3 {
        return Err(Error::NoPlane("fewer than 3 points"));
    }
    if !(inlier_tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "inlier tolerance must be positive, got {inlier_tol}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.len();
    let mut best: Option<(Vector3<f64>, f64, usize)> = None;
    for _ in 0..iterations {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.gen_range(0..n - 2);
        for taken in [i.min(j), i.max(j)] {
            if k >= taken {
                k += 1;
            }
        }
        let Some((normal, offset)) = plane_through(points[i].vec(), points[j].vec(), points[k].vec())
        else {
            continue;
        };
        let count = count_inliers(points, &normal, offset, inlier_tol);
        if best.is_none_or(|(_, _, c)| count > c) {
            best = Some((normal, offset, count));
        }
    }
    let (mut normal, mut offset, hyp_count) = match best {
        Some(b) => b,
        // Every sample was degenerate; decide from the whole set.
        None => {
            let (normal, offset) =
                least_squares_plane(points).ok_or(Error::NoPlane("points are collinear"))?;
            let count = count_inliers(points, &normal, offset, inlier_tol);
            (normal, offset, count)
        }
    };

    let inliers: Vec<Point3> = points
        .iter()
        .copied()
        .filter(|p| (normal.dot(&p.vec()) + offset).abs() <= inlier_tol)
        .collect();
    if let Some((rn, ro)) = least_squares_plane(&inliers) {
        if count_inliers(points, &rn, ro, inlier_tol) >= hyp_count {
            normal = rn;
            offset = ro;
        }
    }

    let sign = canonical_sign(normal);
    normal *= sign;
    offset *= sign;

    let mut count = 0usize;
    let mut sq = 0.0;
    for p in points {
        let d = normal.dot(&p.vec()) + offset;
        if d.abs() <= inlier_tol {
            count += 1;
            sq += d * d;
        }
    }
    if count < 3 {
        return Err(Error::NoPlane("fewer than 3 inliers"));
    }
    Ok(GroundPlane {
        normal: normal.into(),
        offset,
        inlier_count: count,
        inlier_rms: (sq / count as f64).sqrt(),
    })
}
