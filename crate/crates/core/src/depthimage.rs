//! Depth raster and the per-frame raster primitives built on it.
//!
//! Depth is stored in millimeters; `0` marks a pixel without a measurement.
//! Every derived raster renders invalid pixels as `0`.

use crate::error::{Error, Result};
use crate::geometry::Rect;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "depth buffer holds {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(bad) = data.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "depth values must be finite and non-negative, found {bad}"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_millimeters(width: usize, height: usize, data: &[u16]) -> Result<Self> {
        Self::new(width, height, data.iter().map(|&d| d as f32).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, depth_mm: f32) {
        assert!(depth_mm >= 0.0 && depth_mm.is_finite());
        self.data[y * self.width + x] = depth_mm;
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.get(x, y) > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&d| d > 0.0).count()
    }

    pub fn validity_mask(&self) -> Vec<bool> {
        self.data.iter().map(|&d| d > 0.0).collect()
    }

    /// Depths rounded to whole millimeters and saturated to 16 bits.
    pub fn to_millimeters(&self) -> Vec<u16> {
        self.data
            .iter()
            .map(|&d| d.round().min(u16::MAX as f32) as u16)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "gray buffer holds {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

/// Rounds half away from zero and saturates to `0..=255`.
#[inline]
pub(crate) fn round_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Mean-filter hole filling.
///
/// Each pass replaces every invalid pixel that has at least one valid pixel in
/// its `(2r+1)^2` window with the rounded mean of those valid pixels. Passes
/// read the previous pass's raster only, so the result does not depend on
/// scan order. Stops after `max_passes` or once a pass changes nothing.
pub fn fill_holes(img: &DepthImage, kernel_radius: usize, max_passes: usize) -> DepthImage {
    let (w, h) = (img.width, img.height);
    let mut cur = img.clone();
    if w == 0 || h == 0 || kernel_radius == 0 {
        return cur;
    }
    let stride = w + 1;
    let mut sums = vec![0f64; stride * (h + 1)];
    let mut counts = vec![0u32; stride * (h + 1)];
    for _ in 0..max_passes {
        for y in 0..h {
            let mut row_sum = 0f64;
            let mut row_count = 0u32;
            for x in 0..w {
                let d = cur.data[y * w + x];
                if d > 0.0 {
                    row_sum += d as f64;
                    row_count += 1;
                }
                let i = (y + 1) * stride + x + 1;
                sums[i] = sums[i - stride] + row_sum;
                counts[i] = counts[i - stride] + row_count;
            }
        }
        let mut next = cur.data.clone();
        let mut changed = false;
        for y in 0..h {
            let y0 = y.saturating_sub(kernel_radius);
            let y1 = (y + kernel_radius + 1).min(h);
            for x in 0..w {
                if cur.data[y * w + x] > 0.0 {
                    continue;
                }
                let x0 = x.saturating_sub(kernel_radius);
                let x1 = (x + kernel_radius + 1).min(w);
                let (a, b, c, d) = (y0 * stride + x0, y0 * stride + x1, y1 * stride + x0, y1 * stride + x1);
                let n = counts[d] + counts[a] - counts[b] - counts[c];
                if n == 0 {
                    continue;
                }
                let s = sums[d] + sums[a] - sums[b] - sums[c];
                let mean = (s / n as f64).round();
                if mean > 0.0 {
                    next[y * w + x] = mean as f32;
                    changed = true;
                }
            }
        }
        cur.data = next;
        if !changed {
            break;
        }
    }
    cur
}

/// Depth range mapped onto `0..=255`.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NormalizeRange {
    /// Min and max of the frame's valid pixels.
    #[default]
    PerFrame,
    /// Fixed range in millimeters; depths outside are clamped.
    Fixed { min_mm: f32, max_mm: f32 },
}

pub fn normalize(img: &DepthImage) -> GrayImage {
    normalize_with(img, NormalizeRange::PerFrame)
}

pub fn normalize_with(img: &DepthImage, range: NormalizeRange) -> GrayImage {
    let (lo, hi) = match range {
        NormalizeRange::PerFrame => {
            let mut lo = f32::INFINITY;
            let mut hi = f32::NEG_INFINITY;
            for &d in img.data.iter().filter(|&&d| d > 0.0) {
                lo = lo.min(d);
                hi = hi.max(d);
            }
            (lo as f64, hi as f64)
        }
        NormalizeRange::Fixed { min_mm, max_mm } => (min_mm as f64, max_mm as f64),
    };
    let span = hi - lo;
    let data = img
        .data
        .iter()
        .map(|&d| {
            if d <= 0.0 || !(span > 0.0) {
                0
            } else {
                round_u8(255.0 * ((d as f64).clamp(lo, hi) - lo) / span)
            }
        })
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// 256-bin histogram equalization computed over the pixels flagged valid.
/// Invalid pixels come out as `0`. An input with no valid pixels or a single
/// occupied bin passes through unchanged.
pub fn equalize(img: &GrayImage, valid_mask: &[bool]) -> Result<GrayImage> {
    if valid_mask.len() != img.data.len() {
        return Err(Error::DimensionMismatch {
            expected: (img.width, img.height),
            actual: (valid_mask.len(), 1),
        });
    }
    let mut hist = [0u64; 256];
    for (&v, _) in img.data.iter().zip(valid_mask).filter(|(_, &m)| m) {
        hist[v as usize] += 1;
    }
    let mut cdf = [0u64; 256];
    let mut acc = 0u64;
    for (c, &n) in cdf.iter_mut().zip(hist.iter()) {
        acc += n;
        *c = acc;
    }
    let total = acc;
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    let lut: [u8; 256] = if total == cdf_min {
        std::array::from_fn(|v| v as u8)
    } else {
        let denom = (total - cdf_min) as f64;
        std::array::from_fn(|v| round_u8(255.0 * cdf[v].saturating_sub(cdf_min) as f64 / denom))
    };
    let data = img
        .data
        .iter()
        .zip(valid_mask)
        .map(|(&v, &m)| if m { lut[v as usize] } else { 0 })
        .collect();
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        data,
    })
}

/// Summed-area table of the validity mask, `(width+1) x (height+1)`, with a
/// zero first row and column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityIntegral {
    width: usize,
    height: usize,
    sums: Vec<u32>,
}

impl ValidityIntegral {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `S(x, y)`: valid pixels in `[0, x) x [0, y)`.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u32 {
        self.sums[y * (self.width + 1) + x]
    }

    /// Valid pixels in the half-open box `[x0, x1) x [y0, y1)`.
    #[inline]
    pub fn count(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> u32 {
        self.at(x1, y1) + self.at(x0, y0) - self.at(x1, y0) - self.at(x0, y1)
    }

    /// Fraction of valid pixels in `rect` clipped to the image.
    pub fn valid_fraction(&self, rect: &Rect) -> Result<f64> {
        let (x0, y0, x1, y1) = rect.clip(self.width, self.height).ok_or(Error::EmptyBox)?;
        let area = ((x1 - x0) * (y1 - y0)) as f64;
        Ok(self.count(x0, y0, x1, y1) as f64 / area)
    }
}

pub fn build_validity_integral(img: &DepthImage) -> ValidityIntegral {
    let (w, h) = (img.width, img.height);
    let stride = w + 1;
    let mut sums = vec![0u32; stride * (h + 1)];
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        let mut run = 0u32;
        let (above, below) = sums.split_at_mut((y + 1) * stride);
        let prev = &above[y * stride..];
        let cur = &mut below[..stride];
        for x in 0..w {
            run += (row[x] > 0.0) as u32;
            cur[x + 1] = prev[x + 1] + run;
        }
    }
    ValidityIntegral {
        width: w,
        height: h,
        sums,
    }
}

pub fn valid_fraction(integral: &ValidityIntegral, rect: &Rect) -> Result<f64> {
    integral.valid_fraction(rect)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(w: usize, h: usize, d: &[f32]) -> DepthImage {
        DepthImage::new(w, h, d.to_vec()).unwrap()
    }

    #[test]
    fn fill_uniform_neighbours() {
        let mut d = vec![2000.0; 9];
        d[4] = 0.0;
        let out = fill_holes(&img(3, 3, &d), 1, 1);
        assert_eq!(out.get(1, 1), 2000.0);
    }

    #[test]
    fn fill_mean_of_valid_only() {
        let d = [1000.0, 0.0, 2000.0, 0.0, 0.0, 0.0, 0.0, 3000.0, 0.0];
        let out = fill_holes(&img(3, 3, &d), 1, 1);
        assert_eq!(out.get(1, 1), 2000.0);
        // valid pixels are untouched
        assert_eq!(out.get(0, 0), 1000.0);
        assert_eq!(out.get(1, 2), 3000.0);
    }

    #[test]
    fn fill_rounds_half_away_from_zero() {
        let d = [1000.0, 1001.0, 0.0];
        let out = fill_holes(&img(3, 1, &d), 1, 1);
        assert_eq!(out.get(2, 0), 1001.0);
        let d = [1000.0, 0.0, 1001.0];
        let out = fill_holes(&img(3, 1, &d), 1, 1);
        // 1000.5 -> 1001
        assert_eq!(out.get(1, 0), 1001.0);
    }

    #[test]
    fn fill_all_invalid_unchanged() {
        let z = DepthImage::invalid(4, 3);
        assert_eq!(fill_holes(&z, 2, 2), z);
    }

    #[test]
    fn fill_passes_grow_the_filled_region() {
        let mut d = vec![0.0; 7];
        d[0] = 500.0;
        let one = fill_holes(&img(7, 1, &d), 1, 1);
        assert_eq!(one.valid_count(), 2);
        let three = fill_holes(&img(7, 1, &d), 1, 3);
        assert_eq!(three.valid_count(), 4);
        assert!(three.data().iter().take(4).all(|&v| v == 500.0));
    }

    #[test]
    fn normalize_examples() {
        let g = normalize(&img(4, 1, &[1000.0, 5000.0, 3000.0, 0.0]));
        assert_eq!(g.data, vec![0, 255, 128, 0]);
        assert_eq!(normalize(&img(2, 1, &[700.0, 700.0])).data, vec![0, 0]);
        assert_eq!(normalize(&DepthImage::invalid(3, 2)).data, vec![0; 6]);
    }

    #[test]
    fn normalize_fixed_range_clamps() {
        let range = NormalizeRange::Fixed {
            min_mm: 500.0,
            max_mm: 10_000.0,
        };
        let g = normalize_with(&img(4, 1, &[100.0, 500.0, 20_000.0, 0.0]), range);
        assert_eq!(g.data, vec![0, 0, 255, 0]);
    }

    #[test]
    fn equalize_two_levels() {
        let g = GrayImage::new(4, 1, vec![10, 20, 10, 20]).unwrap();
        let out = equalize(&g, &[true; 4]).unwrap();
        assert_eq!(out.data, vec![0, 255, 0, 255]);
    }

    #[test]
    fn equalize_uniform_histogram_is_identity() {
        let data: Vec<u8> = (0..512).map(|i| (i % 256) as u8).collect();
        let g = GrayImage::new(512, 1, data.clone()).unwrap();
        assert_eq!(equalize(&g, &[true; 512]).unwrap().data, data);
    }

    #[test]
    fn equalize_pass_through_cases() {
        let g = GrayImage::new(3, 1, vec![77, 77, 9]).unwrap();
        let out = equalize(&g, &[true, true, false]).unwrap();
        assert_eq!(out.data, vec![77, 77, 0]);
        let out = equalize(&g, &[false; 3]).unwrap();
        assert_eq!(out.data, vec![0, 0, 0]);
        assert!(equalize(&g, &[true; 2]).is_err());
    }

    #[test]
    fn equalize_ignores_invalid_pixels_in_histogram() {
        // The invalid 200 must not shift the CDF of the valid pixels.
        let g = GrayImage::new(3, 1, vec![10, 20, 200]).unwrap();
        let out = equalize(&g, &[true, true, false]).unwrap();
        assert_eq!(out.data, vec![0, 255, 0]);
    }

    #[test]
    fn integral_examples() {
        let full = build_validity_integral(&img(2, 2, &[1.0; 4]));
        assert_eq!(full.count(0, 0, 2, 2), 4);
        assert_eq!(full.valid_fraction(&Rect::square(0, 0, 2)).unwrap(), 1.0);

        let checker = img(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let s = build_validity_integral(&checker);
        assert_eq!(s.count(0, 0, 3, 3), 5);
        assert_eq!(s.count(0, 0, 2, 2), 2);
        assert_eq!(s.valid_fraction(&Rect::square(0, 0, 3)).unwrap(), 5.0 / 9.0);

        let none = build_validity_integral(&DepthImage::invalid(3, 3));
        assert_eq!(none.count(0, 0, 3, 3), 0);
        assert_eq!(none.valid_fraction(&Rect::square(0, 0, 3)).unwrap(), 0.0);
    }

    #[test]
    fn valid_fraction_clips_and_rejects_empty() {
        let s = build_validity_integral(&img(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        // Clipped to the single top-left pixel.
        assert_eq!(s.valid_fraction(&Rect::square(-3, -3, 4)).unwrap(), 1.0);
        assert!(matches!(
            s.valid_fraction(&Rect::square(5, 5, 2)),
            Err(Error::EmptyBox)
        ));
    }

    #[test]
    fn constructor_checks() {
        assert!(DepthImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(DepthImage::new(1, 1, vec![-1.0]).is_err());
        assert!(DepthImage::new(1, 1, vec![f32::NAN]).is_err());
    }

    fn depth_strategy() -> impl Strategy<Value = DepthImage> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            prop::collection::vec(prop_oneof![Just(0.0f32), 300.0f32..9000.0], w * h)
                .prop_map(move |d| DepthImage::new(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn fill_never_loses_valid_pixels(im in depth_strategy(), r in 1usize..3, passes in 0usize..4) {
            let out = fill_holes(&im, r, passes);
            prop_assert!(out.valid_count() >= im.valid_count());
            for i in 0..im.data().len() {
                if im.data()[i] > 0.0 {
                    prop_assert_eq!(out.data()[i], im.data()[i]);
                }
            }
        }

        #[test]
        fn fill_is_idempotent_at_fixpoint(im in depth_strategy(), r in 1usize..3) {
            let fixed = fill_holes(&im, r, 1000);
            prop_assert_eq!(fill_holes(&fixed, r, 5), fixed);
        }

        #[test]
        fn normalize_is_order_preserving(im in depth_strategy()) {
            let g = normalize(&im);
            let d = im.data();
            for i in 0..d.len() {
                for j in 0..d.len() {
                    if d[i] > 0.0 && d[j] > 0.0 && d[i] <= d[j] {
                        prop_assert!(g.data[i] <= g.data[j]);
                    }
                }
            }
        }

        #[test]
        fn equalize_order_and_range(data in prop::collection::vec(any::<u8>(), 1..200), mask_seed in any::<u64>()) {
            let n = data.len();
            let mask: Vec<bool> = (0..n).map(|i| (mask_seed >> (i % 64)) & 1 == 1 || i % 3 == 0).collect();
            let g = GrayImage::new(n, 1, data.clone()).unwrap();
            let out = equalize(&g, &mask).unwrap();
            let valid: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
            for &i in &valid {
                for &j in &valid {
                    if data[i] <= data[j] {
                        prop_assert!(out.data[i] <= out.data[j]);
                    }
                }
            }
            let mut levels: Vec<u8> = valid.iter().map(|&i| data[i]).collect();
            levels.sort_unstable();
            levels.dedup();
            if levels.len() >= 2 {
                prop_assert_eq!(valid.iter().map(|&i| out.data[i]).max(), Some(255));
            }
            for (o, &m) in out.data.iter().zip(&mask) {
                if !m {
                    prop_assert_eq!(*o, 0);
                }
            }
        }

        #[test]
        fn integral_is_monotone(im in depth_strategy()) {
            let s = build_validity_integral(&im);
            for y in 0..=im.height() {
                prop_assert_eq!(s.at(0, y), 0);
                for x in 0..=im.width() {
                    prop_assert_eq!(s.at(x, 0), 0);
                    if x > 0 { prop_assert!(s.at(x, y) >= s.at(x - 1, y)); }
                    if y > 0 { prop_assert!(s.at(x, y) >= s.at(x, y - 1)); }
                }
            }
        }
    }
}
