//! Three-channel depth encodings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::depthimage::{equalize, normalize_with, round_u8, DepthImage, GrayImage, NormalizeRange};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major `R, G, B` triples.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingScheme {
    /// Depth-gray: normalized depth replicated to three channels.
    Dg,
    /// Color-depth: normalized depth through the reversed jet colormap.
    Cd,
    /// Contrast-enhanced depth-gray: normalize, equalize, replicate.
    Ce,
    /// Contrast-enhanced color-depth: normalize, equalize, reversed jet.
    #[default]
    Cecd,
}

impl EncodingScheme {
    pub const ALL: [EncodingScheme; 4] = [Self::Dg, Self::Cd, Self::Ce, Self::Cecd];

    fn equalized(self) -> bool {
        matches!(self, Self::Ce | Self::Cecd)
    }

    fn colored(self) -> bool {
        matches!(self, Self::Cd | Self::Cecd)
    }
}

impl fmt::Display for EncodingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dg => "dg",
            Self::Cd => "cd",
            Self::Ce => "ce",
            Self::Cecd => "cecd",
        })
    }
}

impl FromStr for EncodingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dg" => Ok(Self::Dg),
            "cd" => Ok(Self::Cd),
            "ce" => Ok(Self::Ce),
            "cecd" => Ok(Self::Cecd),
            other => Err(Error::InvalidParameter(format!(
                "unknown encoding `{other}` (expected dg, cd, ce or cecd)"
            ))),
        }
    }
}

#[inline]
fn jet_channel(u: f64, center: f64) -> f64 {
    (1.5 - (4.0 * u - center).abs()).clamp(0.0, 1.0)
}

/// Reversed jet colormap: `t = 0` (near) is dark red, `t = 1` (far) dark blue.
pub fn reversed_jet(t: f64) -> Result<[u8; 3]> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::ColormapRange(t));
    }
    let u = 1.0 - t;
    Ok([
        round_u8(255.0 * jet_channel(u, 3.0)),
        round_u8(255.0 * jet_channel(u, 2.0)),
        round_u8(255.0 * jet_channel(u, 1.0)),
    ])
}

/// Colormap evaluated at every 8-bit gray level, `t = v / 255`.
pub fn reversed_jet_lut() -> [[u8; 3]; 256] {
    std::array::from_fn(|v| reversed_jet(v as f64 / 255.0).expect("t within [0, 1]"))
}

/// The single-channel image that feeds the final channel mapping.
pub fn encoding_gray(img: &DepthImage, scheme: EncodingScheme) -> GrayImage {
    encoding_gray_with(img, scheme, NormalizeRange::PerFrame)
}

pub fn encoding_gray_with(img: &DepthImage, scheme: EncodingScheme, range: NormalizeRange) -> GrayImage {
    let gray = normalize_with(img, range);
    if scheme.equalized() {
        equalize(&gray, &img.validity_mask()).expect("mask built from the same image")
    } else {
        gray
    }
}

/// Maps a gray image to three channels; pixels with `valid == false` become
/// black.
pub fn colorize(gray: &GrayImage, valid: &[bool], colored: bool) -> RgbImage {
    let lut: [[u8; 3]; 256] = if colored {
        reversed_jet_lut()
    } else {
        std::array::from_fn(|v| [v as u8; 3])
    };
    let mut data = Vec::with_capacity(3 * gray.data.len());
    for (&v, &ok) in gray.data.iter().zip(valid) {
        data.extend_from_slice(&if ok { lut[v as usize] } else { [0; 3] });
    }
    RgbImage {
        width: gray.width,
        height: gray.height,
        data,
    }
}

pub fn encode(img: &DepthImage, scheme: EncodingScheme) -> RgbImage {
    encode_with(img, scheme, NormalizeRange::PerFrame)
}

pub fn encode_with(img: &DepthImage, scheme: EncodingScheme, range: NormalizeRange) -> RgbImage {
    let gray = encoding_gray_with(img, scheme, range);
    colorize(&gray, &img.validity_mask(), scheme.colored())
}
