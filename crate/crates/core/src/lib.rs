//! Human detection in RGB-D frames from the depth channel: ground-plane
//! removal, scale-aware proposal windows, depth encodings for a CNN, and
//! distance-weighted fusion of color and depth classifier scores.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod depthimage;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod roi;
pub mod synth;

pub use depthimage::{DepthImage, GrayImage, NormalizeRange};
pub use encoding::{encode, EncodingScheme, RgbImage};
pub use error::{Error, Result};
pub use eval::{Annotation, Detection};
pub use fusion::{fuse, nms, weight, FusionWeightParams, ScoredProposal, Scorer};
pub use geometry::{CameraIntrinsics, GroundPlane, Point3, Rect};
pub use pipeline::{Detector, FrameResult, PipelineConfig};
pub use roi::{select_rois, Proposal, RoiConfig, Stages};
