//! World-consistent view synthesis toolkit.
//!
//! The crate turns per-viewpoint panoramic observations into generated
//! observations that stay spatially coherent along a navigation trajectory
//! and around each viewpoint's 360° ring of perspectives:
//!
//! * [`geometry`] holds the pinhole camera model and rigid transforms.
//! * [`trajwarp`] forward-warps a reference image between viewpoints with a
//!   depth-based point cloud and z-buffer.
//! * [`viewwarp`] rotates perspectives of one viewpoint onto each other and
//!   merges the resulting guidance images.
//! * [`panorama`] describes the 36-perspective grid, its traversal order and
//!   neighbor sets, equirectangular assembly and consistency metrics.
//! * [`backend`] defines the generator / depth / caption contracts, the
//!   deterministic mocks, the HTTP wire protocol, its client and a mock server.
//! * [`pipeline`] orchestrates the trajectory stage and the viewpoint stage.
//! * [`dataio`] reads scene manifests, writes datasets and renders synthetic
//!   rooms used as test oracles.

pub mod backend;
pub mod dataio;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod panorama;
pub mod pipeline;
pub mod raster;
pub mod trajwarp;
pub mod viewwarp;

pub use error::{Error, Result};
pub use geometry::{Direction, Intrinsics, PixelCoord, Pose, RelativePose, TranslationConvention};
pub use raster::{BlurredMask, DepthMap, ImageBuffer, Mask};
