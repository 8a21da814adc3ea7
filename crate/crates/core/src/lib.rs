//! Perceptual image assessment and DeepFake forensics.
//!
//! The crate is organised around the MRI ("perceptual difference image")
//! pipeline:
//!
//! * [`image`] and [`seed`]: float pixel buffers, PNG/JPEG I/O, geometry and
//!   per-item deterministic random streams.
//! * [`perceptual`]: windowed SSIM statistics, SSIM maps and indices, and
//!   MRI images (`1 - SSIM` per pixel).
//! * [`augment`] and [`distract`]: seeded noise/photometric/geometric
//!   augmentations and text/shape overlays.
//! * [`losses`]: evaluative forms of the generator and discriminator
//!   objectives.
//! * [`dataset`]: construction of paired (face, MRI target) manifests and
//!   balanced epoch sampling.
//! * [`detect`]: face-to-video aggregation, grid search and metrics.
//! * [`synth`]: a procedurally drawn stand-in corpus with fake/real pairs.

pub mod augment;
pub mod dataset;
pub mod detect;
pub mod digest;
pub mod distract;
mod error;
pub mod image;
pub mod jsonl;
mod label;
pub mod losses;
pub mod perceptual;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use image::{BBox, ImageBuf};
pub use label::Label;
pub use seed::SeedSpec;
