//! Label-efficient conditional GAN training at desk scale.
//!
//! The crate covers the whole pipeline: datasets with partial labels,
//! BigGAN-style generator and projection discriminator (with exact-shape
//! full-scale constructors), the adversarial and auxiliary losses, label
//! providers built from self-supervised features, FID/IS evaluation and the
//! multi-seed training loop with its reports.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod kv;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod report;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
