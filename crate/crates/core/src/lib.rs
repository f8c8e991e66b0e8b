//! Sparse-view CT reconstruction workbench.
//!
//! The crate covers the deterministic and probabilistic machinery needed to
//! go from a handful of planar x-rays to a distribution of CT volumes:
//!
//! - [`volume`]: the volumetric grid type, HU preprocessing, phantoms and the
//!   `VOL1` binary format.
//! - [`projector`]: acquisition geometry, point projection and DRR rendering.
//! - [`fusion`]: per-view feature extraction, backprojection into a 3D grid
//!   and average pooling across views.
//! - [`diffusion`]: noise schedules, forward/reverse steps, classifier-free
//!   guidance, ancestral and multistep samplers.
//! - [`latent`]: VQ codebooks, the toy autoencoder and the VQGAN loss terms.
//! - [`uncertainty`]: Monte Carlo sampling and per-voxel bias/variance maps.
//! - [`metrics`]: PSNR, 3D SSIM and dose-volume histogram statistics.

pub mod diffusion;
pub mod error;
pub mod fusion;
pub mod image;
pub mod latent;
pub mod metrics;
pub mod pipeline;
pub mod projector;
pub mod rng;
pub mod uncertainty;
pub mod volume;

pub use error::{Error, Result};
