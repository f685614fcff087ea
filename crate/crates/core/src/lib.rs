//! sscore-core — cascaded severity scoring of lung CT patterns on
//! procedurally synthesized thorax phantoms.
//!
//! The pipeline stages are:
//!
//! 1. **imagecore** – validated volume/slice grids, trilinear resampling,
//!    world ↔ slice coordinate conversion.
//! 2. **lungmask** – threshold + morphology lung segmentation of axial slices.
//! 3. **synth** – lesion synthesis: random ellipse masks, ground-glass and
//!    reticulation texture fills, edge-smoothed insertion, exact area scores.
//! 4. **sampling** – inverse-frequency balanced resampling, on-the-fly
//!    synthesis gating, and level-covering random z-crops.
//! 5. **nnreg** – compact convolutional regression networks (2D scores,
//!    3D levels) with from-scratch forward/backward passes and SGD training.
//! 6. **metrics** – agreement statistics: MAE±STD, weighted kappa, ICC(2,1),
//!    Bland-Altman, OLS fit, Wilcoxon signed-rank.
//! 7. **phantom / pipeline** – 3D phantom volumes with level markers,
//!    cascaded inference, fold management and cross-validation.
//!
//! The crate is `no_std` + `alloc`; file formats and the CLI live in the
//! companion `sscore` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod imagecore;
pub mod lungmask;
pub mod metrics;
pub mod nnreg;
pub mod phantom;
pub mod pipeline;
pub mod rngstream;
pub mod sampling;
pub mod synth;

pub use error::{Error, Result};
