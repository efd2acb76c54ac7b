//! Plane-wave ultrasound reconstruction by joint beamforming and
//! deconvolution.
//!
//! The image `x` is estimated from raw channel data `y_ch` and its DAS image
//! `y_DAS` at once, by solving
//!
//! ```text
//! min_x  γ_D/2 ‖y_DAS − Hx‖² + γ_B/2 ‖y_ch − Φx‖² + μ‖x‖₁
//! ```
//!
//! with ADMM. `Φ` is a sparse geometric model of the acquisition
//! ([`forward`]), `H` a circulant PSF blur ([`psf`]).
//!
//! Images are stored column-major (`iz + nz*ix`) everywhere.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod config;
pub mod das;
pub mod error;
pub mod forward;
pub mod image;
pub mod io;
pub mod metrics;
pub mod picmus;
pub mod pipeline;
pub mod psf;
pub mod solver;

pub use acquisition::{ChannelData, ImagingGrid, Phantom, PlaneWaveTx, ProbeGeometry};
pub use error::{Error, Result};
pub use forward::{ApodizationSpec, SystemMatrix, Window};
pub use image::{BModeImage, RfImage};
pub use psf::Psf;
pub use solver::{Mode, SolveReport, SolverConfig};
