//! Weighted, filtered PCA denoising of sparse Poisson spectrum images, with
//! automatic rank selection from the anisotropy of component scatter plots.
//!
//! Pipeline: [`preprocess`] (bin, smooth, weight, center) →
//! [`decomposition`] (SVD) → [`truncation`] (choose k) → [`reconstruct`].
//! [`phantom`] produces noisy / noise-free twin datasets for validation.

pub mod containers;
pub mod decomposition;
pub mod error;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod reconstruct;
pub mod truncation;

pub use containers::{DataMatrix, EnergyAxis, SpectrumImage};
pub use error::{Error, Result};
