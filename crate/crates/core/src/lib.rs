//! Slice-level artifact detection and quality control for diffusion MRI.
//!
//! A 4D diffusion acquisition is cut into axial and sagittal slices, each view
//! is scored by its own binary detector, and slice flags are aggregated into
//! per-gradient volume verdicts with a slice-count threshold.
//!
//! The crate is organised around the workflow:
//!
//! - [`volume`] and [`nifti_io`]: loading volumes, brain extent, slice extraction
//!   and normalisation.
//! - [`sim`] and [`phantom`]: k-space and slice-domain artifact injection on
//!   synthetic phantoms, producing labelled benchmarks.
//! - [`augment`]: geometric augmentation of training slices.
//! - [`features`]: Gabor, Zernike and LBP texture descriptors.
//! - [`learning`]: frozen-backbone CNN head, random forests, Gabor+FC head and
//!   PCA+SVM detectors.
//! - [`pipeline`]: the dual-view QC pipeline and its report.
//! - [`eval`]: metrics, grouped k-fold cross-validation, threshold sweeps and
//!   cross-dataset evaluation.

pub mod augment;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub(crate) mod fft;
pub mod labels;
pub mod learning;
pub mod nifti_io;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod volume;

pub use error::{QcError, Result};
pub use volume::{DwiVolume, Label, SliceKey, SliceSample, View};
