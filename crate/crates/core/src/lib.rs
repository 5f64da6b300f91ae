//! Distributional representations of epoch-level count data and penalized
//! scalar-on-function regression.
//!
//! A subject's epoch values (for example minute-level activity counts) are
//! summarized by five curves: density, survival, hazard, quantile and
//! total-time-on-test (TTT). Each curve can serve as the functional covariate
//! of a penalized B-spline GLM, and [`evalcv`] scores how well each
//! representation discriminates an outcome under replicated cross-validation.
//!
//! Module map:
//!
//! - [`synthgen`]: exponentiated Weibull family, exact curves, sampling, and
//!   synthetic two-group cohorts.
//! - [`represent`]: per-subject estimators and shared evaluation grids.
//! - [`splinebasis`]: B-spline basis, curvature penalty, functional weights.
//! - [`sofr`]: penalized IRLS fits, smoothing selection, coefficient curves.
//! - [`evalcv`]: AUC / R², replicated k-fold CV, biomarkers, Spearman matrices.
//! - [`ingest`]: epoch and outcome CSV readers and writers.
//!
//! Data-parallel loops go through [`Execution`]; with the `parallel` feature
//! disabled every mode runs sequentially.

#![allow(clippy::needless_range_loop)]

pub mod evalcv;
mod exec;
pub mod ingest;
pub mod quad;
pub mod represent;
pub mod rng;
pub mod sofr;
pub mod splinebasis;
pub mod synthgen;

pub use exec::Execution;
pub use represent::{Curve, Domain, RepresentationKind, SubjectSample};

use thiserror::Error;

/// Umbrella error for callers that drive the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Synth(#[from] synthgen::SynthError),
    #[error(transparent)]
    Represent(#[from] represent::RepresentError),
    #[error(transparent)]
    Basis(#[from] splinebasis::BasisError),
    #[error(transparent)]
    Fit(#[from] sofr::FitError),
    #[error(transparent)]
    Cv(#[from] evalcv::CvError),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
}
