//! Bayesian mutual information between a feature and a class from incomplete
//! categorical data, with the feature filters and the incremental naive Bayes
//! classifier built on it.
//!
//! The pipeline for one feature/class pair:
//!
//! 1. [`counts::tabulate`] the observed pairs into a [`ContingencyTable`]
//!    (joint counts plus the two one-sided missing margins).
//! 2. [`counts::apply_prior`] to get posterior exponents.
//! 3. [`mode::fit_mode`] for the posterior mode `π̂` (closed form when only
//!    one side is ever missing, EM otherwise).
//! 4. [`mi::summarize`] for the posterior mean and variance of the mutual
//!    information, then [`filters::decide`].

pub mod counts;
pub mod covariance;
pub mod dataio;
pub mod error;
pub mod filters;
pub mod harness;
mod linalg;
pub mod mi;
pub mod mode;
pub mod naive_bayes;
pub mod oracle;

pub use counts::{apply_prior, tabulate, ChanceMatrix, ContingencyTable, EffectiveCounts, PriorSpec};
pub use covariance::{covariance, precision_field, CovarianceMatrix, PrecisionField};
pub use error::{Error, Result};
pub use filters::{decide, rank_features, FilterConfig, FilterDecision, FilterKind};
pub use mi::{summarize, MiSummary, VariancePath};
pub use mode::{fit_mode, ModeOptions, ModeResult};
pub use naive_bayes::NaiveBayes;
