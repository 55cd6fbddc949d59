//! Detection of a break in the cross-sectional mean of a large panel.
//!
//! The crate computes CUSUM-based test processes for the null of no change
//! in the cross-sectional mean, estimates the nuisance long-run variances
//! by weighted regression on the CUSUM grid, calibrates the statistics by
//! simulating their Gaussian-process limits or by a factor-model wild
//! bootstrap, and reproduces Monte Carlo rejection-rate tables.

pub mod bootstrap;
pub mod cusum;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod limitdist;
pub mod panel;
pub mod rng;
pub mod teststat;

pub use error::{Error, Result};
pub use estimators::{make_weights, SchemeKind, WeightScheme};
pub use panel::{BreakSpec, Layout, PanelMatrix};
pub use bootstrap::{bootstrap_pvalue, bootstrap_pvalues, estimate_factors, BootstrapConfig};
pub use harness::{run_experiment, ExperimentConfig, RejectionTable};
pub use limitdist::{CritSettings, CritStore, CritTable, LimitKernel};
pub use teststat::{run_test, Calibration, Estimator, Functional, TestOutcome, TestSpec};
