//! Subbagging variable selection for large regression datasets.
//!
//! Many small subsamples are fitted independently; only each fit's minimizer
//! and Hessian are retained. Their average second-order approximation (the
//! subbagging loss) is then minimized under an adaptive L1 penalty, with the
//! penalty level chosen by a subbagging BIC, and the spread of the subsample
//! estimators gives standard errors for the selected coefficients.
//!
//! The pipeline, bottom-up:
//!
//! * [`family`]: per-observation loss, gradient and Hessian (linear, logistic).
//! * [`data`]: in-memory tables and the [`data::RowSource`] trait for row access.
//! * [`newton`]: damped Newton minimization of an average loss.
//! * [`subsample`]: subsample drawing and per-subsample fitting.
//! * [`aggregate`]: merging summaries into the subbagging quadratic.
//! * [`lasso`]: coordinate descent, lambda grids and SBIC selection.
//! * [`inference`]: subbagging variance, standard errors and Wald intervals.
//! * [`baseline`]: the full-sample comparison estimator and sandwich variance.
//! * [`sim`]: synthetic data and replication metrics.
//! * [`csv_input`], [`summary_file`], [`report`], [`commands`]: the CLI layer.

pub mod aggregate;
pub mod baseline;
pub mod commands;
pub mod csv_input;
pub mod data;
pub mod error;
pub mod family;
pub mod inference;
pub mod lasso;
pub mod newton;
pub mod report;
pub mod sim;
pub mod subsample;
pub mod summary_file;

pub use aggregate::{adaptive_weights, AggregatedQuadratic};
pub use data::{Dataset, RowSource};
pub use error::{Error, Result};
pub use family::{Family, Observation};
pub use lasso::{LambdaPath, RegularizedFit};
pub use subsample::{SubbaggingPlan, SubsampleSummary};
