//! Fair and private tabular classification.
//!
//! The crate trains binary classifiers under differential-privacy budgets
//! and group-fairness constraints, sweeps the resulting trade-offs into a
//! frontier, and selects a deployable model from a stakeholder policy:
//!
//! * [`dataset`] loads, validates, encodes and splits CSV data.
//! * [`metrics`] computes performance and group-fairness metrics.
//! * [`dp`] holds the noise mechanisms and the privacy accountant.
//! * [`models`] implements the plain and private base learners.
//! * [`fair`] provides the exponentiated-gradient reduction and the
//!   group-threshold post-processor.
//! * [`frontier`] builds, filters and persists the trade-off frontier.
//! * [`policy`] translates between plain language and policy tuples,
//!   filters and selects candidates and issues selection contracts.
//! * [`store`] is the content-addressed artifact store behind the service.

pub mod canonical;
pub mod config;
pub mod dataset;
pub mod dp;
pub mod fair;
pub mod frontier;
pub mod metrics;
pub mod models;
pub mod policy;
pub mod store;

pub use config::TrainingConfig;
pub use dataset::{EncodedMatrix, TabularDataset};
pub use dp::{PrivacyAccount, PrivacyBudget};
pub use frontier::{Frontier, FrontierPoint, GridSpec};
pub use policy::{PolicyTuple, SelectionContract};
