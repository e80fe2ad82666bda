//! Root cause diagnosis for anomalies that propagate through DAG-structured
//! metric systems.
//!
//! The crate is organised around one pipeline:
//!
//! 1. [`graph`] — the causal DAG shared by everything else.
//! 2. [`scm`] — ground-truth (oracle) structural causal models used to
//!    generate data and exact counterfactuals.
//! 3. [`fitting`] — learning an additive-noise model (per-node regressor plus
//!    an empirical residual bank) from historical samples.
//! 4. [`anomaly`] — per-node Z-score detectors.
//! 5. [`estimate`] — counterfactual and in-distribution interventional fix
//!    propagation on a fitted model.
//! 6. [`diagnose`] — the candidate filter, Shapley attribution of fix
//!    utilities, and the comparison baselines.
//! 7. [`benchgen`] — synthetic benchmark factory (random SCMs, fault
//!    injection, toy four-variable studies).
//! 8. [`evalharness`] — Recall\@k, error decompositions, experiment
//!    orchestration and report files.
//! 9. [`ingest`] — normalisation of external wide-CSV KPI exports.

pub mod anomaly;
pub mod benchgen;
pub mod diagnose;
pub mod estimate;
pub mod evalharness;
pub mod fitting;
pub mod floats;
pub mod graph;
pub mod ingest;
pub mod mlp;
pub mod scm;
pub mod seeding;
pub mod shapley;

pub use anomaly::AnomalyDetectorSet;
pub use diagnose::{Diagnosis, DiagnoseConfig};
pub use estimate::{FixAssignment, Instance, Provenance};
pub use fitting::{FittedScm, RegressorSpec, SampleMatrix};
pub use graph::Dag;
pub use scm::{ExogenousSpec, Mechanism, OracleScm};
