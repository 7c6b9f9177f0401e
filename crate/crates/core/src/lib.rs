//! Label-distribution recovery from noisy annotations.
//!
//! The crate is organised along the stages of the pipeline:
//!
//! * [`dataset`] loads, synthesizes, splits and corrupts label-distribution data;
//! * [`graph`] learns a row-stochastic affinity graph from features and builds its Laplacian;
//! * [`recovery`] splits a noisy label matrix into a low-rank part and a sparse error with ADMM;
//! * [`msvr`] fits a kernel multi-output regressor by iteratively re-weighted least squares;
//! * [`metrics`] scores predictions and ranks competing algorithms;
//! * [`harness`] runs the end-to-end experiments (three-arm comparison and parameter sweeps).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod msvr;
pub mod recovery;
pub mod simplex;

pub use dataset::{LdlDataset, NoiseSpec, SynthSpec, SyntheticData};
pub use error::{Error, Result};
pub use graph::{AffinityGraph, GraphLaplacian};
pub use harness::{ComparisonReport, ExperimentConfig};
pub use metrics::{Measure, MetricReport, RankTable};
pub use msvr::{KernelSpec, MsvrConfig, MsvrModel};
pub use recovery::{RecoveryConfig, RecoveryResult};

/// Dense row-major-agnostic matrix type used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense column vector.
pub type Vector = nalgebra::DVector<f64>;
