//! Detection and correction of systematic bias in the PMU channels at both
//! ends of a transmission line, with joint recovery of the line's series
//! impedance and shunt susceptance.

pub mod calibrator;
pub mod cluster;
pub mod datagen;
pub mod error;
pub mod estimator;
pub mod line;
pub mod phasor;
pub mod sensitivity;

pub use calibrator::{apply_report, build_grid, calibrate, scan, CalibrationReport, EmsReference, ScanConfig, Strategy};
pub use cluster::{dbscan, zero_seeded_cluster, ClusterConfig, ClusterOutcome, EpsMode, Label};
pub use error::{Error, Result};
pub use line::{compute_line_params, forward_simulate, LineParams, MeasurementSnapshot, TerminalConditions};
pub use phasor::{BiasError, BiasVector, Channel, PerUnitBase, Phasor};
pub use sensitivity::ResidualRows;
