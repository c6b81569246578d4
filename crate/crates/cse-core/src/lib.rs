//! Region-wide error guarantees for Monte Carlo evaluation of statistical
//! designs.
//!
//! A design is simulated at finitely many parameter points, yet the guarantee
//! of interest ("Type I Error at most alpha") must hold over a continuum of
//! null parameters. This crate closes that gap for exponential-family models:
//! the tilt bound ([`tilt`]) transfers a pointwise error estimate from a
//! simulation point to every parameter in a surrounding hyperrectangle, at a
//! cost that shrinks as the rectangle does.
//!
//! Two workflows build on it:
//!
//! * **Validation** ([`validation`]): simulate a fixed design on a tiling of
//!   the null region, wrap each tile's rejection count in a Clopper-Pearson
//!   interval, and extend it to a confidence band covering the whole region.
//! * **Calibration** ([`calibration`]): shrink the per-tile test level so
//!   that a threshold chosen as an order statistic of simulated test
//!   statistics is guaranteed level-alpha over the entire null region, not
//!   just at the simulation points.
//!
//! [`grid`] builds and refines the tiling, [`engine`] runs deterministic
//! counter-seeded simulation batches (identical output for any worker
//! count), and [`designs`] ships reference trial designs.

pub mod calibration;
pub mod designs;
pub mod engine;
pub mod error;
pub mod exec;
pub mod grid;
pub mod model;
pub mod special;
pub mod tilt;
pub mod validation;

mod rng;

pub use calibration::{
    bootstrap_bias, calibrate, confidence_set, pointwise_threshold, tile_alpha_target,
    BootstrapDiagnostic, CalibrationResult, CalibrationRun, ConfidenceSet, Estimand, Threshold,
};
pub use designs::Design;
pub use engine::{run_batch, SeedSpec, SimBatch, StreamDomain};
pub use error::{Error, Result};
pub use grid::{build_platten, refine, Direction, NullHypothesis, Platten, Tile};
pub use model::{ModelFamily, OutcomeMatrix, ParamPoint};
pub use tilt::{
    forward_bound, inverse_bound, optimize_forward, optimize_inverse, BoundQuery, BoundResult,
};
pub use validation::{
    clopper_pearson_lower, clopper_pearson_upper, hoeffding_upper, validate, ValidationReport,
    ValidationSettings,
};
