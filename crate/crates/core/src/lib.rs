//! Link travel-time estimation on a road corridor from sparse floating-car
//! GPS data.
//!
//! The crate follows the usual probe-data pipeline: raw fixes are cleaned of
//! commercial stops ([`preprocess`]), snapped onto the corridor and turned
//! into path integrals ([`matcher`]), and then fed to the regression
//! estimators in [`estimator`]. [`eval`] holds the two-stage cross-validation
//! protocol and the test-time comparison of the three estimators, and
//! [`synth`] generates ground-truth data for validating all of the above.

pub mod cli;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod geo;
pub mod matcher;
pub mod network;
pub mod pipeline;
pub mod preprocess;
pub mod synth;

pub use error::{Error, Result};
pub use geo::GeoPoint;
pub use matcher::{MatchedFix, PathIntegral};
pub use network::{DifferenceMatrix, RoadNetwork, RoadSegment};
pub use preprocess::{GpsFix, Trace};
