//! Cooperative received-signal-strength localization.
//!
//! Targets with unknown positions are located from RSS measurements on
//! target-to-anchor and target-to-target links, while the anchors themselves
//! are only known through noisy position fixes. Transmit powers and the
//! path-loss exponent may be known or estimated jointly with the positions.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: scene, measurement and parameter types plus the log-distance
//!   path-loss forward model and likelihood.
//! * [`conic`]: a small conic modelling layer (linear, second-order cone and
//!   semidefinite constraints) with its own primal-dual interior-point solver.
//! * [`estimators`]: the four relaxed maximum-likelihood estimators, the
//!   path-loss exponent initializer and the closed-form refinement steps.
//! * [`crlb`]: Fisher information and Cramér-Rao bounds.
//! * [`sim`]: synthetic scenes, measurement synthesis and Monte-Carlo sweeps.
//! * [`dataio`]: field-data ingestion, geodetic projection and calibration.
//! * [`cli`]: the `rssloc` command-line front end.

pub mod cli;
pub mod conic;
pub mod crlb;
pub mod dataio;
pub mod error;
pub mod estimators;
pub mod model;
pub mod sim;

pub use error::{Error, Result};
pub use model::{
    Adjacency, AnchorFix, Link, MeasurementSet, NetworkScene, NodeId, NodeKind, Point, RssReading,
    Scenario, Theta,
};
