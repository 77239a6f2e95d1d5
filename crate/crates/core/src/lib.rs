//! Estimators of two- and three-qubit quantum correlations from possibly
//! incomplete local Pauli measurements.
//!
//! Three estimators are provided and compared:
//!
//! - maximum-likelihood state reconstruction followed by evaluation of the
//!   correlation measure on the reconstructed state ([`maxlik`]),
//! - measurement-specific dense networks mapping the probabilities of one
//!   fixed projector subset straight to the correlation value,
//! - a measurement-independent network whose first layer is a strided
//!   convolution over `(projector descriptor, probability)` slots, so a single
//!   model accepts any subset of the canonical projector list.
//!
//! The networks, optimizer and training loop live in [`neural`]; the
//! dataset construction and the two network pipelines in [`estimators`]; the
//! experiment engine behind the `qcorr` command-line tool in [`harness`].
//!
//! Data-parallel loops (dataset generation, batch gradients, sweep cells) go
//! through [`par`], which uses rayon when the default `parallel` feature is
//! enabled and plain iterators otherwise. Results are identical either way.

#![deny(unsafe_code)]

pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod maxlik;
pub mod measurement;
pub mod measures;
pub mod neural;
pub mod par;
pub mod states;

pub use error::{Error, ErrorClass, Result};
pub use linalg::{ComplexMatrix, HermitianEig, C64};
pub use measurement::{ProbabilityRecord, ProjectorSet, RecordKind};
pub use measures::{CorrelationKind, CorrelationTarget};
pub use states::{DensityMatrix, RandomSeed};
