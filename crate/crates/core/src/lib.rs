//! Simulation and verification toolkit for Markov chains with a Markovian
//! coupling: drift and coupling conditions, Fortet-Mourier decay, the
//! martingale decomposition of additive functionals, and the Strassen
//! functional law of the iterated logarithm.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod coupling;
pub mod error;
pub mod ergodicity;
pub mod gene_model;
pub mod kernel;
pub mod lil;
pub mod quadrature;
pub mod rng;
pub mod space;
pub mod stats;

pub use error::{Error, Result};
pub use gene_model::{GeneModel, GeneModelSpec};
pub use kernel::{EmpiricalMeasure, Kernel};
pub use rng::RngStream;
pub use space::{MetricSpec, Point, TestFunction};
