//! Hybrid quantum-classical neural-network laboratory.
//!
//! The crate bundles a dense statevector simulator ([`qsim`]), declarative
//! parameterized circuits ([`pqc`]), exchangeable gradient engines ([`grad`]),
//! a small reverse-mode tensor stack ([`nn`]), MNIST ingestion ([`data`]),
//! training and experiment drivers ([`train`]), and a Fourier-expressivity
//! analyzer for the quantum layers ([`fourier`]).

pub mod error;
pub mod data;
pub mod fourier;
pub mod grad;
pub mod nn;
pub mod pqc;
pub mod qsim;
pub mod train;

pub use error::{Error, Result};
