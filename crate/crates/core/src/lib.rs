//! Numerical workbench for the magnetic Schrödinger inverse boundary problem.
//!
//! The crate builds complex geometric optics (CGO) solutions for bounded,
//! possibly discontinuous potentials, probes the Carleman estimates behind
//! them, verifies the ∂̄ machinery, and reconstructs the magnetic field `dA`
//! and the electric potential `q` from the integral identity.

pub mod carleman;
pub mod cgo;
pub mod cli;
pub mod dbar;
pub mod error;
pub mod fft;
pub mod fields;
pub mod forward;
pub mod io;
pub mod krylov;
pub mod potentials;
pub mod recon;
pub mod rng;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
