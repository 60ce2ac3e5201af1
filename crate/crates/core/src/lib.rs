//! Numerical laboratory for semiclassical defect measures of Stokes and
//! Laplace eigenfunctions on planar domains.
//!
//! The crate is organised bottom-up:
//!
//! * [`chart`]: collar coordinates and the boundary Hamiltonian `p = eta^2 - r`;
//! * [`classify`]: elliptic / hyperbolic / glancing classification of boundary points;
//! * [`flow`]: the generalized bicharacteristic (Melrose-Sjostrand) flow;
//! * [`quasimode`]: exact Laplace and Stokes eigenfunctions of the unit disk;
//! * [`quant`]: semiclassical quantization, pairings and Husimi densities;
//! * [`parametrix`]: the boundary-layer parametrix of the harmonic pressure;
//! * [`verify`]: finite-h experiments on the limiting measures.

pub mod chart;
pub mod classify;
mod error;
pub mod flow;
pub mod parametrix;
pub mod quant;
pub mod quasimode;
pub mod special;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};

/// Map over a slice, in parallel when the `parallel` feature is enabled.
pub(crate) fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
