//! Steady-state solver for a driven standing-wave cavity filled with
//! Doppler-broadened two-level atoms.
//!
//! Each velocity class is solved with a Floquet chain in harmonics of its
//! Doppler shift ([`floquet`]); the classes are averaged over a Gaussian and
//! the field equation is closed with Newton's method ([`selfconsist`]). On
//! top of that sit the observables (transmission, phase slope, shot-noise
//! linewidth), parameter sweeps, and a brute-force time-domain integrator
//! used as an independent check.

pub mod cli;
pub mod error;
pub mod floquet;
pub mod observables;
pub mod oracle;
pub mod params;
pub mod scans;
pub mod selfconsist;

pub use error::{Error, Result};
pub use floquet::{FloquetState, C64};
pub use params::{PhysicalParams, ScaledParams};
