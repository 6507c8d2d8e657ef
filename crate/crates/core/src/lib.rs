//! Numerical laboratory for the inertial (overdamped) limit of the ε-scaled
//! isentropic compressible Navier–Stokes system on the periodic torus.
//!
//! * [`field`]: lattice fields, spectral derivatives, the Lamé inverse, mollifiers.
//! * [`model`]: pressure law and energy functionals.
//! * [`scaled`]: explicit pseudo-spectral integrator for the scaled system.
//! * [`limit`]: transport with elliptically slaved velocity.
//! * [`analysis`]: Bogovskii operator, commutators, weak-form residuals.
//! * [`harness`]: ε-sweeps, rate fits, certificates.
//! * [`config`] and [`io`]: run configuration and persisted artifacts.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod field;
pub mod harness;
pub mod io;
pub mod model;
pub mod record;
pub mod scaled;
pub mod time;
pub mod limit;
