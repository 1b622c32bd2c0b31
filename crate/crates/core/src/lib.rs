//! Hydrogen-jet dispersion toolkit.
//!
//! Two halves share one set of centerline equations:
//!
//! * an integral-model oracle ([`oracle`]) that marches the Gaussian
//!   self-similar jet equations with RK4, including the notional-nozzle
//!   reduction of under-expanded releases ([`nozzle`]);
//! * a physics-informed network ([`neural`], [`training`]) on a graph of
//!   centerline nodes, trained from a handful of concentration sensors with
//!   the equation residuals as a soft constraint. A fully connected backbone
//!   is provided for comparison.
//!
//! Gradients come from the small tape-based engine in [`autodiff`].

pub mod autodiff;
pub mod equations;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod neural;
pub mod nozzle;
pub mod oracle;
pub mod physics;
pub mod real;
pub mod scenario;
pub mod training;

pub use error::{Error, ErrorKind, Result};
