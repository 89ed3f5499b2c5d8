//! Simulation laboratory for the FA1f (one-spin facilitated) model.
//!
//! The crate is organized around a single source of randomness, the
//! [`harris::HarrisScheme`]: per-site Poisson decision times with Bernoulli
//! marks. Everything else is a deterministic function of a scheme and an
//! initial condition, which is what makes couplings, dual paths and the
//! renormalized percolation structure mechanically checkable.
//!
//! * [`graph`]: finite windows of bounded-degree graphs and embedded half-lines.
//! * [`harris`]: sampling and querying decision marks.
//! * [`dynamics`]: single and coupled FA1f trajectories, cylinder events.
//! * [`dual`]: reversed-time dual paths, activation audits, codings and skeletons.
//! * [`navigated`]: particle-riding paths toward a target and hitting-time stats.
//! * [`contact`]: discrete-time contact process coupled below the spin system.
//! * [`renorm`]: good dual intervals and the semi-oriented percolation process.
//! * [`oracle`]: exact transient/stationary analysis of tiny windows.
//! * [`census`]: dual-path / percolation encounter statistics and the
//!   end-to-end activation decay experiment.
//! * [`stats`]: standard errors and exponential tail fits.

pub mod census;
pub mod contact;
pub mod dual;
pub mod dynamics;
pub mod graph;
pub mod harris;
pub mod navigated;
pub mod oracle;
pub mod renorm;
pub mod rng;
pub mod stats;

pub use graph::{GraphView, SiteId};
pub use harris::HarrisScheme;
