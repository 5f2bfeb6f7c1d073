//! Stochastic cell-mechanics simulation and stepwise equation learning of
//! continuum reaction-diffusion models with a free boundary.
//!
//! The pipeline is: [`discrete_sim`] produces node trajectories,
//! [`density_stats`] turns them into (ensemble-averaged) density grids,
//! [`numdiff`] estimates derivatives, [`eql`] assembles and prunes the
//! regression system and runs stepwise selection, scoring each candidate by
//! solving the PDE with [`fvm`].

pub mod density_stats;
pub mod discrete_sim;
pub mod eql;
pub mod error;
pub mod fvm;
pub mod io;
pub mod linalg;
pub mod numdiff;
pub mod ode;
pub mod quantile;

pub use error::{EqlError, Result};
