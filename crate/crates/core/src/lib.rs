//! Simulation and analysis toolkit for the skewless clock-synchronization
//! protocol.
//!
//! Every node `i` keeps a time estimate `x_i`, a skew correction `s_i` and an
//! exponentially averaged offset `y_i`. Each poll interval `tau` it measures
//! offsets to its neighbours and updates
//!
//! ```text
//! x_i <- x_i + tau * r_i * s_i
//! s_i <- s_i + kappa1 * sum_j a_ij D_ij - kappa2 * y_i
//! y_i <- p * sum_j a_ij D_ij + (1 - p) * y_i
//! ```
//!
//! The crate builds the exact linear dynamics of this rule over a directed
//! measurement graph ([`topology`], [`dynamics`]), decides convergence in
//! closed form and numerically ([`analysis`]), predicts the effect of biased
//! and random measurement noise and tunes the gains for H2 performance
//! ([`noise`]), and runs seeded scenarios ([`sim`]).
//!
//! Parameter sweeps and Monte Carlo ensembles go through [`sweep`], which uses
//! rayon when the `parallel` feature is enabled (the default) and a plain
//! sequential loop otherwise.

pub mod analysis;
pub mod dynamics;
mod error;
pub mod linalg;
pub mod noise;
pub mod sim;
pub mod sweep;
pub mod topology;

pub use analysis::{JordanData, SyncVerdict};
pub use dynamics::{ProtocolParams, SystemMatrices, SystemState};
pub use error::{Error, Result};
pub use noise::{H2Result, JitterModel, NoiseSpec, WanderModel};
pub use sim::{Event, Scenario, SimTrace};
pub use topology::{Edge, GraphQuantities, TopologySpec};
