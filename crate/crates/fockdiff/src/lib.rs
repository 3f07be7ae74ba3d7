//! Truncated Fock-space simulation of the single-mode photon diffusion
//! channel, built to cross-validate three independent computations of the
//! same evolution: an exact Kraus-operator sum, RK4 integration of the
//! master equation, and closed-form photon-number distributions for the
//! negative-binomial family of optical fields.
//!
//! - [`fock`]: dense operator algebra and density-matrix validation
//! - [`special`]: Laguerre polynomials, log-space combinatorics, identity checks
//! - [`states`]: number / chaotic / negative-binomial / Laguerre-weighted states
//! - [`diffusion`]: the channel itself and its observables
//! - [`verify`]: the fixed-grid property suites
//! - [`output`]: deterministic JSON/CSV serialization

pub mod diffusion;
pub mod error;
pub mod fock;
pub mod output;
pub mod special;
pub mod states;
pub mod verify;

pub use error::{Error, Result};
