//! Adaptive-horizon model-predictive control (AMPC) for V-formation flocking.
//!
//! The crate is organised bottom-up:
//!
//! - [`flock`]: the flock MDP state, its transition relation and state generators.
//! - [`fitness`]: clear view, velocity matching, upwash benefit and the combined cost `J`.
//! - [`pso`]: the particle-swarm minimizer used as the inner optimizer.
//! - [`ampc`]: level-based adaptive-horizon control for controllers and attackers.
//! - [`game`]: the remove-birds, random-displacement and AMPC attacker games.
//! - [`smc`]: Chernoff-Hoeffding sample sizing and seeded Monte-Carlo estimation.

pub mod ampc;
pub mod error;
pub mod fitness;
pub mod flock;
pub mod game;
pub mod pso;
pub mod smc;
pub mod trace;
pub mod vec2;

pub use error::{Error, Result};
pub use vec2::Vec2;
