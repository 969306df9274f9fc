//! Information-content exploration (ICE).
//!
//! An intrinsic reward for reinforcement learning equal to the stepwise gain
//! in factored Shannon entropy of the state trajectory, together with the
//! pieces needed to study it end to end: count-based entropy bookkeeping,
//! a small hand-rolled neural network stack, actor-critic agents with
//! RND and random baselines, grid-world environments, a learned-latent
//! SimHash variant for large state spaces, and experiment drivers that
//! write CSV artifacts.
//!
//! Entropy is measured in bits (log base 2) everywhere a quantity is named
//! `*_bits`; policy-entropy regularization inside the loss uses nats.

pub mod agent;
pub mod config;
pub mod entropy;
pub mod env;
pub mod experiment;
pub mod latent;
pub mod nn;
pub mod walk;

pub use entropy::{CountTable, EntropySnapshot, IceReward};
