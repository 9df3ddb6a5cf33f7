//! Graph-transformer actor-critic training for networked multi-agent control.
//!
//! The crate is `no_std` (with `alloc`) and contains every algorithmic piece:
//!
//! - [`graph`]: topology, Barabási-Albert / Watts-Strogatz generators, k-hop queries.
//! - [`env`]: the epidemic-containment and rumor-spreading environments, with
//!   common-random-number counterfactual branching.
//! - [`autodiff`]: a small tape-based reverse-mode differentiation engine and Adam.
//! - [`nn`]: GAT, multi-head self-attention, encoder layers, attention pooling, MLPs.
//! - [`models`]: the centralized critic and the shared decentralized actor.
//! - [`train`]: rollouts, GAE, counterfactual advantages, PPO losses and the training loop.
//! - [`eval`]: frozen-policy evaluation, scripted baselines and metrics.
//!
//! File formats, configuration files and the command line live in the `stacca` crate.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

pub mod autodiff;
pub mod env;
mod error;
pub mod eval;
pub mod graph;
pub mod models;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
