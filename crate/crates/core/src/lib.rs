//! Multi-agent simulator for distributed spectrum sharing over slotted
//! multi-channel ALOHA with Rayleigh fading.

pub mod agent;
pub mod aloha;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod fading;
pub mod load;
pub mod qnet;
pub mod rng;
pub mod snapshot;

pub use error::{Error, Result};
