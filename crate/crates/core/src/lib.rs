//! Gridworld DQN agents and the probes that test whether their hidden
//! activations encode a scripted human's preference state.
//!
//! [`pipeline`] ties the modules into resumable runs; [`config`] holds every
//! tunable. Numeric types are generic over [`Scalar`] (`f32` or `f64`).

pub mod config;
pub mod dqn;
pub mod env;
pub mod error;
pub mod fsutil;
pub mod harness;
pub mod nn;
pub mod pipeline;
pub mod probe;
pub mod scalar;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision instances used throughout the pipeline.
pub type Tensor32 = nn::Tensor<f32>;
pub type Network32 = nn::Network<f32>;
pub type Pca32 = probe::Pca<f32>;
pub type Nmf32 = probe::Nmf<f32>;
pub type KMeans32 = probe::KMeans<f32>;

/// Double-precision instances used by gradient checks and oracles.
pub type Tensor64 = nn::Tensor<f64>;
pub type Network64 = nn::Network<f64>;
pub type Pca64 = probe::Pca<f64>;
pub type Nmf64 = probe::Nmf<f64>;
pub type KMeans64 = probe::KMeans<f64>;
