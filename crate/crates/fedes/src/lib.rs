//! Federated neural-network training by evolution strategies.
//!
//! Clients evaluate a shared model under seed-derived Gaussian
//! perturbations and uplink only scalar batch losses. The server, holding
//! the same pre-shared seed, regenerates every perturbation locally and
//! reconstructs a natural-gradient estimate from the scalars, so uplink
//! traffic is a handful of floats per round instead of a parameter vector.
//! A conventional gradient-descent baseline is included for comparison.
//!
//! Module map:
//! - [`detrand`]: seed derivation and bit-exact Gaussian streams
//! - [`nn`]: dense network, cross-entropy forward pass, backprop baseline
//! - [`data`]: IDX ingestion, client partitioning, batching
//! - [`escore`]: loss evaluation, elite selection, gradient reconstruction
//! - [`fednet`]: wire codec, transports, server and client loops
//! - [`exp`]: experiment configs, runners, metrics, convergence studies

pub mod data;
pub mod detrand;
pub mod error;
pub mod escore;
pub mod exp;
pub mod fednet;
pub mod nn;

pub use error::Error;
