//! Decentralized proximal-gradient ADMM methods for composite consensus
//! optimization: DPGA, DPGA-W and their stochastic variants, baselines,
//! a synchronous network simulator, and benchmark tooling.

pub mod baselines;
pub mod bench;
pub mod dpga;
pub mod dpga_w;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod objective;
pub mod reference;
pub mod simnet;
pub mod topology;

pub use error::{Error, Result};
