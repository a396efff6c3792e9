//! Sequential density-ratio estimation and the sequential probability ratio test.
//!
//! The crate is organised bottom-up:
//!
//! - [`synthdata`]: generators with exactly known likelihoods plus oracle LLRs.
//! - [`tandem`]: the N-th order posterior-to-LLR decomposition and its gradient.
//! - [`sprt`]: the sequential test, truncated test and fixed-sample test.
//! - [`nnet`]: a sliding-window recurrent posterior estimator trained with Adam.
//! - [`losses`]: LLLR, multiplet cross-entropy and bounded symmetric KLIEP.
//! - [`eval`]: SAT curves, error rates, hitting-time theory, NMSE, Monte Carlo.

pub mod error;
pub mod eval;
pub mod losses;
pub mod nnet;
pub mod rng;
pub mod sprt;
pub mod synthdata;
pub mod tandem;

pub use error::{Result, TandemError};
