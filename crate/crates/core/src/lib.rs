//! Pinned Gaussian processes and rate-corrected crossing probabilities.
//!
//! A centered Gaussian process observed at past times `T_1 < … < T_n` can be
//! conditioned exactly on those observations; the conditional law over a short
//! window `[T_n, T_n + ε]` concentrates as `ε → 0`, and the exponential decay
//! of the bridge's exit probability is governed by a quadratic rate function.
//! This crate provides:
//!
//! * closed-form covariance kernels for fractional Brownian motion, the
//!   Cheridito mixed process, m-fold integrated Brownian motion and
//!   integrated fractional Brownian motion ([`kernels`]);
//! * the exact recursive conditioning engine plus a Schur-complement oracle
//!   ([`conditioning`]);
//! * the small-time asymptotic covariances of the conditional process and of
//!   its bridge, including the refined expansions needed when the plain limit
//!   degenerates ([`asymptotics`]);
//! * finite-dimensional rate-function quadratic forms ([`rkhs`]);
//! * barrier-crossing rate functionals by one-dimensional minimization
//!   ([`exit_rates`]);
//! * exact path sampling by symmetric factorization or sequential
//!   conditioning ([`simulate`]);
//! * crude and rate-corrected Monte Carlo estimation of boundary-crossing
//!   probabilities ([`montecarlo`]).

pub mod asymptotics;
pub mod conditioning;
mod dd;
mod error;
pub mod exit_rates;
pub mod kernels;
pub(crate) mod linalg;
pub mod montecarlo;
pub mod rkhs;
pub mod simulate;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil;
