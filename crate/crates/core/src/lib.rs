//! Core of a simulator for differentially private over-the-air federated
//! distillation (FD).
//!
//! Every device uploads per-class averaged soft predictions ("knowledge")
//! perturbed by Gaussian noise for differential privacy. The uploads are
//! superposed by a fading multiple-access channel, scaled by a linear
//! estimator at the server and broadcast back as distillation targets.
//!
//! The crate is `no_std` (it needs `alloc`) and owns no IO. File formats,
//! configuration and the command line live in the `otafd` crate.
//!
//! Module map:
//!
//! - [`channel`]: path loss and Rayleigh block fading.
//! - [`privacy`]: sensitivity, stringency and the aggregate-noise DP condition.
//! - [`transceiver`]: closed-form per-round transceiver design and the error
//!   functionals it minimizes.
//! - [`horizon`]: the convergence bound and the optimal number of rounds.
//! - [`learner`]: a small softmax classifier with the distillation loss.
//! - [`distill`]: one training round end to end and full training runs.
//! - [`data`] and [`idx`]: synthetic datasets, partitioning, IDX decoding.
#![no_std]
// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod channel;
pub mod data;
pub mod distill;
mod error;
pub mod horizon;
pub mod idx;
pub mod learner;
pub mod privacy;
pub mod rng;
pub mod simplex;
pub mod transceiver;

pub use error::{Error, Result};
pub use num_complex::Complex64;
