//! CSI data augmentation for neural-network indoor localization.
//!
//! The crate is organised around the data flow of a localization experiment:
//!
//! - [`csi`]: the channel tensor data model (`[ap][rx][subcarrier]` layout) and labels.
//! - [`io`]: the `.csid` binary dataset format, raw-array ingest and report files.
//! - [`channel`]: a multipath OFDM channel simulator producing labelled datasets,
//!   plus per-AP phase/gain nonidealities for building perturbed test sets.
//! - [`augment`]: per-AP independent phase shift, per-AP random amplitude and a
//!   complex Gaussian noise-injection baseline.
//! - [`mlp`]: feature encoding, a fully connected regression network, Adam
//!   training and the mean squared localization error.
//! - [`harness`]: train/test split, grid experiments, robustness runs and config files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod channel;
pub mod csi;
pub mod error;
pub mod harness;
pub mod io;
pub mod mlp;
pub mod rng;

pub use error::{Error, Result};
