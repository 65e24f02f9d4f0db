//! Geometric constellation shaping for laser-phase-noise channels.
//!
//! A binary autoencoder (one-layer Tx labeling, small dense Rx) is trained
//! end-to-end through AWGN, Wiener phase noise, and a differentiable blind
//! phase search; the learned bit-labeled constellations are then validated
//! with the original hard-decision BPS and scored by bit-wise mutual
//! information.
//!
//! The numeric core is generic over the scalar type ([`Real`], i.e. `f32`
//! or `f64`); the CLI and the file formats operate at `f64`.

pub mod channel;
pub mod constellation;
pub mod cpe;
pub mod error;
pub mod learn;
pub mod metrics;
pub mod real;
pub mod tensor;

pub use error::{Error, Result};
pub use real::Real;

/// Concrete `f64` aliases used by the CLI and most tests.
pub type Constellation64 = constellation::Constellation<f64>;
pub type ChannelConfig64 = channel::ChannelConfig<f64>;
pub type BpsConfig64 = cpe::BpsConfig<f64>;

/// Single-precision aliases for callers trading accuracy for speed.
pub type Constellation32 = constellation::Constellation<f32>;
pub type BpsConfig32 = cpe::BpsConfig<f32>;
