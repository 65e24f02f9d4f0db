//! Stochastic channel parts: AWGN, Wiener laser phase noise, and the
//! memoryless residual-phase-noise (RPN) surrogate.
//!
//! All draws go through counter-addressed [`RngStream`]s so that every
//! training step and validation run owns an independent, reproducible
//! stream.

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Addressable, splittable RNG stream: identical (seed, stream_id) pairs
/// reproduce identical draws; distinct stream ids are independent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Stream-id address space. Ids pack (purpose, major, minor) so that
/// e.g. every (step, sequence) pair in training and every (grid point,
/// run) pair in validation draws from its own stream.
pub mod streams {
    pub const TX_INIT: u64 = 1;
    pub const RX_INIT: u64 = 2;
    pub const BITS: u64 = 3;
    pub const AWGN: u64 = 4;
    pub const PHASE: u64 = 5;
    pub const RPN: u64 = 6;
    pub const VAL_BITS: u64 = 7;
    pub const VAL_AWGN: u64 = 8;
    pub const VAL_PHASE: u64 = 9;
    pub const ORACLE: u64 = 10;

    /// Pack a purpose with two 30-bit counters.
    pub fn id(purpose: u64, major: u64, minor: u64) -> u64 {
        debug_assert!(purpose < 16 && major < (1 << 30) && minor < (1 << 30));
        purpose | (major << 4) | (minor << 34)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    AwgnOnly,
    Wiener,
    RpnSurrogate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig<F> {
    /// Signal-to-noise ratio in dB; SNR = 1/sigma_n^2 at unit signal power.
    pub snr_db: F,
    /// Laser linewidth in Hz.
    pub linewidth_hz: F,
    /// Symbol rate in Baud.
    pub symbol_rate_baud: F,
    /// Std deviation (rad) of the memoryless RPN surrogate.
    pub rpn_sigma: F,
    pub kind: ChannelKind,
}

impl<F: Real> ChannelConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if !(self.symbol_rate_baud > F::zero()) {
            return Err(Error::Config(format!(
                "symbol_rate_baud must be > 0, got {}",
                self.symbol_rate_baud
            )));
        }
        if self.linewidth_hz < F::zero() {
            return Err(Error::Config(format!(
                "linewidth_hz must be >= 0, got {}",
                self.linewidth_hz
            )));
        }
        if self.rpn_sigma < F::zero() {
            return Err(Error::Config(format!(
                "rpn_sigma must be >= 0, got {}",
                self.rpn_sigma
            )));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("snr_db must not be NaN".into()));
        }
        Ok(())
    }

    /// Total complex noise variance sigma_n^2 = 10^(-snr_db/10).
    pub fn noise_variance(&self) -> F {
        F::lit(10.0).powf(-self.snr_db / F::lit(10.0))
    }

    /// Wiener increment variance for this linewidth and symbol rate.
    pub fn sigma_phi2(&self) -> Result<F> {
        sigma_phi2(self.linewidth_hz, self.symbol_rate_baud)
    }
}

/// Wiener phase-increment variance 2*pi*(linewidth * symbol duration).
pub fn sigma_phi2<F: Real>(linewidth_hz: F, symbol_rate_baud: F) -> Result<F> {
    if !(symbol_rate_baud > F::zero()) {
        return Err(Error::Config(format!(
            "symbol_rate_baud must be > 0, got {symbol_rate_baud}"
        )));
    }
    if linewidth_hz < F::zero() {
        return Err(Error::Config(format!(
            "linewidth_hz must be >= 0, got {linewidth_hz}"
        )));
    }
    Ok(F::TAU() * linewidth_hz / symbol_rate_baud)
}

/// Complex AWGN draws with total variance sigma_n^2 = 10^(-snr_db/10),
/// split evenly across the two quadratures.
pub fn awgn_noise<F: Real>(count: usize, snr_db: F, stream: RngStream) -> Vec<Complex<F>> {
    let variance = F::lit(10.0).powf(-snr_db / F::lit(10.0));
    let sigma = (variance / F::lit(2.0)).sqrt();
    if sigma == F::zero() {
        return vec![Complex::new(F::zero(), F::zero()); count];
    }
    let mut rng = stream.rng();
    (0..count)
        .map(|_| {
            let re = F::standard_normal(&mut rng) * sigma;
            let im = F::standard_normal(&mut rng) * sigma;
            Complex::new(re, im)
        })
        .collect()
}

/// x + n with n ~ CN(0, sigma_n^2). An infinite snr_db disables the noise.
pub fn awgn<F: Real>(x: &[Complex<F>], snr_db: F, stream: RngStream) -> Vec<Complex<F>> {
    if snr_db == F::infinity() {
        return x.to_vec();
    }
    let noise = awgn_noise(x.len(), snr_db, stream);
    x.iter().zip(&noise).map(|(a, n)| a + n).collect()
}

/// Wiener phase trajectory: phi[0] = 0, increments iid N(0, sigma_phi2).
/// Left unwrapped; wrapping is the CPE's concern.
pub fn wiener_phase<F: Real>(count: usize, sigma_phi2: F, stream: RngStream) -> Vec<F> {
    let sigma = sigma_phi2.max(F::zero()).sqrt();
    let mut out = Vec::with_capacity(count);
    let mut phi = F::zero();
    if sigma == F::zero() {
        return vec![F::zero(); count];
    }
    let mut rng = stream.rng();
    for k in 0..count {
        if k > 0 {
            phi += F::standard_normal(&mut rng) * sigma;
        }
        out.push(phi);
    }
    out
}

/// Per-symbol rotation x[k] * exp(j*phi[k]); magnitudes are preserved.
pub fn apply_phase<F: Real>(x: &[Complex<F>], phi: &[F]) -> Result<Vec<Complex<F>>> {
    if x.len() != phi.len() {
        return Err(Error::Shape(format!(
            "apply_phase: {} symbols vs {} phases",
            x.len(),
            phi.len()
        )));
    }
    Ok(x.iter()
        .zip(phi)
        .map(|(z, &p)| z * Complex::from_polar(F::one(), p))
        .collect())
}

/// Memoryless phase draws theta_k ~ N(0, sigma_rpn^2).
pub fn rpn_phases<F: Real>(count: usize, sigma_rpn: F, stream: RngStream) -> Vec<F> {
    if sigma_rpn == F::zero() {
        return vec![F::zero(); count];
    }
    let mut rng = stream.rng();
    (0..count)
        .map(|_| F::standard_normal(&mut rng) * sigma_rpn)
        .collect()
}

/// Residual-phase-noise surrogate: x[k] * exp(j*theta_k) with memoryless
/// theta_k, unlike the Wiener random walk.
pub fn rpn<F: Real>(x: &[Complex<F>], sigma_rpn: F, stream: RngStream) -> Vec<Complex<F>> {
    let phases = rpn_phases(x.len(), sigma_rpn, stream);
    apply_phase(x, &phases).expect("equal lengths by construction")
}
