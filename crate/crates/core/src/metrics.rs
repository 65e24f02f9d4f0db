//! BMI and BER estimation, the exact-posterior AWGN oracle, and the
//! SNR x linewidth validation harness driving the hard BPS.

use num_complex::Complex;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, streams, RngStream};
use crate::constellation::Constellation;
use crate::cpe::{self, BpsConfig, BpsMode};
use crate::error::{Error, Result};
use crate::learn::RxParams;
use crate::real::Real;
use crate::tensor::Tensor;

/// One grid point of a validation sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord<F> {
    pub snr_db: F,
    pub linewidth_hz: F,
    /// Mean BMI over runs (bit/symbol).
    pub bmi_mean: F,
    /// Sample standard deviation of the per-run BMI.
    pub bmi_std: F,
    pub ber_mean: F,
    pub runs: usize,
    pub symbols_per_run: usize,
}

/// Masked-mean binary cross-entropy in nats over (symbol, bit) positions,
/// probabilities clamped to [1e-12, 1 - 1e-12] before the logs.
pub fn masked_bce_nats<F: Real>(bits: &[u8], probs: &Tensor<F>, mask: &[bool]) -> Result<F> {
    let (rows, m) = probs.shape();
    if bits.len() != rows * m {
        return Err(Error::Shape(format!(
            "{} bits for a {rows} x {m} probability matrix",
            bits.len()
        )));
    }
    if mask.len() != rows {
        return Err(Error::Shape(format!(
            "mask length {} vs {rows} rows",
            mask.len()
        )));
    }
    let valid = mask.iter().filter(|&&v| v).count();
    if valid == 0 {
        return Err(Error::DegenerateBatch);
    }
    let eps = F::lit(1e-12);
    let one = F::one();
    let mut acc = F::zero();
    for r in 0..rows {
        if !mask[r] {
            continue;
        }
        for (i, &p) in probs.row(r).iter().enumerate() {
            let pc = p.max(eps).min(one - eps);
            acc += if bits[r * m + i] == 1 {
                -pc.ln()
            } else {
                -(one - pc).ln()
            };
        }
    }
    Ok(acc / F::from_usize(valid * m).unwrap())
}

/// Bit-wise mutual information from per-bit posteriors:
/// BMI = m - (1/ln 2) * (m * masked-mean BCE in nats). May be negative
/// for a worse-than-random demapper; reported unclamped.
pub fn bmi_from_posteriors<F: Real>(bits: &[u8], probs: &Tensor<F>, mask: &[bool]) -> Result<F> {
    let m = F::from_usize(probs.cols()).unwrap();
    let bce = masked_bce_nats(bits, probs, mask)?;
    Ok(m - m * bce / F::LN_2())
}

/// Hard-threshold bit error rate over unmasked positions. The decision is
/// `p > 0.5`, so a posterior of exactly 0.5 decides 0 and counts as an
/// error whenever the true bit is 1.
pub fn ber<F: Real>(bits: &[u8], probs: &Tensor<F>, mask: &[bool]) -> Result<F> {
    let (rows, m) = probs.shape();
    if bits.len() != rows * m || mask.len() != rows {
        return Err(Error::Shape("ber input dimensions".into()));
    }
    let valid = mask.iter().filter(|&&v| v).count();
    if valid == 0 {
        return Err(Error::DegenerateBatch);
    }
    let half = F::lit(0.5);
    let mut errors = 0usize;
    for r in 0..rows {
        if !mask[r] {
            continue;
        }
        for (i, &p) in probs.row(r).iter().enumerate() {
            let decided = u8::from(p > half);
            if decided != bits[r * m + i] {
                errors += 1;
            }
        }
    }
    Ok(F::from_usize(errors).unwrap() / F::from_usize(valid * m).unwrap())
}

/// Exact per-bit posteriors P(b_j = 1 | y) under AWGN with uniform
/// priors, via Gaussian likelihoods over all constellation points.
fn exact_bit_posteriors_into<F: Real>(
    c: &Constellation<F>,
    noise_var: F,
    y: Complex<F>,
    exps: &mut Vec<F>,
    out_row: &mut [F],
) {
    let m = c.order_m();
    exps.clear();
    let mut max_ll = F::neg_infinity();
    for p in c.points() {
        let ll = -(y - p).norm_sqr() / noise_var;
        exps.push(ll);
        if ll > max_ll {
            max_ll = ll;
        }
    }
    let mut total = F::zero();
    for e in exps.iter_mut() {
        *e = (*e - max_ll).exp();
        total += *e;
    }
    for j in 0..m {
        let mut ones = F::zero();
        for (i, &e) in exps.iter().enumerate() {
            if c.label_bit(i, j) == 1 {
                ones += e;
            }
        }
        out_row[j as usize] = ones / total;
    }
}

/// Monte-Carlo estimate with its sampling uncertainty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleEstimate<F> {
    pub bmi: F,
    /// Half-width of the 95% confidence interval.
    pub ci95: F,
    pub samples: usize,
}

/// Monte-Carlo BMI of a constellation on pure AWGN with exact bit-metric
/// demapping (no CPE, no learned parts) - the independent reference the
/// learned pipeline is checked against.
pub fn awgn_bmi_oracle<F: Real>(
    c: &Constellation<F>,
    snr_db: F,
    samples: usize,
    stream: RngStream,
) -> OracleEstimate<F> {
    let m = c.order_m() as usize;
    let noise_var = F::lit(10.0).powf(-snr_db / F::lit(10.0));
    let sigma = (noise_var / F::lit(2.0)).sqrt();
    let mut rng = stream.rng();
    let mut exps: Vec<F> = Vec::with_capacity(c.size());
    let mut row = vec![F::zero(); m];
    let mut mean = F::zero();
    let mut m2 = F::zero();
    let mf = F::from_usize(m).unwrap();
    let eps = F::lit(1e-300);
    for n in 1..=samples {
        let i: usize = rng.gen_range(0..c.size());
        let x = c.points()[i];
        let y = Complex::new(
            x.re + F::standard_normal(&mut rng) * sigma,
            x.im + F::standard_normal(&mut rng) * sigma,
        );
        exact_bit_posteriors_into(c, noise_var, y, &mut exps, &mut row);
        let mut info = mf;
        for j in 0..m {
            let p_true = if c.label_bit(i, j as u32) == 1 {
                row[j]
            } else {
                F::one() - row[j]
            };
            info += p_true.max(eps).log2();
        }
        // Welford
        let nf = F::from_usize(n).unwrap();
        let delta = info - mean;
        mean += delta / nf;
        m2 += delta * (info - mean);
    }
    let var = if samples > 1 {
        m2 / F::from_usize(samples - 1).unwrap()
    } else {
        F::zero()
    };
    OracleEstimate {
        bmi: mean,
        ci95: F::lit(1.96) * (var / F::from_usize(samples).unwrap()).sqrt(),
        samples,
    }
}

/// Symbol-metric mutual information on the same Monte-Carlo scheme;
/// exists for the BMI <= MI <= m ordering check.
pub fn awgn_mi_oracle<F: Real>(
    c: &Constellation<F>,
    snr_db: F,
    samples: usize,
    stream: RngStream,
) -> OracleEstimate<F> {
    let noise_var = F::lit(10.0).powf(-snr_db / F::lit(10.0));
    let sigma = (noise_var / F::lit(2.0)).sqrt();
    let mut rng = stream.rng();
    let log2m = F::from_usize(c.size()).unwrap().log2();
    let mut mean = F::zero();
    let mut m2 = F::zero();
    for n in 1..=samples {
        let i: usize = rng.gen_range(0..c.size());
        let x = c.points()[i];
        let y = Complex::new(
            x.re + F::standard_normal(&mut rng) * sigma,
            x.im + F::standard_normal(&mut rng) * sigma,
        );
        let mut max_ll = F::neg_infinity();
        let lls: Vec<F> = c
            .points()
            .iter()
            .map(|p| {
                let ll = -(y - p).norm_sqr() / noise_var;
                if ll > max_ll {
                    max_ll = ll;
                }
                ll
            })
            .collect();
        let mut total = F::zero();
        for &ll in &lls {
            total += (ll - max_ll).exp();
        }
        let p_true = (lls[i] - max_ll).exp() / total;
        let info = log2m + p_true.max(F::lit(1e-300)).log2();
        let nf = F::from_usize(n).unwrap();
        let delta = info - mean;
        mean += delta / nf;
        m2 += delta * (info - mean);
    }
    let var = if samples > 1 {
        m2 / F::from_usize(samples - 1).unwrap()
    } else {
        F::zero()
    };
    OracleEstimate {
        bmi: mean,
        ci95: F::lit(1.96) * (var / F::from_usize(samples).unwrap()).sqrt(),
        samples,
    }
}

/// Anything that turns corrected symbols into per-bit posteriors.
pub trait Demapper<F: Real>: Sync {
    fn order_m(&self) -> u32;
    fn posteriors(&self, symbols: &[Complex<F>]) -> Tensor<F>;
}

impl<F: Real> Demapper<F> for RxParams<F> {
    fn order_m(&self) -> u32 {
        RxParams::order_m(self)
    }

    fn posteriors(&self, symbols: &[Complex<F>]) -> Tensor<F> {
        self.forward(&Tensor::from_complex(symbols))
    }
}

/// Exact AWGN bit-metric demapper; the oracle counterpart of a trained Rx.
pub struct ExactAwgnDemapper<'a, F> {
    pub constellation: &'a Constellation<F>,
    pub snr_db: F,
}

impl<F: Real> Demapper<F> for ExactAwgnDemapper<'_, F> {
    fn order_m(&self) -> u32 {
        self.constellation.order_m()
    }

    fn posteriors(&self, symbols: &[Complex<F>]) -> Tensor<F> {
        let m = self.constellation.order_m() as usize;
        let noise_var = F::lit(10.0).powf(-self.snr_db / F::lit(10.0));
        let mut out = Tensor::zeros(symbols.len(), m);
        let mut exps = Vec::with_capacity(self.constellation.size());
        for (k, &y) in symbols.iter().enumerate() {
            exact_bit_posteriors_into(self.constellation, noise_var, y, &mut exps, out.row_mut(k));
        }
        out
    }
}

/// Estimate and remove one global rotation by maximizing correlation
/// against the known transmit sequence over (up to) the first 10^3
/// symbols. Returns the de-rotated sequence and the removed angle.
pub fn align_global_rotation<F: Real>(
    corrected: &[Complex<F>],
    tx: &[Complex<F>],
    valid_mask: &[bool],
) -> (Vec<Complex<F>>, F) {
    let mut acc = Complex::new(F::zero(), F::zero());
    let mut used = 0usize;
    for k in 0..corrected.len().min(1000) {
        if valid_mask[k] {
            acc = acc + corrected[k] * tx[k].conj();
            used += 1;
        }
    }
    if used == 0 || acc.norm_sqr() == F::zero() {
        return (corrected.to_vec(), F::zero());
    }
    let theta = acc.arg();
    let rot = Complex::from_polar(F::one(), -theta);
    (corrected.iter().map(|z| z * rot).collect(), theta)
}

/// Count block-to-block jumps of the residual rotation (cycle slips).
/// The residual angle is estimated per block of valid symbols by
/// correlation against the transmit sequence; a jump larger than pi/4
/// between consecutive blocks counts as one slip.
pub fn count_slips<F: Real>(
    corrected: &[Complex<F>],
    tx: &[Complex<F>],
    valid_mask: &[bool],
) -> usize {
    const BLOCK: usize = 1000;
    let mut angles = Vec::new();
    let mut acc = Complex::new(F::zero(), F::zero());
    let mut in_block = 0usize;
    for k in 0..corrected.len() {
        if !valid_mask[k] {
            continue;
        }
        acc = acc + corrected[k] * tx[k].conj();
        in_block += 1;
        if in_block == BLOCK {
            angles.push(acc.arg());
            acc = Complex::new(F::zero(), F::zero());
            in_block = 0;
        }
    }
    let threshold = F::FRAC_PI_4();
    angles
        .windows(2)
        .filter(|w| {
            let mut d = w[1] - w[0];
            while d > F::PI() {
                d -= F::TAU();
            }
            while d < -F::PI() {
                d += F::TAU();
            }
            d.abs() > threshold
        })
        .count()
}

#[derive(Clone, Debug)]
pub struct ValidationConfig<F> {
    pub snr_db: Vec<F>,
    pub linewidth_hz: Vec<F>,
    pub runs: usize,
    pub symbols_per_run: usize,
    pub symbol_rate_baud: F,
    /// BPS settings; the mode is forced to hard for validation.
    pub bps: BpsConfig<F>,
    pub seed: u64,
    /// Remove one global rotation per run (for rotationally symmetric
    /// baselines such as Gray QAM; slip events are reported separately).
    pub align_rotation: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct RunStats<F> {
    pub bmi: F,
    pub ber: F,
    pub slips: usize,
}

#[derive(Clone, Debug)]
pub struct GridDiagnostics<F> {
    pub snr_db: F,
    pub linewidth_hz: F,
    pub run_stats: Vec<RunStats<F>>,
}

/// Full validation protocol: per grid point and run, fresh seeds drive
/// bits, AWGN and a Wiener trajectory through the hard BPS, the demapper
/// produces posteriors, and BMI/BER are taken over the valid mask.
/// Runs execute in parallel; aggregation order is fixed by run index.
pub fn validate<F: Real, D: Demapper<F>>(
    c: &Constellation<F>,
    demapper: &D,
    cfg: &ValidationConfig<F>,
) -> Result<Vec<EvalRecord<F>>> {
    validate_detailed(c, demapper, cfg).map(|(records, _)| records)
}

pub fn validate_detailed<F: Real, D: Demapper<F>>(
    c: &Constellation<F>,
    demapper: &D,
    cfg: &ValidationConfig<F>,
) -> Result<(Vec<EvalRecord<F>>, Vec<GridDiagnostics<F>>)> {
    if demapper.order_m() != c.order_m() {
        return Err(Error::Shape(format!(
            "demapper emits {} bits but the constellation has order {}",
            demapper.order_m(),
            c.order_m()
        )));
    }
    if cfg.symbols_per_run <= 2 * cfg.bps.half_window {
        return Err(Error::InsufficientLength {
            len: cfg.symbols_per_run,
            half_window: cfg.bps.half_window,
        });
    }
    if cfg.runs == 0 {
        return Err(Error::Config("runs must be >= 1".into()));
    }
    let hard = BpsConfig {
        mode: BpsMode::Hard,
        ..cfg.bps
    };
    hard.validate()?;

    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    let mut grid_index = 0u64;
    for &snr_db in &cfg.snr_db {
        for &linewidth_hz in &cfg.linewidth_hz {
            let sigma_phi2 = channel::sigma_phi2(linewidth_hz, cfg.symbol_rate_baud)?;
            let stats: Result<Vec<RunStats<F>>> = (0..cfg.runs)
                .into_par_iter()
                .map(|run| {
                    single_run(
                        c,
                        demapper,
                        snr_db,
                        sigma_phi2,
                        &hard,
                        cfg.symbols_per_run,
                        cfg.align_rotation,
                        cfg.seed,
                        grid_index,
                        run as u64,
                    )
                })
                .collect();
            let stats = stats?;
            let nf = F::from_usize(cfg.runs).unwrap();
            let bmi_mean = stats.iter().fold(F::zero(), |a, s| a + s.bmi) / nf;
            let ber_mean = stats.iter().fold(F::zero(), |a, s| a + s.ber) / nf;
            let bmi_std = if cfg.runs > 1 {
                let ss = stats.iter().fold(F::zero(), |a, s| {
                    a + (s.bmi - bmi_mean) * (s.bmi - bmi_mean)
                });
                (ss / F::from_usize(cfg.runs - 1).unwrap()).sqrt()
            } else {
                F::zero()
            };
            records.push(EvalRecord {
                snr_db,
                linewidth_hz,
                bmi_mean,
                bmi_std,
                ber_mean,
                runs: cfg.runs,
                symbols_per_run: cfg.symbols_per_run,
            });
            diagnostics.push(GridDiagnostics {
                snr_db,
                linewidth_hz,
                run_stats: stats,
            });
            grid_index += 1;
        }
    }
    Ok((records, diagnostics))
}

#[allow(clippy::too_many_arguments)]
fn single_run<F: Real, D: Demapper<F>>(
    c: &Constellation<F>,
    demapper: &D,
    snr_db: F,
    sigma_phi2: F,
    bps_cfg: &BpsConfig<F>,
    symbols_per_run: usize,
    align: bool,
    seed: u64,
    grid_index: u64,
    run: u64,
) -> Result<RunStats<F>> {
    let m = c.order_m() as usize;
    let mut label_to_index = vec![0usize; c.size()];
    for (i, &l) in c.labels().iter().enumerate() {
        label_to_index[l as usize] = i;
    }
    let mut rng = RngStream::new(seed, streams::id(streams::VAL_BITS, grid_index, run)).rng();
    let mut bits = Vec::with_capacity(symbols_per_run * m);
    let mut tx = Vec::with_capacity(symbols_per_run);
    for _ in 0..symbols_per_run {
        let label: u32 = rng.gen_range(0..c.size() as u32);
        for j in 0..m {
            bits.push(((label >> (m - 1 - j)) & 1) as u8);
        }
        tx.push(c.points()[label_to_index[label as usize]]);
    }
    let noisy = channel::awgn(
        &tx,
        snr_db,
        RngStream::new(seed, streams::id(streams::VAL_AWGN, grid_index, run)),
    );
    let phi = channel::wiener_phase(
        symbols_per_run,
        sigma_phi2,
        RngStream::new(seed, streams::id(streams::VAL_PHASE, grid_index, run)),
    );
    let z = channel::apply_phase(&noisy, &phi)?;
    let out = cpe::bps(&z, c, bps_cfg)?;
    let corrected = if align {
        align_global_rotation(&out.corrected, &tx, &out.valid_mask).0
    } else {
        out.corrected
    };
    let slips = count_slips(&corrected, &tx, &out.valid_mask);
    let probs = demapper.posteriors(&corrected);
    let bmi = bmi_from_posteriors(&bits, &probs, &out.valid_mask)?;
    let ber_v = ber(&bits, &probs, &out.valid_mask)?;
    Ok(RunStats {
        bmi,
        ber: ber_v,
        slips,
    })
}

/// Fig.-3-style table for one SNR: header plus one
/// `linewidth mean stddev` row per linewidth (space separated,
/// linewidth in Hz).
pub fn format_bmi_table<F: Real>(records: &[EvalRecord<F>]) -> String {
    let mut out = String::from("linewidth mean stddev\n");
    for r in records {
        out.push_str(&format!(
            "{} {:.6} {:.6}\n",
            r.linewidth_hz, r.bmi_mean, r.bmi_std
        ));
    }
    out
}
