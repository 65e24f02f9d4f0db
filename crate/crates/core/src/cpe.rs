//! Carrier phase estimation via blind phase search (BPS).
//!
//! Both the original hard-decision BPS and its softmin relaxation share
//! one pipeline: per-symbol distances over a grid of test phases, a
//! sliding window along the sequence, a selection step (argmin or a
//! temperature softmin), and a phase unwrap. The soft variant makes the
//! whole map differentiable, which is what the training loop needs.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BpsMode {
    Hard,
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BpsConfig<F> {
    /// Number of test phases L inside (-pi, pi).
    pub num_test_phases: usize,
    /// Half-window N; the sliding window spans 2N+1 symbols.
    pub half_window: usize,
    pub mode: BpsMode,
    /// Softmin temperature; only meaningful in soft mode.
    pub temperature: F,
}

impl<F: Real> BpsConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if self.num_test_phases < 2 {
            return Err(Error::Config(format!(
                "num_test_phases must be >= 2, got {}",
                self.num_test_phases
            )));
        }
        if self.mode == BpsMode::Soft && !(self.temperature > F::zero()) {
            return Err(Error::Config(format!(
                "soft BPS needs temperature > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CpeOutput<F> {
    /// Phase-corrected symbols z[k] * exp(j * phase_estimates[k]).
    pub corrected: Vec<Complex<F>>,
    /// Unwrapped phase estimates (rad).
    pub phase_estimates: Vec<F>,
    /// False where the window was truncated (first N and last N symbols).
    pub valid_mask: Vec<bool>,
}

/// Test-phase grid phi_b = -pi + 2*pi*(b + 1/2)/L for b in 0..L:
/// uniformly spaced, strictly inside (-pi, pi), symmetric about zero.
pub fn test_phase_grid<F: Real>(l: usize) -> Result<Vec<F>> {
    if l < 2 {
        return Err(Error::Config(format!("need at least 2 test phases, got {l}")));
    }
    let lf = F::from_usize(l).unwrap();
    Ok((0..l)
        .map(|b| {
            let bf = F::from_usize(b).unwrap() + F::lit(0.5);
            -F::PI() + F::TAU() * bf / lf
        })
        .collect())
}

/// Hot kernel: per (symbol, test phase), the squared distance to the
/// nearest constellation point, optionally recording which point won.
/// Row-major K x L output, parallel over symbol chunks with a fixed
/// reduction order, so results do not depend on the thread count.
fn distance_kernel<F: Real>(
    z: &[Complex<F>],
    points: &[Complex<F>],
    rotations: &[Complex<F>],
    d_out: &mut [F],
    mut idx_out: Option<&mut [u32]>,
) {
    let l = rotations.len();
    debug_assert_eq!(d_out.len(), z.len() * l);

    let fill_row = |zk: Complex<F>, d_row: &mut [F], mut idx_row: Option<&mut [u32]>| {
        for (b, w) in rotations.iter().enumerate() {
            let zr = zk * w;
            let mut best = F::infinity();
            let mut best_i = 0u32;
            for (i, p) in points.iter().enumerate() {
                let dr = zr.re - p.re;
                let di = zr.im - p.im;
                let dd = dr * dr + di * di;
                if dd < best {
                    best = dd;
                    best_i = i as u32;
                }
            }
            d_row[b] = best;
            if let Some(row) = idx_row.as_deref_mut() {
                row[b] = best_i;
            }
        }
    };

    const ROWS_PER_TASK: usize = 128;
    let chunk = ROWS_PER_TASK * l;
    match idx_out.as_deref_mut() {
        Some(idx) => {
            d_out
                .par_chunks_mut(chunk)
                .zip_eq(idx.par_chunks_mut(chunk))
                .zip_eq(z.par_chunks(ROWS_PER_TASK))
                .for_each(|((dc, ic), zc)| {
                    for (k, &zk) in zc.iter().enumerate() {
                        fill_row(zk, &mut dc[k * l..(k + 1) * l], Some(&mut ic[k * l..(k + 1) * l]));
                    }
                });
        }
        None => {
            d_out
                .par_chunks_mut(chunk)
                .zip_eq(z.par_chunks(ROWS_PER_TASK))
                .for_each(|(dc, zc)| {
                    for (k, &zk) in zc.iter().enumerate() {
                        fill_row(zk, &mut dc[k * l..(k + 1) * l], None);
                    }
                });
        }
    }
}

pub(crate) fn phase_rotations<F: Real>(phases: &[F]) -> Vec<Complex<F>> {
    phases
        .iter()
        .map(|&p| Complex::from_polar(F::one(), p))
        .collect()
}

/// d[k][b] = min over constellation points p of |z[k] e^{j phi_b} - p|^2.
pub fn distances<F: Real>(
    z: &[Complex<F>],
    c: &Constellation<F>,
    phases: &[F],
) -> Tensor<F> {
    distances_with_indices(z, c.points(), phases).0
}

/// Distance matrix plus the index of the nearest point per (k, b); the
/// indices are what gradients flow through during training.
pub(crate) fn distances_with_indices<F: Real>(
    z: &[Complex<F>],
    points: &[Complex<F>],
    phases: &[F],
) -> (Tensor<F>, Vec<u32>) {
    let l = phases.len();
    let rotations = phase_rotations(phases);
    let mut d = Tensor::zeros(z.len(), l);
    let mut idx = vec![0u32; z.len() * l];
    distance_kernel(z, points, &rotations, d.data_mut(), Some(&mut idx));
    (d, idx)
}

/// Sliding-window sums s[k][b] = sum_{n=-N..N} d[k-n][b], truncated at
/// the sequence edges. O(K*L) via a rolling row accumulator that is
/// re-anchored periodically to bound float drift.
pub fn window_sums<F: Real>(d: &Tensor<F>, half_window: usize) -> Tensor<F> {
    let (k_len, l) = d.shape();
    let n = half_window;
    let mut s = Tensor::zeros(k_len, l);
    if k_len == 0 || l == 0 {
        return s;
    }
    const ANCHOR_EVERY: usize = 8192;
    let mut running = vec![F::zero(); l];
    for k in 0..k_len {
        if k % ANCHOR_EVERY == 0 {
            running.iter_mut().for_each(|v| *v = F::zero());
            let lo = k.saturating_sub(n);
            let hi = (k + n).min(k_len - 1);
            for r in lo..=hi {
                for (acc, &v) in running.iter_mut().zip(d.row(r)) {
                    *acc += v;
                }
            }
        } else {
            if k + n < k_len {
                for (acc, &v) in running.iter_mut().zip(d.row(k + n)) {
                    *acc += v;
                }
            }
            if k >= n + 1 {
                for (acc, &v) in running.iter_mut().zip(d.row(k - n - 1)) {
                    *acc -= v;
                }
            }
        }
        s.row_mut(k).copy_from_slice(&running);
    }
    s
}

/// Per row, the test phase whose windowed sum is smallest; ties go to
/// the lowest phase index.
pub fn hard_select<F: Real>(s: &Tensor<F>, phases: &[F]) -> Vec<F> {
    assert_eq!(s.cols(), phases.len(), "phase count mismatch");
    (0..s.rows())
        .map(|k| {
            let row = s.row(k);
            let mut best = F::infinity();
            let mut best_b = 0;
            for (b, &v) in row.iter().enumerate() {
                if v < best {
                    best = v;
                    best_b = b;
                }
            }
            phases[best_b]
        })
        .collect()
}

/// softmin with temperature: out_i = exp(-x_i/t) / sum_j exp(-x_j/t),
/// stabilized by subtracting min(x) before exponentiation. NaN inputs
/// propagate to the output.
pub fn softmin_t<F: Real>(x: &[F], t: F) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    softmin_t_into(x, t, &mut out);
    out
}

pub(crate) fn softmin_t_into<F: Real>(x: &[F], t: F, out: &mut [F]) {
    debug_assert!(t > F::zero());
    let has_nan = x.iter().any(|v| v.is_nan());
    if has_nan {
        out.iter_mut().for_each(|v| *v = F::nan());
        return;
    }
    let min = x.iter().fold(F::infinity(), |a, &b| a.min(b));
    let mut sum = F::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        let e = (-(v - min) / t).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Differentiable selection: out[k] = phases . softmin_t(s[k]).
pub fn soft_select<F: Real>(s: &Tensor<F>, phases: &[F], t: F) -> Vec<F> {
    assert_eq!(s.cols(), phases.len(), "phase count mismatch");
    let mut weights = vec![F::zero(); phases.len()];
    (0..s.rows())
        .map(|k| {
            softmin_t_into(s.row(k), t, &mut weights);
            weights
                .iter()
                .zip(phases)
                .fold(F::zero(), |acc, (&w, &p)| acc + w * p)
        })
        .collect()
}

/// Remove 2*pi jumps: out[0] = phi[0] and
/// out[k] = phi[k] + 2*pi*round((out[k-1] - phi[k]) / (2*pi)).
pub fn unwrap_phases<F: Real>(phi: &[F]) -> Vec<F> {
    let mut out = Vec::with_capacity(phi.len());
    let mut prev = F::zero();
    for (k, &p) in phi.iter().enumerate() {
        let v = if k == 0 {
            p
        } else {
            p + F::TAU() * ((prev - p) / F::TAU()).round()
        };
        out.push(v);
        prev = v;
    }
    out
}

/// Full BPS: distances -> window sums -> (hard | soft) selection ->
/// unwrap, then rotate the input by the estimates.
pub fn bps<F: Real>(
    z: &[Complex<F>],
    c: &Constellation<F>,
    cfg: &BpsConfig<F>,
) -> Result<CpeOutput<F>> {
    cfg.validate()?;
    let n = cfg.half_window;
    if z.len() <= 2 * n {
        return Err(Error::InsufficientLength {
            len: z.len(),
            half_window: n,
        });
    }
    let phases = test_phase_grid(cfg.num_test_phases)?;
    let d = distances(z, c, &phases);
    let s = window_sums(&d, n);
    let raw = match cfg.mode {
        BpsMode::Hard => hard_select(&s, &phases),
        BpsMode::Soft => soft_select(&s, &phases, cfg.temperature),
    };
    let phase_estimates = unwrap_phases(&raw);
    let corrected = z
        .iter()
        .zip(&phase_estimates)
        .map(|(&zk, &e)| zk * Complex::from_polar(F::one(), e))
        .collect();
    let valid_mask = (0..z.len()).map(|k| k >= n && k + n < z.len()).collect();
    Ok(CpeOutput {
        corrected,
        phase_estimates,
        valid_mask,
    })
}

/// Geometric interpolation from t_start at step 0 to t_end at
/// step == total_steps; monotone nonincreasing.
pub fn temperature_schedule<F: Real>(
    step: usize,
    total_steps: usize,
    t_start: F,
    t_end: F,
) -> Result<F> {
    if !(t_end > F::zero()) {
        return Err(Error::Config(format!("t_end must be > 0, got {t_end}")));
    }
    if t_start < t_end {
        return Err(Error::Config(format!(
            "t_start must be >= t_end, got {t_start} < {t_end}"
        )));
    }
    if step > total_steps {
        return Err(Error::Config(format!(
            "step {step} outside 0..={total_steps}"
        )));
    }
    if total_steps == 0 {
        return Ok(t_end);
    }
    let frac = F::from_usize(step).unwrap() / F::from_usize(total_steps).unwrap();
    Ok(t_start * (t_end / t_start).powf(frac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{self, RngStream};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn qpsk() -> Constellation<f64> {
        Constellation::gray_qam(2).unwrap()
    }

    /// Brute-force oracle: the literal double loop over (phase, point).
    fn distances_oracle(
        z: &[Complex<f64>],
        c: &Constellation<f64>,
        phases: &[f64],
    ) -> Vec<Vec<f64>> {
        z.iter()
            .map(|&zk| {
                phases
                    .iter()
                    .map(|&phi| {
                        let zr = zk * Complex::from_polar(1.0, phi);
                        c.points()
                            .iter()
                            .map(|&p| (zr - p).norm_sqr())
                            .fold(f64::INFINITY, f64::min)
                    })
                    .collect()
            })
            .collect()
    }

    /// Naive window-sum oracle, O(K*L*N).
    fn window_sums_oracle(d: &Tensor<f64>, n: usize) -> Tensor<f64> {
        let (k_len, l) = d.shape();
        let mut s = Tensor::zeros(k_len, l);
        for k in 0..k_len {
            for b in 0..l {
                let mut acc = 0.0;
                for off in -(n as isize)..=(n as isize) {
                    let j = k as isize - off;
                    if j >= 0 && (j as usize) < k_len {
                        acc += d.get(j as usize, b);
                    }
                }
                s.set(k, b, acc);
            }
        }
        s
    }

    #[test]
    fn grid_examples() {
        let g = test_phase_grid::<f64>(4).unwrap();
        let want = [-3.0 * PI / 4.0, -PI / 4.0, PI / 4.0, 3.0 * PI / 4.0];
        for (a, b) in g.iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let g = test_phase_grid::<f64>(2).unwrap();
        assert_abs_diff_eq!(g[0], -PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], PI / 2.0, epsilon = 1e-12);

        let g = test_phase_grid::<f64>(60).unwrap();
        for w in g.windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], 2.0 * PI / 60.0, epsilon = 1e-12);
        }
        let max = g.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
        assert_abs_diff_eq!(max, PI - PI / 60.0, epsilon = 1e-12);
        // symmetric about zero
        for (a, b) in g.iter().zip(g.iter().rev()) {
            assert_abs_diff_eq!(*a, -*b, epsilon = 1e-12);
        }
        assert!(test_phase_grid::<f64>(1).is_err());
    }

    #[test]
    fn distances_exact_rotation_hits_zero() {
        let c = qpsk();
        let phases = test_phase_grid::<f64>(8).unwrap();
        for (i, &p) in c.points().iter().enumerate() {
            for (b, &phi) in phases.iter().enumerate() {
                let z = vec![p * Complex::from_polar(1.0, -phi)];
                let d = distances(&z, &c, &phases);
                assert_abs_diff_eq!(d.get(0, b), 0.0, epsilon = 1e-24);
                let _ = i;
            }
        }
    }

    #[test]
    fn distances_origin_is_unit_for_qpsk() {
        let c = qpsk();
        let phases = test_phase_grid::<f64>(8).unwrap();
        let d = distances(&[Complex::new(0.0, 0.0)], &c, &phases);
        for b in 0..8 {
            assert_relative_eq!(d.get(0, b), 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn distances_match_brute_force() {
        let c = qpsk();
        let phases = test_phase_grid::<f64>(8).unwrap();
        let z = channel::awgn(
            &vec![Complex::new(0.3, -0.2); 200],
            5.0,
            RngStream::new(1, 1),
        );
        let d = distances(&z, &c, &phases);
        let oracle = distances_oracle(&z, &c, &phases);
        for k in 0..z.len() {
            for b in 0..8 {
                assert_relative_eq!(d.get(k, b), oracle[k][b], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn window_sums_identity_and_hand_example() {
        let d = Tensor::from_vec(3, 1, vec![1.0, 2.0, 3.0]);
        assert_eq!(window_sums(&d, 0), d);
        let s = window_sums(&d, 1);
        assert_eq!(s.data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn window_sums_match_naive_oracle() {
        // integer-valued entries: rolling must equal naive exactly
        let mut rng_state = 123u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((rng_state >> 33) % 17) as f64
        };
        let d = Tensor::from_vec(200, 8, (0..1600).map(|_| next()).collect());
        let s = window_sums(&d, 7);
        let oracle = window_sums_oracle(&d, 7);
        assert_eq!(s, oracle);

        // float entries: within 1e-9
        let df = Tensor::from_vec(
            500,
            6,
            (0..3000).map(|_| next() * 0.137 + 0.001).collect(),
        );
        for n in [0usize, 1, 3, 60, 600] {
            let s = window_sums(&df, n);
            let oracle = window_sums_oracle(&df, n);
            for (a, b) in s.data().iter().zip(oracle.data()) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn hard_select_examples() {
        let phases = [-PI / 2.0, 0.0, PI / 2.0];
        let s = Tensor::from_vec(2, 3, vec![5.0, 1.0, 7.0, 2.0, 2.0, 2.0]);
        let out = hard_select(&s, &phases);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], -PI / 2.0); // tie -> lowest index

        // random rows equal a linear scan oracle, and argmin is invariant
        // to positive rescaling
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(99);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let s = Tensor::from_vec(50, 3, (0..150).map(|_| next()).collect());
        let scaled = Tensor::from_vec(50, 3, s.data().iter().map(|v| v * 3.5).collect());
        let out = hard_select(&s, &phases);
        let out_scaled = hard_select(&scaled, &phases);
        for k in 0..50 {
            let row = s.row(k);
            let mut bi = 0;
            for b in 1..3 {
                if row[b] < row[bi] {
                    bi = b;
                }
            }
            assert_eq!(out[k], phases[bi]);
            assert_eq!(out[k], out_scaled[k]);
        }
    }

    #[test]
    fn softmin_examples() {
        let w = softmin_t(&[0.0, 0.0], 1.0);
        assert_eq!(w, vec![0.5, 0.5]);

        let w = softmin_t(&[0.0, 3.0f64.ln()], 1.0);
        assert_relative_eq!(w[0], 0.75, max_relative = 1e-12);
        assert_relative_eq!(w[1], 0.25, max_relative = 1e-12);

        let w = softmin_t(&[1.0, 2.0, 3.0], 0.001);
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[2], 0.0, epsilon = 1e-12);

        let w = softmin_t(&[1.0, f64::NAN], 1.0);
        assert!(w.iter().all(|v| v.is_nan()));
    }

    #[test]
    fn soft_select_examples() {
        let phases = test_phase_grid::<f64>(8).unwrap();
        // one entry far smaller -> near one-hot at low temperature
        let mut row = vec![10.0; 8];
        row[5] = 0.0;
        let s = Tensor::from_vec(1, 8, row);
        let out = soft_select(&s, &phases, 0.001);
        assert_abs_diff_eq!(out[0], phases[5], epsilon = 1e-6);

        // constant row -> 0 by grid symmetry
        let s = Tensor::from_vec(1, 8, vec![4.2; 8]);
        let out = soft_select(&s, &phases, 0.7);
        assert_abs_diff_eq!(out[0], 0.0, epsilon = 1e-12);

        // matches the explicit weighted average
        let vals: Vec<f64> = (0..16).map(|i| ((i * 37 % 11) as f64) * 0.3 + 0.1).collect();
        let s = Tensor::from_vec(2, 8, vals);
        let out = soft_select(&s, &phases, 0.5);
        for k in 0..2 {
            let w = softmin_t(s.row(k), 0.5);
            let want: f64 = w.iter().zip(&phases).map(|(a, b)| a * b).sum();
            assert_abs_diff_eq!(out[k], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn unwrap_examples() {
        let out = unwrap_phases(&[0.1, 0.2, 0.3]);
        assert_eq!(out, vec![0.1, 0.2, 0.3]);

        let out = unwrap_phases(&[3.0, -3.0]);
        assert_abs_diff_eq!(out[1], -3.0 + 2.0 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 3.2832, epsilon = 1e-4);

        let out = unwrap_phases(&[-3.0, 3.0]);
        assert_abs_diff_eq!(out[1], 3.0 - 2.0 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], -3.2832, epsilon = 1e-4);
    }

    /// Rotationally asymmetric fixture: seeded circular-Gaussian points
    /// with identity labels. Square QAM is exactly invariant under 90
    /// degree rotation, so its BPS landscape has four bit-identical
    /// minima and the argmin is decided by float rounding; random point
    /// clouds have a unique optimum the estimator can lock onto, which
    /// is the regime the soft BPS is built for.
    fn random_constellation(m: u32, seed: u64) -> Constellation<f64> {
        let mut rng = RngStream::new(seed, 0).rng();
        let size = 1usize << m;
        let points: Vec<Complex<f64>> = (0..size)
            .map(|_| {
                Complex::new(
                    f64::standard_normal(&mut rng),
                    f64::standard_normal(&mut rng),
                )
            })
            .collect();
        Constellation::new(points, (0..size as u32).collect(), m)
            .unwrap()
            .normalized()
            .unwrap()
    }

    fn draw_symbols(c: &Constellation<f64>, count: usize, stream: RngStream) -> Vec<Complex<f64>> {
        let mut rng = stream.rng();
        (0..count)
            .map(|_| c.points()[rand::Rng::gen_range(&mut rng, 0..c.size())])
            .collect()
    }

    #[test]
    fn bps_noiseless_fixed_point() {
        let c = random_constellation(3, 41);
        let l = 16;
        let cfg = BpsConfig {
            num_test_phases: l,
            half_window: 4,
            mode: BpsMode::Hard,
            temperature: 1.0,
        };
        let z = draw_symbols(&c, 256, RngStream::new(3, 9));
        let out = bps(&z, &c, &cfg).unwrap();
        let half_bin = PI / l as f64;
        for (k, valid) in out.valid_mask.iter().enumerate() {
            if *valid {
                assert!(
                    out.phase_estimates[k].abs() <= half_bin + 1e-12,
                    "estimate {} exceeds half grid spacing",
                    out.phase_estimates[k]
                );
                assert!((out.corrected[k] - z[k]).norm() <= z[k].norm() * half_bin + 1e-12);
            }
        }
        // phase-only correction preserves magnitudes exactly
        for (zc, zi) in out.corrected.iter().zip(&z) {
            assert_relative_eq!(zc.norm(), zi.norm(), max_relative = 1e-12);
        }
    }

    /// On a square constellation the noiseless estimate is only defined
    /// modulo pi/2: every estimate sits within half a bin of some
    /// symmetry rotation.
    #[test]
    fn bps_noiseless_qpsk_locks_modulo_symmetry() {
        let c = qpsk();
        let l = 16;
        let cfg = BpsConfig {
            num_test_phases: l,
            half_window: 4,
            mode: BpsMode::Hard,
            temperature: 1.0,
        };
        let z = draw_symbols(&c, 256, RngStream::new(8, 2));
        let out = bps(&z, &c, &cfg).unwrap();
        for (k, valid) in out.valid_mask.iter().enumerate() {
            if *valid {
                let est = out.phase_estimates[k];
                let folded = est - (est / (PI / 2.0)).round() * (PI / 2.0);
                assert!(
                    folded.abs() <= PI / l as f64 + 1e-12,
                    "estimate {est} not near a pi/2 multiple"
                );
                assert_relative_eq!(out.corrected[k].norm(), z[k].norm(), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn bps_recovers_constant_offset() {
        let theta = 0.2f64;
        let cfg = BpsConfig {
            num_test_phases: 60,
            half_window: 30,
            mode: BpsMode::Hard,
            temperature: 1.0,
        };

        // unique-optimum constellation: the mean estimate recovers -theta
        let c = random_constellation(6, 77);
        let tx = draw_symbols(&c, 4000, RngStream::new(17, 4));
        let noisy = channel::awgn(&tx, 25.0, RngStream::new(17, 5));
        let z: Vec<Complex<f64>> = noisy
            .iter()
            .map(|v| v * Complex::from_polar(1.0, theta))
            .collect();
        let out = bps(&z, &c, &cfg).unwrap();
        let valid: Vec<f64> = out
            .phase_estimates
            .iter()
            .zip(&out.valid_mask)
            .filter(|(_, &v)| v)
            .map(|(&p, _)| p)
            .collect();
        let mean = valid.iter().sum::<f64>() / valid.len() as f64;
        assert!(
            (mean + theta).abs() <= PI / 60.0 + 0.01,
            "mean estimate {mean} vs expected {}",
            -theta
        );

        // square QAM: each estimate recovers -theta only modulo pi/2, and
        // the chosen symmetry copy hops within the run
        let c = Constellation::gray_qam(6).unwrap();
        let tx = draw_symbols(&c, 4000, RngStream::new(18, 4));
        let noisy = channel::awgn(&tx, 25.0, RngStream::new(18, 5));
        let z: Vec<Complex<f64>> = noisy
            .iter()
            .map(|v| v * Complex::from_polar(1.0, theta))
            .collect();
        let out = bps(&z, &c, &cfg).unwrap();
        let quarter = PI / 2.0;
        let mut near_copy = 0usize;
        let mut total = 0usize;
        for (k, &valid) in out.valid_mask.iter().enumerate() {
            if valid {
                total += 1;
                let err = out.phase_estimates[k] + theta;
                let folded = err - (err / quarter).round() * quarter;
                if folded.abs() <= 3.0 * (2.0 * PI / 60.0) {
                    near_copy += 1;
                }
            }
        }
        assert!(
            near_copy as f64 >= 0.99 * total as f64,
            "only {near_copy}/{total} estimates near a symmetry copy of -theta"
        );
    }

    #[test]
    fn bps_soft_approaches_hard_at_low_temperature() {
        let c = random_constellation(6, 5);
        let sigma2 = channel::sigma_phi2(100e3, 32e9).unwrap();
        let tx = draw_symbols(&c, 3000, RngStream::new(23, 1));
        let noisy = channel::awgn(&tx, 20.0, RngStream::new(23, 2));
        let phi = channel::wiener_phase(tx.len(), sigma2, RngStream::new(23, 3));
        let z = channel::apply_phase(&noisy, &phi).unwrap();

        let mk = |mode, t| BpsConfig {
            num_test_phases: 60,
            half_window: 60,
            mode,
            temperature: t,
        };
        let hard = bps(&z, &c, &mk(BpsMode::Hard, 1.0)).unwrap();
        let soft = bps(&z, &c, &mk(BpsMode::Soft, 0.001)).unwrap();
        let spacing = 2.0 * PI / 60.0;
        let mut agree = 0usize;
        let mut total = 0usize;
        for k in 0..z.len() {
            if hard.valid_mask[k] {
                total += 1;
                if (hard.phase_estimates[k] - soft.phase_estimates[k]).abs() <= spacing {
                    agree += 1;
                }
            }
        }
        assert!(
            agree as f64 >= 0.95 * total as f64,
            "soft/hard agreement {agree}/{total}"
        );
    }

    /// Square QAM makes the BPS ill-posed: the four 90-degree copies of
    /// the windowed minimum are equal up to float rounding, the hard
    /// argmin is decided by that rounding, and the softmin spreads its
    /// mass over all four copies so the soft estimate lands near a
    /// quadrant average instead of the argmin phase.
    #[test]
    fn bps_square_qam_quadrant_degeneracy() {
        let c = Constellation::gray_qam(6).unwrap();
        let sigma2 = channel::sigma_phi2(100e3, 32e9).unwrap();
        let tx = draw_symbols(&c, 2000, RngStream::new(29, 1));
        let noisy = channel::awgn(&tx, 20.0, RngStream::new(29, 2));
        let phi = channel::wiener_phase(tx.len(), sigma2, RngStream::new(29, 3));
        let z = channel::apply_phase(&noisy, &phi).unwrap();

        // the four symmetry copies of the windowed sums tie to rounding level
        let phases = test_phase_grid::<f64>(60).unwrap();
        let d = distances(&z, &c, &phases);
        let s = window_sums(&d, 60);
        let row = s.row(1000);
        let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let argmin = row.iter().position(|&v| v == min).unwrap();
        for off in [15usize, 30, 45] {
            let copy = row[(argmin + off) % 60];
            assert!(
                (copy - min).abs() < 1e-10,
                "symmetry copy differs by {:e}",
                copy - min
            );
        }

        // soft and hard therefore disagree almost everywhere
        let mk = |mode, t| BpsConfig {
            num_test_phases: 60,
            half_window: 60,
            mode,
            temperature: t,
        };
        let hard = bps(&z, &c, &mk(BpsMode::Hard, 1.0)).unwrap();
        let soft = bps(&z, &c, &mk(BpsMode::Soft, 0.001)).unwrap();
        let spacing = 2.0 * PI / 60.0;
        let agree = hard
            .valid_mask
            .iter()
            .enumerate()
            .filter(|&(k, &v)| {
                v && (hard.phase_estimates[k] - soft.phase_estimates[k]).abs() <= spacing
            })
            .count();
        let total = hard.valid_mask.iter().filter(|&&v| v).count();
        assert!(
            (agree as f64) < 0.5 * total as f64,
            "expected degenerate disagreement, got {agree}/{total}"
        );
    }

    #[test]
    fn bps_rejects_short_sequences() {
        let c = qpsk();
        let cfg = BpsConfig {
            num_test_phases: 8,
            half_window: 4,
            mode: BpsMode::Hard,
            temperature: 1.0,
        };
        let z = vec![Complex::new(1.0, 0.0); 8];
        assert!(matches!(
            bps(&z, &c, &cfg).unwrap_err(),
            Error::InsufficientLength { len: 8, half_window: 4 }
        ));
        // mask has exactly N false entries at each edge
        let z = vec![Complex::new(1.0, 0.0); 9];
        let out = bps(&z, &c, &cfg).unwrap();
        assert_eq!(out.valid_mask.iter().filter(|&&v| v).count(), 1);
        assert!(out.valid_mask[4]);
    }

    #[test]
    fn temperature_schedule_examples() {
        assert_eq!(temperature_schedule(0, 100, 1.0, 0.001).unwrap(), 1.0);
        assert_relative_eq!(
            temperature_schedule(100, 100, 1.0, 0.001).unwrap(),
            0.001,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            temperature_schedule(50, 100, 1.0, 0.001).unwrap(),
            10f64.powf(-1.5),
            max_relative = 1e-12
        );
        assert!(temperature_schedule(0, 10, 1.0, 0.0).is_err());
        assert!(temperature_schedule(0, 10, 0.001, 1.0).is_err());
        assert!(temperature_schedule(11, 10, 1.0, 0.001).is_err());
        // monotone nonincreasing
        let mut prev = f64::INFINITY;
        for step in 0..=20 {
            let t = temperature_schedule(step, 20, 1.0, 0.001).unwrap();
            assert!(t <= prev);
            prev = t;
        }
    }

    proptest! {
        #[test]
        fn softmin_normalizes_and_is_shift_invariant(
            xs in proptest::collection::vec(-50.0f64..50.0, 2..12),
            t in 0.01f64..5.0,
            shift in -100.0f64..100.0,
        ) {
            let w = softmin_t(&xs, t);
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);

            let shifted: Vec<f64> = xs.iter().map(|v| v + shift).collect();
            let ws = softmin_t(&shifted, t);
            for (a, b) in w.iter().zip(&ws) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn softmin_is_permutation_equivariant(
            xs in proptest::collection::vec(-20.0f64..20.0, 2..10),
            t in 0.05f64..2.0,
        ) {
            let w = softmin_t(&xs, t);
            let mut rev = xs.clone();
            rev.reverse();
            let mut wrev = softmin_t(&rev, t);
            wrev.reverse();
            for (a, b) in w.iter().zip(&wrev) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn soft_select_approaches_hard_select(
            vals in proptest::collection::vec(0.0f64..10.0, 8),
        ) {
            // ensure a unique minimum with a visible margin
            let mut vals = vals;
            let arg = 3usize;
            vals[arg] = -1.0;
            let phases = test_phase_grid::<f64>(8).unwrap();
            let s = Tensor::from_vec(1, 8, vals);
            let soft = soft_select(&s, &phases, 1e-6);
            let hard = hard_select(&s, &phases);
            prop_assert!((soft[0] - hard[0]).abs() < 1e-6);
        }

        #[test]
        fn unwrap_keeps_small_steps_small(
            steps in proptest::collection::vec(-3.0f64..3.0, 1..40),
        ) {
            // build a wrapped sequence from bounded increments
            let mut truth = vec![0.0f64];
            for s in &steps {
                let prev = *truth.last().unwrap();
                truth.push(prev + s);
            }
            let wrapped: Vec<f64> = truth
                .iter()
                .map(|&p| {
                    let mut w = p % (2.0 * PI);
                    if w > PI { w -= 2.0 * PI; }
                    if w < -PI { w += 2.0 * PI; }
                    w
                })
                .collect();
            let un = unwrap_phases(&wrapped);
            for pair in un.windows(2).zip(wrapped.windows(2)) {
                let (u, w) = pair;
                let dw = (w[1] - w[0]).rem_euclid(2.0 * PI);
                let dw = if dw > PI { dw - 2.0 * PI } else { dw };
                if dw.abs() < PI - 1e-9 {
                    prop_assert!((u[1] - u[0]).abs() < PI + 1e-9);
                }
            }
        }
    }
}
