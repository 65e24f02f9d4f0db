//! Bit-labeled constellations: normalization, Gray-labeled square QAM,
//! nearest-symbol search, and the tab-separated export format.
//!
//! A constellation is M complex points with an m-bit label per point,
//! m = log2(M). Labels are stored as integers read MSB-first; the label
//! set is always a permutation of all m-bit patterns.

use std::path::Path;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Constellation<F> {
    points: Vec<Complex<F>>,
    labels: Vec<u32>,
    order_m: u32,
}

/// Scale a point set by one positive real factor so that the mean of
/// |x|^2 over the set is 1.
pub fn normalize<F: Real>(points: &[Complex<F>]) -> Result<Vec<Complex<F>>> {
    if points.is_empty() {
        return Err(Error::DegenerateConstellation);
    }
    let mean_power = mean_power(points);
    if mean_power <= F::zero() {
        return Err(Error::DegenerateConstellation);
    }
    let scale = mean_power.sqrt().recip();
    Ok(points.iter().map(|p| p * scale).collect())
}

/// Mean of |x|^2 over the point set.
pub fn mean_power<F: Real>(points: &[Complex<F>]) -> F {
    let sum = points
        .iter()
        .fold(F::zero(), |acc, p| acc + p.re * p.re + p.im * p.im);
    sum / F::from_usize(points.len()).unwrap()
}

fn gray_decode(mut g: u32) -> u32 {
    let mut v = 0;
    while g != 0 {
        v ^= g;
        g >>= 1;
    }
    v
}

impl<F: Real> Constellation<F> {
    /// Build a constellation, validating the size and label invariants.
    /// Points are taken as given; call [`Constellation::normalized`] to
    /// bring them to unit mean power.
    pub fn new(points: Vec<Complex<F>>, labels: Vec<u32>, order_m: u32) -> Result<Self> {
        let m = 1usize
            .checked_shl(order_m)
            .filter(|_| order_m >= 1 && order_m < 32)
            .ok_or_else(|| Error::InvalidConstellation(format!("bad order m = {order_m}")))?;
        if points.len() != m || labels.len() != m {
            return Err(Error::InvalidConstellation(format!(
                "expected 2^{} = {} points and labels, got {} and {}",
                order_m,
                m,
                points.len(),
                labels.len()
            )));
        }
        let mut seen = vec![false; m];
        for &l in &labels {
            let idx = l as usize;
            if idx >= m || seen[idx] {
                return Err(Error::InvalidConstellation(format!(
                    "labels are not a permutation of all {order_m}-bit patterns (offender {l:#x})"
                )));
            }
            seen[idx] = true;
        }
        Ok(Self {
            points,
            labels,
            order_m,
        })
    }

    /// Same constellation with points scaled to unit mean power.
    pub fn normalized(mut self) -> Result<Self> {
        self.points = normalize(&self.points)?;
        Ok(self)
    }

    /// Square 2^m-QAM with per-axis reflected-Gray labeling: the first
    /// m/2 label bits select the in-phase level, the last m/2 the
    /// quadrature level. Normalized to unit mean power; the all-zero
    /// label sits at the most positive corner.
    pub fn gray_qam(m: u32) -> Result<Self> {
        if m < 2 || m % 2 != 0 {
            return Err(Error::UnsupportedOrder { m });
        }
        let half = m / 2;
        let levels = 1u32 << half;
        let size = 1usize << m;
        let max_level = F::from_u32(levels - 1).unwrap();
        let two = F::lit(2.0);
        let mut points = Vec::with_capacity(size);
        let mut labels = Vec::with_capacity(size);
        for v in 0..size as u32 {
            let g_i = v >> half;
            let g_q = v & (levels - 1);
            let l_i = F::from_u32(gray_decode(g_i)).unwrap();
            let l_q = F::from_u32(gray_decode(g_q)).unwrap();
            let re = max_level - two * l_i;
            let im = max_level - two * l_q;
            points.push(Complex::new(re, im));
            labels.push(v);
        }
        Self::new(points, labels, m)?.normalized()
    }

    pub fn size(&self) -> usize {
        self.points.len()
    }

    pub fn order_m(&self) -> u32 {
        self.order_m
    }

    pub fn points(&self) -> &[Complex<F>] {
        &self.points
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn mean_power(&self) -> F {
        mean_power(&self.points)
    }

    /// Index of the point minimizing |z - points[i]|^2; ties go to the
    /// lowest index.
    pub fn nearest_symbol(&self, z: Complex<F>) -> usize {
        let mut best = F::infinity();
        let mut idx = 0;
        for (i, p) in self.points.iter().enumerate() {
            let dr = z.re - p.re;
            let di = z.im - p.im;
            let d = dr * dr + di * di;
            if d < best {
                best = d;
                idx = i;
            }
        }
        idx
    }

    /// Point index transmitting a given label value, or None if the label
    /// is out of range.
    pub fn index_of_label(&self, label: u32) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    /// Bit `position` (0 = MSB) of the label of point `i`.
    pub fn label_bit(&self, i: usize, position: u32) -> u8 {
        ((self.labels[i] >> (self.order_m - 1 - position)) & 1) as u8
    }

    /// Tab-separated export: header line `re\tim\tlabel`, then one row per
    /// point with the label in hexadecimal. Floats use the shortest
    /// round-trip decimal form, so parse(serialize(c)) == c bit-exactly.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("re\tim\tlabel\n");
        for (p, l) in self.points.iter().zip(&self.labels) {
            out.push_str(&format!("{}\t{}\t{:X}\n", p.re, p.im, l));
        }
        out
    }

    /// Parse the format written by [`Constellation::to_tsv`]. `origin` is
    /// used in error messages; line numbers are 1-based over the whole
    /// file including the header.
    pub fn from_tsv(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim_end() == "re\tim\tlabel" => {}
            Some((_, header)) => {
                return Err(Error::Format {
                    path: origin.to_string(),
                    line: 1,
                    msg: format!("expected header \"re\\tim\\tlabel\", got {header:?}"),
                })
            }
            None => {
                return Err(Error::Format {
                    path: origin.to_string(),
                    line: 1,
                    msg: "empty file".into(),
                })
            }
        }
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let mut field = |name: &str| {
                fields.next().ok_or_else(|| Error::Format {
                    path: origin.to_string(),
                    line: line_no,
                    msg: format!("missing field {name}"),
                })
            };
            let re_s = field("re")?;
            let im_s = field("im")?;
            let label_s = field("label")?;
            let re = F::parse_decimal(re_s.trim()).ok_or_else(|| Error::Format {
                path: origin.to_string(),
                line: line_no,
                msg: format!("bad re value {re_s:?}"),
            })?;
            let im = F::parse_decimal(im_s.trim()).ok_or_else(|| Error::Format {
                path: origin.to_string(),
                line: line_no,
                msg: format!("bad im value {im_s:?}"),
            })?;
            let label = u32::from_str_radix(label_s.trim(), 16).map_err(|e| Error::Format {
                path: origin.to_string(),
                line: line_no,
                msg: format!("bad hex label {label_s:?}: {e}"),
            })?;
            points.push(Complex::new(re, im));
            labels.push(label);
        }
        let m = points.len();
        if m == 0 || !m.is_power_of_two() {
            return Err(Error::Format {
                path: origin.to_string(),
                line: 1,
                msg: format!("point count {m} is not a power of two"),
            });
        }
        Self::new(points, labels, m.trailing_zeros())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_tsv(&text, &path.display().to_string())
    }
}

/// Label value of an MSB-first bit row.
pub fn bits_to_label(bits: &[u8]) -> u32 {
    bits.iter().fold(0, |acc, &b| (acc << 1) | u32::from(b))
}

/// MSB-first bit row of a label value.
pub fn label_to_bits(label: u32, m: u32) -> Vec<u8> {
    (0..m).map(|j| ((label >> (m - 1 - j)) & 1) as u8).collect()
}
