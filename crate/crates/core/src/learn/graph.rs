//! Reverse-mode differentiation over dense tensors.
//!
//! A flat tape of tensor-valued nodes: forward values are computed
//! eagerly as nodes are pushed, `backward` walks the tape in reverse and
//! accumulates gradients additively across fan-out. Besides elementwise
//! and dense-layer primitives there are fused kernels for the BPS
//! pipeline (nearest-point distances, sliding-window sums, softmin dot
//! with the test phases, complex rotation), where index selections
//! (nearest symbol, unwrap corrections) are constants for the backward
//! pass.

use num_complex::Complex;
use rayon::prelude::*;

use crate::cpe;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<F> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, F),
    /// Parent plus a tensor that is constant for differentiation.
    AddConst(usize),
    /// Same row-major data, new shape.
    Reshape(usize),
    /// Elementwise product with a broadcast 1x1 node.
    MulScalar { a: usize, s: usize },
    Exp(usize),
    Ln(usize),
    Relu(usize),
    Logistic(usize),
    Powf { a: usize, exponent: F },
    Sum(usize),
    Mean(usize),
    Matmul(usize, usize),
    /// Broadcast a 1xN bias over the rows of a.
    AddBias { a: usize, bias: usize },
    GatherRows { a: usize, indices: Vec<u32> },
    ConcatRows(Vec<usize>),
    /// K x 2 complex rotation by constant phases.
    RotateConst { z: usize, rotations: Vec<Complex<F>> },
    /// K x 2 complex rotation by a K x 1 phase node.
    Rotate { z: usize, phi: usize },
    /// d[k][b] = min_p |z_k e^{j phi_b} - p|^2 with the winning point
    /// index recorded; gradients flow into z and into the chosen points.
    BpsDistances {
        z: usize,
        points: usize,
        rotations: Vec<Complex<F>>,
        nearest: Vec<u32>,
    },
    WindowSums { a: usize, half_window: usize },
    /// out[k] = phases . softmin_t(s[k]); the softmin weights are saved.
    SoftminDot {
        s: usize,
        phases: Vec<F>,
        temperature: F,
        weights: Vec<F>,
    },
    /// Masked-mean binary cross-entropy in nats against constant bits.
    Bce {
        probs: usize,
        bits: Vec<u8>,
        mask: Vec<bool>,
        count: usize,
    },
}

pub struct Graph<F: Real> {
    values: Vec<Tensor<F>>,
    grads: Vec<Tensor<F>>,
    ops: Vec<Op<F>>,
}

const BCE_EPS: f64 = 1e-12;

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            grads: Vec::new(),
            ops: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> NodeId {
        let (r, c) = value.shape();
        self.grads.push(Tensor::zeros(r, c));
        self.values.push(value);
        self.ops.push(op);
        NodeId(self.values.len() - 1)
    }

    /// Differentiable input (parameter or anything a gradient is read from).
    pub fn leaf(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn grad(&self, id: NodeId) -> &Tensor<F> {
        &self.grads[id.0]
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.values[a.0].shape(), self.values[b.0].shape());
        let v = zip_map(&self.values[a.0], &self.values[b.0], |x, y| x + y);
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.values[a.0].shape(), self.values[b.0].shape());
        let v = zip_map(&self.values[a.0], &self.values[b.0], |x, y| x - y);
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.values[a.0].shape(), self.values[b.0].shape());
        let v = zip_map(&self.values[a.0], &self.values[b.0], |x, y| x * y);
        self.push(v, Op::Mul(a.0, b.0))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = map(&self.values[a.0], |x| -x);
        self.push(v, Op::Neg(a.0))
    }

    pub fn scale(&mut self, a: NodeId, c: F) -> NodeId {
        let v = map(&self.values[a.0], |x| x * c);
        self.push(v, Op::Scale(a.0, c))
    }

    /// a + c where c is constant for differentiation (noise, unwrap offsets).
    pub fn add_const(&mut self, a: NodeId, c: &Tensor<F>) -> NodeId {
        assert_eq!(self.values[a.0].shape(), c.shape());
        let v = zip_map(&self.values[a.0], c, |x, y| x + y);
        self.push(v, Op::AddConst(a.0))
    }

    /// Reinterpret the row-major data of a node under a new shape.
    pub fn reinterpret_rows(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let v = &self.values[a.0];
        assert_eq!(v.len(), rows * cols, "reshape size mismatch");
        let t = Tensor::from_vec(rows, cols, v.data().to_vec());
        self.push(t, Op::Reshape(a.0))
    }

    /// Elementwise a * s with s a 1x1 node broadcast over a.
    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.values[s.0].shape(), (1, 1));
        let sv = self.values[s.0].item();
        let v = map(&self.values[a.0], |x| x * sv);
        self.push(v, Op::MulScalar { a: a.0, s: s.0 })
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = map(&self.values[a.0], |x| x.exp());
        self.push(v, Op::Exp(a.0))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = map(&self.values[a.0], |x| x.ln());
        self.push(v, Op::Ln(a.0))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = map(&self.values[a.0], |x| x.max(F::zero()));
        self.push(v, Op::Relu(a.0))
    }

    pub fn logistic(&mut self, a: NodeId) -> NodeId {
        let one = F::one();
        let v = map(&self.values[a.0], |x| one / (one + (-x).exp()));
        self.push(v, Op::Logistic(a.0))
    }

    pub fn powf(&mut self, a: NodeId, exponent: F) -> NodeId {
        let v = map(&self.values[a.0], |x| x.powf(exponent));
        self.push(v, Op::Powf { a: a.0, exponent })
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.values[a.0]
            .data()
            .iter()
            .fold(F::zero(), |acc, &x| acc + x);
        self.push(Tensor::scalar(s), Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = F::from_usize(self.values[a.0].len()).unwrap();
        let s = self.values[a.0]
            .data()
            .iter()
            .fold(F::zero(), |acc, &x| acc + x);
        self.push(Tensor::scalar(s / n), Op::Mean(a.0))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.values[a.0].cols(), self.values[b.0].rows());
        let v = matmul_nn(&self.values[a.0], &self.values[b.0]);
        self.push(v, Op::Matmul(a.0, b.0))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (_, n) = self.values[a.0].shape();
        assert_eq!(self.values[bias.0].shape(), (1, n));
        let bv = self.values[bias.0].clone();
        let mut v = self.values[a.0].clone();
        for r in 0..v.rows() {
            for (o, &b) in v.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(v, Op::AddBias { a: a.0, bias: bias.0 })
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: &[u32]) -> NodeId {
        let (rows, cols) = self.values[a.0].shape();
        let mut v = Tensor::zeros(indices.len(), cols);
        for (r, &src) in indices.iter().enumerate() {
            assert!((src as usize) < rows, "gather index out of range");
            v.row_mut(r).copy_from_slice(self.values[a.0].row(src as usize));
        }
        self.push(
            v,
            Op::GatherRows {
                a: a.0,
                indices: indices.to_vec(),
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.values[parts[0].0].cols();
        let rows: usize = parts.iter().map(|p| self.values[p.0].rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            assert_eq!(self.values[p.0].cols(), cols);
            data.extend_from_slice(self.values[p.0].data());
        }
        self.push(
            Tensor::from_vec(rows, cols, data),
            Op::ConcatRows(parts.iter().map(|p| p.0).collect()),
        )
    }

    /// z * exp(j*phi) with constant per-row phases; z is K x 2.
    pub fn rotate_const(&mut self, z: NodeId, phases: &[F]) -> NodeId {
        let zv = &self.values[z.0];
        assert_eq!(zv.cols(), 2);
        assert_eq!(zv.rows(), phases.len());
        let rotations = cpe::phase_rotations(phases);
        let mut v = Tensor::zeros(zv.rows(), 2);
        for k in 0..zv.rows() {
            let row = zv.row(k);
            let w = rotations[k];
            let out = v.row_mut(k);
            out[0] = row[0] * w.re - row[1] * w.im;
            out[1] = row[0] * w.im + row[1] * w.re;
        }
        self.push(v, Op::RotateConst { z: z.0, rotations })
    }

    /// z * exp(j*phi) with phi a K x 1 node.
    pub fn rotate(&mut self, z: NodeId, phi: NodeId) -> NodeId {
        let zv = &self.values[z.0];
        let pv = &self.values[phi.0];
        assert_eq!(zv.cols(), 2);
        assert_eq!(pv.shape(), (zv.rows(), 1));
        let mut v = Tensor::zeros(zv.rows(), 2);
        for k in 0..zv.rows() {
            let row = zv.row(k);
            let (sin, cos) = pv.data()[k].sin_cos();
            let out = v.row_mut(k);
            out[0] = row[0] * cos - row[1] * sin;
            out[1] = row[0] * sin + row[1] * cos;
        }
        self.push(v, Op::Rotate { z: z.0, phi: phi.0 })
    }

    /// Fused BPS distance kernel: K x L matrix of squared distances to the
    /// nearest point of `points` after rotating z by each test phase. The
    /// argmin point index per (k, b) is recorded and treated as constant
    /// by the backward pass; the distance itself differentiates into both
    /// z and the winning constellation point.
    pub fn bps_distances(&mut self, z: NodeId, points: NodeId, phases: &[F]) -> NodeId {
        let zc = self.values[z.0].to_complex();
        let pc = self.values[points.0].to_complex();
        let (d, nearest) = cpe::distances_with_indices(&zc, &pc, phases);
        let rotations = cpe::phase_rotations(phases);
        self.push(
            d,
            Op::BpsDistances {
                z: z.0,
                points: points.0,
                rotations,
                nearest,
            },
        )
    }

    /// Sliding-window sums along the K axis; linear and self-adjoint.
    pub fn window_sums(&mut self, a: NodeId, half_window: usize) -> NodeId {
        let v = cpe::window_sums(&self.values[a.0], half_window);
        self.push(v, Op::WindowSums { a: a.0, half_window })
    }

    /// Differentiable phase pick: out[k] = phases . softmin_t(s[k]).
    pub fn softmin_dot(&mut self, s: NodeId, phases: &[F], temperature: F) -> NodeId {
        let sv = &self.values[s.0];
        let l = phases.len();
        assert_eq!(sv.cols(), l);
        let k_len = sv.rows();
        let mut weights = vec![F::zero(); k_len * l];
        let mut out = Tensor::zeros(k_len, 1);
        for k in 0..k_len {
            let w = &mut weights[k * l..(k + 1) * l];
            cpe::softmin_t_into(sv.row(k), temperature, w);
            out.data_mut()[k] = w
                .iter()
                .zip(phases)
                .fold(F::zero(), |acc, (&wi, &p)| acc + wi * p);
        }
        self.push(
            out,
            Op::SoftminDot {
                s: s.0,
                phases: phases.to_vec(),
                temperature,
                weights,
            },
        )
    }

    /// Mean over unmasked rows (all bit columns) of the binary
    /// cross-entropy in nats, with probabilities clamped to
    /// [1e-12, 1 - 1e-12] before the logs. NaN probabilities propagate.
    pub fn bce(&mut self, probs: NodeId, bits: &[u8], mask: &[bool]) -> Result<NodeId> {
        let pv = &self.values[probs.0];
        let (rows, m) = pv.shape();
        if bits.len() != rows * m {
            return Err(Error::Shape(format!(
                "bce: {} bits for a {rows} x {m} probability matrix",
                bits.len()
            )));
        }
        if mask.len() != rows {
            return Err(Error::Shape(format!(
                "bce: mask length {} vs {rows} rows",
                mask.len()
            )));
        }
        let valid_rows = mask.iter().filter(|&&v| v).count();
        if valid_rows == 0 {
            return Err(Error::DegenerateBatch);
        }
        let count = valid_rows * m;
        let eps = F::lit(BCE_EPS);
        let one = F::one();
        let mut acc = F::zero();
        for r in 0..rows {
            if !mask[r] {
                continue;
            }
            for (i, &p) in pv.row(r).iter().enumerate() {
                let b = bits[r * m + i];
                let pc = clamp_prob(p, eps);
                let term = if b == 1 { -pc.ln() } else { -(one - pc).ln() };
                acc += term;
            }
        }
        let loss = acc / F::from_usize(count).unwrap();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                probs: probs.0,
                bits: bits.to_vec(),
                mask: mask.to_vec(),
                count,
            },
        ))
    }

    /// Backpropagate from a scalar node, accumulating gradients into every
    /// reachable node.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(self.values[loss.0].shape(), (1, 1), "loss must be scalar");
        for g in &mut self.grads {
            g.fill(F::zero());
        }
        self.grads[loss.0].data_mut()[0] = F::one();

        for i in (0..self.ops.len()).rev() {
            // parents always precede their consumer on the tape
            let (head, tail) = self.grads.split_at_mut(i);
            let g_out = &tail[0];
            if g_out.data().iter().all(|&g| g == F::zero()) {
                continue;
            }
            let values = &self.values;
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut head[*a], g_out.data());
                    accumulate(&mut head[*b], g_out.data());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut head[*a], g_out.data());
                    for (ga, &g) in head[*b].data_mut().iter_mut().zip(g_out.data()) {
                        *ga -= g;
                    }
                }
                Op::Mul(a, b) => {
                    for ((ga, &g), &bv) in head[*a]
                        .data_mut()
                        .iter_mut()
                        .zip(g_out.data())
                        .zip(values[*b].data())
                    {
                        *ga += g * bv;
                    }
                    for ((gb, &g), &av) in head[*b]
                        .data_mut()
                        .iter_mut()
                        .zip(g_out.data())
                        .zip(values[*a].data())
                    {
                        *gb += g * av;
                    }
                }
                Op::Neg(a) => {
                    for (ga, &g) in head[*a].data_mut().iter_mut().zip(g_out.data()) {
                        *ga -= g;
                    }
                }
                Op::Scale(a, c) => {
                    for (ga, &g) in head[*a].data_mut().iter_mut().zip(g_out.data()) {
                        *ga += g * *c;
                    }
                }
                Op::AddConst(a) | Op::Reshape(a) => accumulate(&mut head[*a], g_out.data()),
                Op::MulScalar { a, s } => {
                    let sv = values[*s].item();
                    for (ga, &g) in head[*a].data_mut().iter_mut().zip(g_out.data()) {
                        *ga += g * sv;
                    }
                    let gs = g_out
                        .data()
                        .iter()
                        .zip(values[*a].data())
                        .fold(F::zero(), |acc, (&g, &av)| acc + g * av);
                    head[*s].data_mut()[0] += gs;
                }
                Op::Exp(a) => {
                    for ((ga, &g), &out) in head[*a]
                        .data_mut()
                        .iter_mut()
                        .zip(g_out.data())
                        .zip(values[i].data())
                    {
                        *ga += g * out;
                    }
                }
                Op::Ln(a) => {
                    for ((ga, &g), &av) in head[*a]
                        .data_mut()
                        .iter_mut()
                        .zip(g_out.data())
                        .zip(values[*a].data())
                    {
                        *ga += g / av;
                    }
                }
                Op::Relu(a) => {
                    for ((ga, &g), &av) in head[*a]
                        .data_mut()
                        .iter_mut()
                        .zip(g_out.data())
                        .zip(values[*a].data())
                    {
                        if av > F::zero() {
                            *ga += g;
                        }
                    }
                }
                Op::Logistic(a) => {
                    let one = F::one();
                    for ((ga, &g), &out) in head[*a]
                        .data_mut()
                        .iter_mut()
                        .zip(g_out.data())
                        .zip(values[i].data())
                    {
                        *ga += g * out * (one - out);
                    }
                }
                Op::Powf { a, exponent } => {
                    let e = *exponent;
                    for ((ga, &g), &av) in head[*a]
                        .data_mut()
                        .iter_mut()
                        .zip(g_out.data())
                        .zip(values[*a].data())
                    {
                        *ga += g * e * av.powf(e - F::one());
                    }
                }
                Op::Sum(a) => {
                    let g = g_out.item();
                    for ga in head[*a].data_mut() {
                        *ga += g;
                    }
                }
                Op::Mean(a) => {
                    let n = F::from_usize(values[*a].len()).unwrap();
                    let g = g_out.item() / n;
                    for ga in head[*a].data_mut() {
                        *ga += g;
                    }
                }
                Op::Matmul(a, b) => {
                    // dA += dC . B^T ; dB += A^T . dC
                    let da = matmul_nt(g_out, &values[*b]);
                    accumulate(&mut head[*a], da.data());
                    let at = values[*a].transpose();
                    let db = matmul_nn(&at, g_out);
                    accumulate(&mut head[*b], db.data());
                }
                Op::AddBias { a, bias } => {
                    accumulate(&mut head[*a], g_out.data());
                    let n = g_out.cols();
                    let gb = head[*bias].data_mut();
                    for r in 0..g_out.rows() {
                        for (gbj, &g) in gb.iter_mut().zip(g_out.row(r)) {
                            *gbj += g;
                        }
                    }
                    let _ = n;
                }
                Op::GatherRows { a, indices } => {
                    let cols = g_out.cols();
                    let ga = &mut head[*a];
                    for (r, &src) in indices.iter().enumerate() {
                        let dst = ga.row_mut(src as usize);
                        for (d, &g) in dst.iter_mut().zip(&g_out.data()[r * cols..(r + 1) * cols])
                        {
                            *d += g;
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let cols = g_out.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let rows = head[p].rows();
                        let chunk = &g_out.data()[offset * cols..(offset + rows) * cols];
                        accumulate(&mut head[p], chunk);
                        offset += rows;
                    }
                }
                Op::RotateConst { z, rotations } => {
                    let gz = &mut head[*z];
                    for k in 0..g_out.rows() {
                        let g = g_out.row(k);
                        let w = rotations[k];
                        let dst = gz.row_mut(k);
                        dst[0] += g[0] * w.re + g[1] * w.im;
                        dst[1] += -g[0] * w.im + g[1] * w.re;
                    }
                }
                Op::Rotate { z, phi } => {
                    let out = &values[i];
                    let pv = &values[*phi];
                    // two parents; split borrows by taking them in order
                    let (z_i, phi_i) = (*z, *phi);
                    for k in 0..g_out.rows() {
                        let g = g_out.row(k);
                        let (sin, cos) = pv.data()[k].sin_cos();
                        {
                            let dst = head[z_i].row_mut(k);
                            dst[0] += g[0] * cos + g[1] * sin;
                            dst[1] += -g[0] * sin + g[1] * cos;
                        }
                        let o = out.row(k);
                        head[phi_i].data_mut()[k] += g[0] * (-o[1]) + g[1] * o[0];
                    }
                }
                Op::BpsDistances {
                    z,
                    points,
                    rotations,
                    nearest,
                } => {
                    let zc = values[*z].to_complex();
                    let pc = values[*points].to_complex();
                    let l = rotations.len();
                    let two = F::lit(2.0);
                    let (z_i, points_i) = (*z, *points);
                    for k in 0..zc.len() {
                        let zk = zc[k];
                        let mut gz_re = F::zero();
                        let mut gz_im = F::zero();
                        for (b, &w) in rotations.iter().enumerate() {
                            let g = g_out.data()[k * l + b];
                            if g == F::zero() {
                                continue;
                            }
                            let p = pc[nearest[k * l + b] as usize];
                            let zr = zk * w;
                            let ur = zr.re - p.re;
                            let ui = zr.im - p.im;
                            gz_re += g * two * (ur * w.re + ui * w.im);
                            gz_im += g * two * (-ur * w.im + ui * w.re);
                            let gp = head[points_i].row_mut(nearest[k * l + b] as usize);
                            gp[0] += -two * g * ur;
                            gp[1] += -two * g * ui;
                        }
                        let gz = head[z_i].row_mut(k);
                        gz[0] += gz_re;
                        gz[1] += gz_im;
                    }
                }
                Op::WindowSums { a, half_window } => {
                    // the truncated symmetric window is self-adjoint
                    let ga = cpe::window_sums(g_out, *half_window);
                    accumulate(&mut head[*a], ga.data());
                }
                Op::SoftminDot {
                    s,
                    phases,
                    temperature,
                    weights,
                } => {
                    let out = &values[i];
                    let l = phases.len();
                    let inv_t = temperature.recip();
                    let gs = &mut head[*s];
                    for k in 0..out.rows() {
                        let g = g_out.data()[k];
                        if g == F::zero() {
                            continue;
                        }
                        let ok = out.data()[k];
                        let w = &weights[k * l..(k + 1) * l];
                        let dst = gs.row_mut(k);
                        for b in 0..l {
                            dst[b] += g * (-inv_t) * w[b] * (phases[b] - ok);
                        }
                    }
                }
                Op::Bce {
                    probs,
                    bits,
                    mask,
                    count,
                } => {
                    let g = g_out.item() / F::from_usize(*count).unwrap();
                    let eps = F::lit(BCE_EPS);
                    let one = F::one();
                    let pv = &values[*probs];
                    let (rows, m) = pv.shape();
                    let gp = &mut head[*probs];
                    for r in 0..rows {
                        if !mask[r] {
                            continue;
                        }
                        for idx in 0..m {
                            let p = pv.get(r, idx);
                            if p.is_nan() || p <= eps || p >= one - eps {
                                continue;
                            }
                            let b = F::from_u8(bits[r * m + idx]).unwrap();
                            gp.row_mut(r)[idx] += g * (p - b) / (p * (one - p));
                        }
                    }
                }
            }
        }
    }
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn clamp_prob<F: Real>(p: F, eps: F) -> F {
    if p.is_nan() {
        return p;
    }
    if p < eps {
        eps
    } else if p > F::one() - eps {
        F::one() - eps
    } else {
        p
    }
}

fn map<F: Real>(t: &Tensor<F>, f: impl Fn(F) -> F) -> Tensor<F> {
    Tensor::from_vec(t.rows(), t.cols(), t.data().iter().map(|&x| f(x)).collect())
}

fn zip_map<F: Real>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    Tensor::from_vec(
        a.rows(),
        a.cols(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

fn accumulate<F: Real>(dst: &mut Tensor<F>, src: &[F]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.data_mut().iter_mut().zip(src) {
        *d += s;
    }
}

/// Threshold below which matrix products stay single-threaded.
const PAR_FLOPS: usize = 1 << 20;

/// C = A . B, parallel over output rows with a fixed in-row reduction
/// order (ikj), so results do not depend on the thread count.
pub(crate) fn matmul_nn<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (m, ka) = a.shape();
    let (kb, n) = b.shape();
    assert_eq!(ka, kb, "matmul inner dimension mismatch");
    let mut out = Tensor::zeros(m, n);
    let row_job = |out_row: &mut [F], a_row: &[F]| {
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == F::zero() {
                continue;
            }
            for (o, &bkj) in out_row.iter_mut().zip(&b.data()[k * n..(k + 1) * n]) {
                *o += aik * bkj;
            }
        }
    };
    if m * ka * n >= PAR_FLOPS && m > 1 {
        out.data_mut()
            .par_chunks_mut(n)
            .zip_eq(a.data().par_chunks(ka))
            .for_each(|(o, ar)| row_job(o, ar));
    } else {
        for (o, ar) in out.data_mut().chunks_mut(n).zip(a.data().chunks(ka)) {
            row_job(o, ar);
        }
    }
    out
}

/// C = A . B^T via row-dot-row, parallel over output rows.
pub(crate) fn matmul_nt<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (m, ka) = a.shape();
    let (n, kb) = b.shape();
    assert_eq!(ka, kb, "matmul_nt inner dimension mismatch");
    let mut out = Tensor::zeros(m, n);
    let row_job = |out_row: &mut [F], a_row: &[F]| {
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b.data()[j * ka..(j + 1) * ka];
            let mut acc = F::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *o = acc;
        }
    };
    if m * ka * n >= PAR_FLOPS && m > 1 {
        out.data_mut()
            .par_chunks_mut(n)
            .zip_eq(a.data().par_chunks(ka))
            .for_each(|(o, ar)| row_job(o, ar));
    } else {
        for (o, ar) in out.data_mut().chunks_mut(n).zip(a.data().chunks(ka)) {
            row_job(o, ar);
        }
    }
    out
}
