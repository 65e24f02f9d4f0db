//! Dense row-major matrix used by the training graph and the metrics code.
//!
//! Complex sequences travel through the differentiable parts as K x 2
//! tensors holding (re, im) pairs per row.

use num_complex::Complex;

use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Self { rows, cols, data }
    }

    pub fn scalar(v: F) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    /// K x 2 tensor of (re, im) rows.
    pub fn from_complex(z: &[Complex<F>]) -> Self {
        let mut data = Vec::with_capacity(z.len() * 2);
        for c in z {
            data.push(c.re);
            data.push(c.im);
        }
        Self {
            rows: z.len(),
            cols: 2,
            data,
        }
    }

    /// Column vector from a real sequence.
    pub fn from_column(v: &[F]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    pub fn to_complex(&self) -> Vec<Complex<F>> {
        assert_eq!(self.cols, 2, "complex view needs a K x 2 tensor");
        self.data
            .chunks_exact(2)
            .map(|p| Complex::new(p[0], p[1]))
            .collect()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> F {
        assert_eq!(self.data.len(), 1, "item() needs a scalar tensor");
        self.data[0]
    }

    pub fn fill(&mut self, v: F) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_round_trip() {
        let z = vec![Complex::new(1.0f64, -2.0), Complex::new(0.5, 3.0)];
        let t = Tensor::from_complex(&z);
        assert_eq!(t.shape(), (2, 2));
        assert_eq!(t.to_complex(), z);
    }

    #[test]
    fn transpose_shapes() {
        let t = Tensor::from_vec(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let tt = t.transpose();
        assert_eq!(tt.shape(), (3, 2));
        assert_eq!(tt.get(2, 1), 6.0);
        assert_eq!(tt.get(0, 1), 4.0);
    }
}
