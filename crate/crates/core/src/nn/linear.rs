//! Affine map `y = x W + b`.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::{trunc_normal_array2, Params, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    /// `(in, out)`.
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: trunc_normal_array2(rng, (in_dim, out_dim), 0.02),
            b: Array1::zeros(out_dim),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            w: Array2::zeros((in_dim, out_dim)),
            b: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.ncols()
    }

    /// `x`: `(n, in)` -> `(n, out)`.
    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        x.dot(&self.w) + &self.b
    }

    /// Given the forward input and the output gradient, produce the input
    /// gradient and this layer's parameter gradients.
    pub fn backward(&self, x: &Array2<F>, dy: &Array2<F>) -> (Array2<F>, Linear<F>) {
        let dx = dy.dot(&self.w.t());
        let dw = x.t().dot(dy);
        let db = super::sum_rows(dy);
        (dx, Linear { w: dw, b: db })
    }
}

impl<F: Scalar> Params<F> for Linear<F> {
    fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.dim()),
            b: Array1::zeros(self.b.dim()),
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        f("w", &[self.w.nrows(), self.w.ncols()], self.w.as_slice().unwrap());
        f("b", &[self.b.len()], self.b.as_slice().unwrap());
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [F])) {
        let shape = [self.w.nrows(), self.w.ncols()];
        f("w", &shape, self.w.as_slice_mut().unwrap());
        let blen = [self.b.len()];
        f("b", &blen, self.b.as_slice_mut().unwrap());
    }

    fn zip_mut(&mut self, other: &Self, f: &mut dyn FnMut(&[usize], &mut [F], &[F])) {
        let shape = [self.w.nrows(), self.w.ncols()];
        f(&shape, self.w.as_slice_mut().unwrap(), other.w.as_slice().unwrap());
        let blen = [self.b.len()];
        f(&blen, self.b.as_slice_mut().unwrap(), other.b.as_slice().unwrap());
    }
}
