//! Layer normalization over the feature axis.

use ndarray::{Array1, Array2, Axis};

use super::{Params, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub eps: F,
}

pub struct LayerNormCache<F> {
    /// Normalized activations before the affine part.
    pub xhat: Array2<F>,
    pub inv_std: Array1<F>,
}

impl<F: Scalar> LayerNorm<F> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            eps: F::from_f(1e-6),
        }
    }

    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, LayerNormCache<F>) {
        let n = x.ncols();
        let nf = F::from_f(n as f64);
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, inv) in xhat.axis_iter_mut(Axis(0)).zip(inv_std.iter_mut()) {
            let mean = row.sum() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
            let i = F::one() / (var + self.eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * i);
            *inv = i;
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache<F>, dy: &Array2<F>) -> (Array2<F>, LayerNorm<F>) {
        let n = cache.xhat.ncols();
        let nf = F::from_f(n as f64);
        let dgamma = super::sum_rows(&(dy * &cache.xhat));
        let dbeta = super::sum_rows(dy);

        let dxhat = dy * &self.gamma;
        let mut dx = Array2::zeros(dy.dim());
        for (r, inv) in cache.inv_std.iter().enumerate() {
            let dxh = dxhat.row(r);
            let xh = cache.xhat.row(r);
            let sum_dxh = dxh.sum();
            let sum_dxh_xh = dxh.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<F>();
            for c in 0..n {
                dx[[r, c]] = *inv / nf * (nf * dxh[c] - sum_dxh - xh[c] * sum_dxh_xh);
            }
        }
        (
            dx,
            LayerNorm {
                gamma: dgamma,
                beta: dbeta,
                eps: F::zero(),
            },
        )
    }
}

impl<F: Scalar> Params<F> for LayerNorm<F> {
    fn zeros_like(&self) -> Self {
        Self {
            gamma: Array1::zeros(self.gamma.len()),
            beta: Array1::zeros(self.beta.len()),
            eps: F::zero(),
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        f("gamma", &[self.gamma.len()], self.gamma.as_slice().unwrap());
        f("beta", &[self.beta.len()], self.beta.as_slice().unwrap());
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [F])) {
        let g = [self.gamma.len()];
        f("gamma", &g, self.gamma.as_slice_mut().unwrap());
        let b = [self.beta.len()];
        f("beta", &b, self.beta.as_slice_mut().unwrap());
    }

    fn zip_mut(&mut self, other: &Self, f: &mut dyn FnMut(&[usize], &mut [F], &[F])) {
        let g = [self.gamma.len()];
        f(&g, self.gamma.as_slice_mut().unwrap(), other.gamma.as_slice().unwrap());
        let b = [self.beta.len()];
        f(&b, self.beta.as_slice_mut().unwrap(), other.beta.as_slice().unwrap());
    }
}
