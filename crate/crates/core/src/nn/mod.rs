//! Minimal transformer building blocks with explicit forward/backward
//! passes.
//!
//! Everything is generic over `f32`/`f64`: training runs in `f32`, while
//! gradient-check tests instantiate `f64` so central differences are not
//! drowned in rounding noise. No autodiff framework is involved; each layer
//! caches what its backward pass needs and returns its gradients as a value
//! of its own parameter type.

mod attention;
mod block;
mod linear;
mod norm;
mod optim;
mod pos;

pub use attention::{MhaCache, MultiHeadAttention};
pub use block::{gelu, gelu_grad, BlockCache, Mlp, MlpCache, TransformerBlock};
pub use linear::Linear;
pub use norm::{LayerNorm, LayerNormCache};
pub use optim::{step_decay_lr, warmup_cosine_lr, AdamW, Sgd};
pub use pos::sincos_2d;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Element type of the network: `f32` for training, `f64` for numerical
/// test harnesses.
pub trait Scalar: ndarray::NdFloat + num_traits::FromPrimitive + std::iter::Sum {
    fn from_f(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("finite literal")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// A tree of named parameter tensors. Gradients reuse the same type, so a
/// model's gradient is just a second instance with identical shapes; the
/// visit order is fixed and doubles as the serialization order.
pub trait Params<F: Scalar>: Sized {
    fn zeros_like(&self) -> Self;

    /// Visit `(name, shape, data)` for every tensor, depth-first in
    /// declaration order.
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[F]));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [F]));

    /// Walk two instances of the same structure in lockstep.
    fn zip_mut(&mut self, other: &Self, f: &mut dyn FnMut(&[usize], &mut [F], &[F]));

    /// Element-wise `self += other`, used for gradient accumulation.
    fn accumulate(&mut self, other: &Self) {
        self.zip_mut(other, &mut |_, a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + *y;
            }
        });
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, d| n += d.len());
        n
    }
}

/// Truncated normal init: N(0, std) resampled until within two standard
/// deviations.
pub fn trunc_normal<F: Scalar>(rng: &mut impl Rng, std: f64) -> F {
    let dist = Normal::new(0.0, std).expect("valid std");
    loop {
        let x = dist.sample(rng);
        if x.abs() <= 2.0 * std {
            return F::from_f(x);
        }
    }
}

pub fn trunc_normal_array2<F: Scalar>(rng: &mut impl Rng, shape: (usize, usize), std: f64) -> Array2<F> {
    Array2::from_shape_simple_fn(shape, || trunc_normal(rng, std))
}

/// Inverted-dropout mask: entries are `0` or `1/(1-rate)` so the expected
/// activation is unchanged.
pub fn dropout_mask<F: Scalar>(rng: &mut impl Rng, shape: (usize, usize), rate: f64) -> Array2<F> {
    let keep = 1.0 - rate;
    if keep <= 0.0 {
        return Array2::zeros(shape);
    }
    let inv = F::from_f(1.0 / keep);
    Array2::from_shape_simple_fn(shape, || {
        if rng.gen::<f64>() < keep {
            inv
        } else {
            F::zero()
        }
    })
}

pub(crate) fn sum_rows<F: Scalar>(x: &Array2<F>) -> Array1<F> {
    x.sum_axis(ndarray::Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trunc_normal_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let v: f64 = trunc_normal(&mut rng, 0.02);
            assert!(v.abs() <= 0.04);
        }
    }

    #[test]
    fn dropout_mask_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m: Array2<f32> = dropout_mask(&mut rng, (50, 40), 0.5);
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = m.iter().filter(|&&v| v != 0.0).count();
        assert!((800..1200).contains(&kept), "kept {kept}");
        let all: Array2<f32> = dropout_mask(&mut rng, (4, 4), 0.0);
        assert!(all.iter().all(|&v| v == 1.0));
    }
}
