//! Pre-norm transformer block: LayerNorm -> attention -> residual, then
//! LayerNorm -> MLP -> residual. The MLP has one GELU-activated hidden
//! layer.

use ndarray::Array2;
use rand::Rng;

use super::{LayerNorm, LayerNormCache, Linear, MhaCache, MultiHeadAttention, Params, Scalar};

/// Tanh approximation of the Gaussian error linear unit.
pub fn gelu<F: Scalar>(x: F) -> F {
    let c = F::from_f(0.797_884_560_802_865_4); // sqrt(2/pi)
    let k = F::from_f(0.044715);
    let half = F::from_f(0.5);
    half * x * (F::one() + (c * (x + k * x * x * x)).tanh())
}

pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::from_f(0.797_884_560_802_865_4);
    let k = F::from_f(0.044715);
    let half = F::from_f(0.5);
    let three = F::from_f(3.0);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + three * k * x * x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
}

pub struct MlpCache<F> {
    x: Array2<F>,
    pre_act: Array2<F>,
    hidden: Array2<F>,
}

impl<F: Scalar> Mlp<F> {
    pub fn new(dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            fc1: Linear::new(dim, hidden, rng),
            fc2: Linear::new(hidden, dim, rng),
        }
    }

    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, MlpCache<F>) {
        let pre_act = self.fc1.forward(x);
        let hidden = pre_act.mapv(gelu);
        let y = self.fc2.forward(&hidden);
        (
            y,
            MlpCache {
                x: x.clone(),
                pre_act,
                hidden,
            },
        )
    }

    pub fn backward(&self, cache: &MlpCache<F>, dy: &Array2<F>) -> (Array2<F>, Mlp<F>) {
        let (dhidden, dfc2) = self.fc2.backward(&cache.hidden, dy);
        let dpre = dhidden * cache.pre_act.mapv(gelu_grad);
        let (dx, dfc1) = self.fc1.backward(&cache.x, &dpre);
        (dx, Mlp { fc1: dfc1, fc2: dfc2 })
    }
}

impl<F: Scalar> Params<F> for Mlp<F> {
    fn zeros_like(&self) -> Self {
        Self {
            fc1: self.fc1.zeros_like(),
            fc2: self.fc2.zeros_like(),
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        self.fc1.visit(&mut |n, s, d| f(&format!("fc1.{n}"), s, d));
        self.fc2.visit(&mut |n, s, d| f(&format!("fc2.{n}"), s, d));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [F])) {
        self.fc1.visit_mut(&mut |n, s, d| f(&format!("fc1.{n}"), s, d));
        self.fc2.visit_mut(&mut |n, s, d| f(&format!("fc2.{n}"), s, d));
    }

    fn zip_mut(&mut self, other: &Self, f: &mut dyn FnMut(&[usize], &mut [F], &[F])) {
        self.fc1.zip_mut(&other.fc1, f);
        self.fc2.zip_mut(&other.fc2, f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock<F> {
    pub ln1: LayerNorm<F>,
    pub attn: MultiHeadAttention<F>,
    pub ln2: LayerNorm<F>,
    pub mlp: Mlp<F>,
}

pub struct BlockCache<F> {
    ln1: LayerNormCache<F>,
    attn: MhaCache<F>,
    ln2: LayerNormCache<F>,
    mlp: MlpCache<F>,
}

impl<F: Scalar> TransformerBlock<F> {
    pub fn new(dim: usize, n_heads: usize, mlp_ratio: f64, rng: &mut impl Rng) -> Self {
        let hidden = ((dim as f64) * mlp_ratio).round() as usize;
        Self {
            ln1: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(dim, n_heads, rng),
            ln2: LayerNorm::new(dim),
            mlp: Mlp::new(dim, hidden.max(1), rng),
        }
    }

    pub fn zeros(dim: usize, n_heads: usize, mlp_ratio: f64) -> Self {
        let hidden = (((dim as f64) * mlp_ratio).round() as usize).max(1);
        Self {
            ln1: LayerNorm::new(dim),
            attn: MultiHeadAttention::zeros(dim, n_heads),
            ln2: LayerNorm::new(dim),
            mlp: Mlp {
                fc1: Linear::zeros(dim, hidden),
                fc2: Linear::zeros(hidden, dim),
            },
        }
    }

    pub fn forward(&self, x: &Array2<F>, batch: usize, seq: usize) -> (Array2<F>, BlockCache<F>) {
        let (a, ln1c) = self.ln1.forward(x);
        let (sa, attnc) = self.attn.forward(&a, batch, seq);
        let h = x + &sa;
        let (b, ln2c) = self.ln2.forward(&h);
        let (mm, mlpc) = self.mlp.forward(&b);
        let y = h + mm;
        (
            y,
            BlockCache {
                ln1: ln1c,
                attn: attnc,
                ln2: ln2c,
                mlp: mlpc,
            },
        )
    }

    pub fn backward(&self, cache: &BlockCache<F>, dy: &Array2<F>) -> (Array2<F>, TransformerBlock<F>) {
        let (db, dmlp) = self.mlp.backward(&cache.mlp, dy);
        let (dh_ln, dln2) = self.ln2.backward(&cache.ln2, &db);
        let dh = dy + &dh_ln;
        let (da, dattn) = self.attn.backward(&cache.attn, &dh);
        let (dx_ln, dln1) = self.ln1.backward(&cache.ln1, &da);
        let dx = dh + dx_ln;
        (
            dx,
            TransformerBlock {
                ln1: dln1,
                attn: dattn,
                ln2: dln2,
                mlp: dmlp,
            },
        )
    }
}

impl<F: Scalar> Params<F> for TransformerBlock<F> {
    fn zeros_like(&self) -> Self {
        Self {
            ln1: self.ln1.zeros_like(),
            attn: self.attn.zeros_like(),
            ln2: self.ln2.zeros_like(),
            mlp: self.mlp.zeros_like(),
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        self.ln1.visit(&mut |n, s, d| f(&format!("ln1.{n}"), s, d));
        self.attn.visit(&mut |n, s, d| f(&format!("attn.{n}"), s, d));
        self.ln2.visit(&mut |n, s, d| f(&format!("ln2.{n}"), s, d));
        self.mlp.visit(&mut |n, s, d| f(&format!("mlp.{n}"), s, d));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [F])) {
        self.ln1.visit_mut(&mut |n, s, d| f(&format!("ln1.{n}"), s, d));
        self.attn.visit_mut(&mut |n, s, d| f(&format!("attn.{n}"), s, d));
        self.ln2.visit_mut(&mut |n, s, d| f(&format!("ln2.{n}"), s, d));
        self.mlp.visit_mut(&mut |n, s, d| f(&format!("mlp.{n}"), s, d));
    }

    fn zip_mut(&mut self, other: &Self, f: &mut dyn FnMut(&[usize], &mut [F], &[F])) {
        self.ln1.zip_mut(&other.ln1, f);
        self.attn.zip_mut(&other.attn, f);
        self.ln2.zip_mut(&other.ln2, f);
        self.mlp.zip_mut(&other.mlp, f);
    }
}
